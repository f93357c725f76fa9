"""Global rigid registration of localized patches through a semidefinite relaxation.

Unknowns are the free point positions and one translation per patch (the
columns of ``Z``) plus one orthogonal transform per patch and, when anchors
are used, a slack transform for the anchor frame (the blocks of ``O``).
Eliminating ``Z`` leaves ``min Trace(C O^T O)`` over orthogonal blocks, which
is relaxed to ``min Trace(C G)`` over ``G >= 0`` with identity diagonal blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .patchloc import LocalizedPatch

ANCHORED = "anchored"
ANCHOR_FREE = "anchor_free"
RANK_D_TIGHT = "rank_d_tight"
ROUNDED = "rounded"

TIGHTNESS_RATIO = 1e-6
CERTIFICATE_TOL = 1e-6
GAP_STOP = 1e-9
NEAR_TIGHT_RATIO = 1e-2  # try snapping to rank d only below this eigenvalue ratio


class RegistrationError(RuntimeError):
    pass


class OrphanSensorError(RegistrationError):
    def __init__(self, orphans):
        self.orphans = list(orphans)
        super().__init__(f"{len(self.orphans)} sensors lie in no localized patch: {self.orphans[:20]}")


@dataclass(frozen=True, eq=False)
class RegistrationProblem:
    dimension: int
    lam: float
    mode: str
    free_ids: np.ndarray  # global vertex ids of the point columns of Z, sorted
    patch_ids: tuple[int, ...]  # LocalizedPatch.patch_id for each used patch
    J: sp.csr_matrix
    B: np.ndarray
    D: np.ndarray
    # raw terms, kept for direct evaluation of the loss
    point_col: np.ndarray  # (T,) column of the point in Z
    point_patch: np.ndarray  # (T,) patch index
    point_local: np.ndarray  # (T, d)
    anchor_id: np.ndarray  # (A,)
    anchor_patch: np.ndarray  # (A,)
    anchor_global: np.ndarray  # (A, d) known position
    anchor_local: np.ndarray  # (A, d) position in the patch frame

    @property
    def n_points(self) -> int:
        return len(self.free_ids)

    @property
    def n_patches(self) -> int:
        return len(self.patch_ids)

    @property
    def n_blocks(self) -> int:
        return self.n_patches + (1 if self.mode == ANCHORED else 0)

    @property
    def patch_anchor_counts(self) -> np.ndarray:
        return np.bincount(self.anchor_patch, minlength=self.n_patches)


@dataclass(frozen=True, eq=False)
class ReducedProblem:
    C: np.ndarray
    BJinv: np.ndarray  # B J^{-1} (or B J^+ without anchors)
    solve: object  # callable: rhs (N+M, k) -> J^{-1} rhs


@dataclass
class GramSolution:
    G_star: np.ndarray
    objective: float
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, same order
    certificate: dict
    factor: np.ndarray  # low-rank factor Y with G = Y^T Y
    W: np.ndarray | None = None
    O_star: np.ndarray | None = None  # (n_blocks, d, d)
    Z_star: np.ndarray | None = None  # (d, n_points + n_patches)

    def tightness(self, d: int) -> str:
        return RANK_D_TIGHT if self.rank_ratio(d) <= TIGHTNESS_RATIO else ROUNDED

    def rank_ratio(self, d: int) -> float:
        ev = self.eigenvalues
        if len(ev) <= d:
            return 0.0
        return float(max(ev[d], 0.0) / ev[d - 1])


# -- assembly ----------------------------------------------------------------


def assemble(
    localized: list[LocalizedPatch],
    anchors: dict[int, np.ndarray] | None,
    lam: float = 2.0,
    mode: str = ANCHORED,
    n_sensors: int | None = None,
    pinned_anchor_frames: bool = False,
) -> RegistrationProblem:
    """Build J, B and D from the localized patches.

    Anchor terms are weighted by ``lam``. Each anchor term asks the patch
    transform to carry the anchor's patch-frame coordinates onto its known
    position in the slack frame; with ``pinned_anchor_frames`` the known
    position is used as the patch-frame coordinate too, which is the right
    model only for localizers that pin anchors.

    Sensors ``0..n_sensors-1`` that lie in no usable patch raise
    :class:`OrphanSensorError`.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    if mode not in (ANCHORED, ANCHOR_FREE):
        raise ValueError(f"unknown mode {mode!r}")
    used = [p for p in localized if p.ok]
    if not used:
        raise RegistrationError("no localized patches")
    anchors = {} if (mode == ANCHOR_FREE or anchors is None) else {int(k): np.asarray(v, float) for k, v in anchors.items()}
    d = used[0].coordinates.shape[1]

    members = sorted({v for p in used for v in p.vertex_ids})
    free_ids = np.array([v for v in members if v not in anchors], dtype=np.int64)
    if n_sensors is not None:
        present = np.zeros(n_sensors, dtype=bool)
        present[free_ids[free_ids < n_sensors]] = True
        if not present.all():
            raise OrphanSensorError(np.flatnonzero(~present).tolist())
    column = {int(v): c for c, v in enumerate(free_ids)}

    p_col, p_patch, p_loc = [], [], []
    a_id, a_patch, a_glob, a_loc = [], [], [], []
    for i, patch in enumerate(used):
        for v, x in zip(patch.vertex_ids, patch.coordinates):
            if v in anchors:
                a_id.append(v)
                a_patch.append(i)
                a_glob.append(anchors[v])
                a_loc.append(anchors[v] if pinned_anchor_frames else x)
            else:
                p_col.append(column[v])
                p_patch.append(i)
                p_loc.append(x)
    p_col = np.array(p_col, dtype=np.int64)
    p_patch = np.array(p_patch, dtype=np.int64)
    p_loc = np.array(p_loc, dtype=float).reshape(-1, d)
    a_id = np.array(a_id, dtype=np.int64)
    a_patch = np.array(a_patch, dtype=np.int64)
    a_glob = np.array(a_glob, dtype=float).reshape(-1, d)
    a_loc = np.array(a_loc, dtype=float).reshape(-1, d)

    F, M = len(free_ids), len(used)
    nb = M + (1 if mode == ANCHORED else 0)
    tcol = F + p_patch

    # J = sum e e^T + lam * sum delta delta^T, with e = delta_point - delta_translation
    rows = np.r_[p_col, tcol, p_col, tcol, F + a_patch]
    cols = np.r_[p_col, tcol, tcol, p_col, F + a_patch]
    vals = np.r_[np.ones(len(p_col)), np.ones(len(p_col)), -np.ones(len(p_col)), -np.ones(len(p_col)), np.full(len(a_patch), lam)]
    J = sp.coo_matrix((vals, (rows, cols)), shape=(F + M, F + M)).tocsr()

    B = np.zeros((nb * d, F + M))
    D = np.zeros((nb * d, nb * d))
    for i in range(M):
        blk = slice(i * d, (i + 1) * d)
        sel = p_patch == i
        x = p_loc[sel]
        np.add.at(B[blk].T, p_col[sel], x)  # B[blk, col] += x
        B[blk, F + i] -= x.sum(axis=0)
        D[blk, blk] += x.T @ x
    if len(a_patch):
        slack = slice(M * d, (M + 1) * d)
        for i, a, xl in zip(a_patch, a_glob, a_loc):
            blk = slice(i * d, (i + 1) * d)
            u = np.zeros(nb * d)
            u[slack] = a
            u[blk] -= xl
            B[:, F + i] += lam * u
            D += lam * np.outer(u, u)

    return RegistrationProblem(
        dimension=d,
        lam=float(lam),
        mode=mode,
        free_ids=free_ids,
        patch_ids=tuple(p.patch_id for p in used),
        J=J,
        B=B,
        D=D,
        point_col=p_col,
        point_patch=p_patch,
        point_local=p_loc,
        anchor_id=a_id,
        anchor_patch=a_patch,
        anchor_global=a_glob,
        anchor_local=a_loc,
    )


def split_transforms(problem: RegistrationProblem, O: np.ndarray) -> list[np.ndarray]:
    d = problem.dimension
    return [O[:, i * d:(i + 1) * d] for i in range(problem.n_blocks)]


def loss_direct(problem: RegistrationProblem, Z: np.ndarray, O: np.ndarray) -> float:
    """The registration loss summed term by term from its definition."""
    F = problem.n_points
    blocks = split_transforms(problem, O)
    total = 0.0
    for c, i, x in zip(problem.point_col, problem.point_patch, problem.point_local):
        r = Z[:, c] - blocks[i] @ x - Z[:, F + i]
        total += r @ r
    for i, a, xl in zip(problem.anchor_patch, problem.anchor_global, problem.anchor_local):
        r = blocks[-1] @ a - blocks[i] @ xl - Z[:, F + i]
        total += problem.lam * (r @ r)
    return float(total)


def loss_trace(problem: RegistrationProblem, Z: np.ndarray, O: np.ndarray) -> float:
    """Same loss through the quadratic form ``[Z O] [[J, -B^T], [-B, D]] [Z O]^T``."""
    return float(
        np.trace(Z @ (problem.J @ Z.T)) - 2.0 * np.trace(O @ problem.B @ Z.T) + np.trace(O @ problem.D @ O.T)
    )


# -- elimination of Z --------------------------------------------------------


def _component_labels(problem: RegistrationProblem) -> tuple[int, np.ndarray]:
    return connected_components(problem.J, directed=False)


def reduce(problem: RegistrationProblem) -> ReducedProblem:
    """Schur-complement the free variables out: ``C = D - B J^{-1} B^T``."""
    J = problem.J.tocsc()
    n_comp, labels = _component_labels(problem)
    F = problem.n_points
    if problem.mode == ANCHORED:
        anchored_patches = np.flatnonzero(problem.patch_anchor_counts > 0)
        good = set(labels[F + anchored_patches].tolist())
        if len(good) < n_comp:
            raise RegistrationError("registration graph disconnected or anchorless")
        lu = splu(J)

        def solve(rhs):
            return lu.solve(np.asarray(rhs, dtype=float))

    else:
        if n_comp != 1:
            raise RegistrationError(f"patches not chained by overlaps ({n_comp} components)")
        # ground the last unknown; for right-hand sides orthogonal to the ones
        # vector this yields the pseudo-inverse solve after centering
        lu = splu(J[:-1, :-1].tocsc())

        def solve(rhs):
            rhs = np.asarray(rhs, dtype=float)
            rhs = rhs - rhs.mean(axis=0)
            out = np.zeros_like(rhs)
            out[:-1] = lu.solve(rhs[:-1])
            return out - out.mean(axis=0)

    BJinv = solve(problem.B.T).T
    C = problem.D - BJinv @ problem.B.T
    C = (C + C.T) / 2
    return ReducedProblem(C=C, BJinv=BJinv, solve=solve)


# -- the relaxation ----------------------------------------------------------


def _polar(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m, full_matrices=False)
    return u @ vt


def round_to_orthogonal(w: np.ndarray) -> np.ndarray:
    """Closest orthogonal matrix in Frobenius norm, ``U V^T`` from the SVD."""
    return _polar(w)


def _project_blocks(Y: np.ndarray, d: int) -> np.ndarray:
    Y = Y.copy()
    for s in range(0, Y.shape[1], d):
        Y[:, s:s + d] = _polar(Y[:, s:s + d])
    return Y


def _riemannian_gradient(C: np.ndarray, Y: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Stiefel-product gradient of ``Trace(C Y^T Y)`` and the block multipliers."""
    YC = Y @ C
    rgrad = np.empty_like(Y)
    lams = []
    for s in range(0, Y.shape[1], d):
        yi, gi = Y[:, s:s + d], YC[:, s:s + d]
        lam_i = yi.T @ gi
        lam_i = (lam_i + lam_i.T) / 2
        lams.append(lam_i)
        rgrad[:, s:s + d] = 2.0 * (gi - yi @ lam_i)
    return rgrad, np.array(lams)


def block_coordinate_descent(
    C: np.ndarray,
    Y: np.ndarray,
    d: int,
    max_sweeps: int = 5000,
    tol: float = 1e-11,
    gap_tol: float | None = None,
) -> tuple[np.ndarray, int]:
    """Cyclic exact minimization over one block of ``Y`` at a time.

    With the others fixed, block ``i`` minimizes ``<S_i, Y_i>`` for
    ``S_i = sum_{j != i} Y_j C_ji``, solved by ``Y_i = -U V^T`` from the
    SVD of ``S_i``. Stops when the Riemannian gradient norm drops below
    ``tol * (1 + ||C||_F)``, or, if ``gap_tol`` is set, once the relative
    duality gap of :func:`certify` is below it.
    """
    Y = Y.copy()
    nb = C.shape[0] // d
    scale = 1.0 + np.linalg.norm(C)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        for i in range(nb):
            blk = slice(i * d, (i + 1) * d)
            s = Y @ C[:, blk] - Y[:, blk] @ C[blk, blk]
            if np.linalg.norm(s) > 0:
                Y[:, blk] = -_polar(s)
        if sweeps % 5 == 0 or sweeps == max_sweeps:
            rgrad, _ = _riemannian_gradient(C, Y, d)
            if np.linalg.norm(rgrad) <= tol * scale:
                break
        if gap_tol is not None and sweeps % 50 == 0 and certify(C, Y, d)["relative_gap"] <= gap_tol:
            break
    return Y, sweeps


def certify(C: np.ndarray, Y: np.ndarray, d: int) -> dict:
    """Dual certificate for ``G = Y^T Y``.

    The multipliers ``Lambda_i`` from first-order stationarity give a dual
    slack ``S = C - blkdiag(Lambda)``. Shifting by ``min(0, lambda_min(S))``
    makes the dual feasible and yields a lower bound on the optimum, valid
    whether or not ``Y`` is exactly stationary.
    """
    rgrad, lams = _riemannian_gradient(C, Y, d)
    n = C.shape[0]
    S = C.copy()
    for i, lam_i in enumerate(lams):
        S[i * d:(i + 1) * d, i * d:(i + 1) * d] -= lam_i
    evals, evecs = np.linalg.eigh((S + S.T) / 2)
    lmin = float(evals[0])
    G = Y.T @ Y
    primal = float(np.sum(C * G))
    dual = float(np.trace(lams, axis1=1, axis2=2).sum() + n * min(0.0, lmin))
    scale = max(1.0, float(np.linalg.norm(C, 2)))
    residuals = {
        "dual_infeasibility": max(0.0, -lmin) / scale,
        "complementarity": abs(float(np.sum(S * G))) / scale,
        "relative_gap": max(0.0, primal - dual) / max(1.0, abs(primal)),
    }
    return {
        "primal": primal,
        "dual_bound": dual,
        "gap": primal - dual,
        "min_dual_slack_eigenvalue": lmin,
        "stationarity": float(np.linalg.norm(rgrad)) / scale,
        "escape_direction": evecs[:, 0],
        **residuals,
        "certified": max(residuals.values()) <= CERTIFICATE_TOL,
    }


def _random_factor(rng, p: int, n: int, d: int) -> np.ndarray:
    return _project_blocks(rng.standard_normal((p, n)), d)


def _spectral_factor(C: np.ndarray, p: int, d: int) -> np.ndarray:
    _, vecs = np.linalg.eigh(C)
    Y = vecs[:, :p].T * np.sqrt(C.shape[0] / d)
    return _project_blocks(Y + 1e-9 * np.eye(p, C.shape[0]), d)


def _escape(C, Y, d, cert, max_sweeps, tol):
    """Grow the factor by one row along the most negative dual-slack direction."""
    v = cert["escape_direction"]
    Y = np.vstack([Y, 1e-2 * v[None, :]])
    Y = _project_blocks(Y, d)
    return block_coordinate_descent(C, Y, d, max_sweeps, tol, gap_tol=GAP_STOP)[0]


def solve_sdp(
    C: np.ndarray,
    d: int,
    rank: int | None = None,
    restarts: int = 5,
    seed: int = 0,
    max_sweeps: int = 5000,
    tol: float = 1e-11,
    max_escapes: int = 3,
) -> GramSolution:
    """Solve ``min Trace(C G)`` s.t. ``G >= 0``, ``G_ii = I_d`` by a low-rank factorization.

    Restart 0 starts from the bottom eigenvectors of ``C``; the rest are random.
    A certified restart is globally optimal and ends the search; otherwise the
    best factor (lowest objective, ties to the lower restart index) gets rank
    escapes while its dual certificate fails. Finally the rank-``d``
    rounding of the result is polished and substituted if it certifies with
    no worse objective, which makes a tight relaxation report an exactly
    rank-``d`` solution.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] % d:
        raise ValueError("C must be square with size a multiple of d")
    if not np.allclose(C, C.T, atol=1e-10 * max(1.0, np.abs(C).max())):
        raise ValueError("C must be symmetric")
    C = (C + C.T) / 2
    n = C.shape[0]
    p = min(rank or d + 2, n)
    p = max(p, d)
    rng = np.random.default_rng(seed)

    best = None
    for r in range(max(1, restarts)):
        Y0 = _spectral_factor(C, p, d) if r == 0 else _random_factor(rng, p, n, d)
        Y, _ = block_coordinate_descent(C, Y0, d, max_sweeps, tol, gap_tol=GAP_STOP)
        cert = certify(C, Y, d)
        if best is None or cert["primal"] < best[0] - 1e-12 * max(1.0, abs(best[0])):
            best = (cert["primal"], Y, cert)
        if cert["certified"]:
            break  # globally optimal; further restarts cannot improve
    _, Y, cert = best
    for _ in range(max_escapes):
        if cert["certified"] or cert["dual_infeasibility"] <= CERTIFICATE_TOL:
            break
        Y = _escape(C, Y, d, cert, max_sweeps, tol)
        cert = certify(C, Y, d)

    # rank-d polish from the rounded factor
    G = Y.T @ Y
    vals, vecs = np.linalg.eigh(G)
    W = (vecs[:, ::-1][:, :d] * np.sqrt(np.clip(vals[::-1][:d], 0, None))).T
    top = vals[::-1]
    if top[d - 1] > 1e-12 and (len(top) == d or top[d] / top[d - 1] < NEAR_TIGHT_RATIO):
        O = _project_blocks(W, d)
        O, _ = block_coordinate_descent(C, O, d, max_sweeps, tol)
        cert_d = certify(C, O, d)
        obj_d = cert_d["primal"]
        if cert_d["certified"] and obj_d <= cert["primal"] + CERTIFICATE_TOL * max(1.0, abs(cert["primal"])):
            Y, cert = O, cert_d

    G = Y.T @ Y
    G = (G + G.T) / 2
    vals, vecs = np.linalg.eigh(G)
    order = np.argsort(vals)[::-1]
    cert.pop("escape_direction", None)
    return GramSolution(
        G_star=G,
        objective=float(np.sum(C * G)),
        eigenvalues=vals[order],
        eigenvectors=vecs[:, order],
        certificate=cert,
        factor=Y,
    )


def round_and_recover(problem: RegistrationProblem, reduced: ReducedProblem, gram: GramSolution) -> GramSolution:
    """Round the top-``d`` Gram factor blockwise to orthogonal matrices and recover ``Z``.

    In anchored mode every transform is left-multiplied by the transpose of
    the slack block so that coordinates come out in the anchors' own frame.
    """
    d = problem.dimension
    vals = gram.eigenvalues[:d]
    if vals[-1] <= 1e-12:
        raise RegistrationError("degenerate Gram factor")
    W = (gram.eigenvectors[:, :d] * np.sqrt(vals)).T
    blocks = [round_to_orthogonal(W[:, s:s + d]) for s in range(0, W.shape[1], d)]
    if problem.mode == ANCHORED:
        gauge = blocks[-1].T
        blocks = [gauge @ b for b in blocks]
    O = np.hstack(blocks)
    gram.W = W
    gram.O_star = np.array(blocks)
    gram.Z_star = O @ reduced.BJinv
    return gram


@dataclass
class RegistrationResult:
    problem: RegistrationProblem
    reduced: ReducedProblem
    gram: GramSolution
    positions: dict[int, np.ndarray]  # free vertex id -> global position
    translations: np.ndarray  # (M, d)
    frame_defined_up_to_rigid_motion: bool
    extra: dict = field(default_factory=dict)

    @property
    def tightness(self) -> str:
        return self.gram.tightness(self.problem.dimension)

    def position_array(self, ids) -> np.ndarray:
        return np.array([self.positions[int(v)] for v in ids])

    def report(self) -> dict:
        g = self.gram
        return {
            "mode": self.problem.mode,
            "lambda": self.problem.lam,
            "n_patches": self.problem.n_patches,
            "objective": g.objective,
            "tightness": self.tightness,
            "rank_ratio": g.rank_ratio(self.problem.dimension),
            "spectrum": g.eigenvalues[: 2 * self.problem.dimension + 2].tolist(),
            "certificate": {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v)) for k, v in g.certificate.items()},
            "frame_defined_up_to_rigid_motion": self.frame_defined_up_to_rigid_motion,
            "transforms": g.O_star.tolist(),
            "translations": self.translations.tolist(),
        }


def register(
    localized: list[LocalizedPatch],
    anchors: dict[int, np.ndarray] | None = None,
    lam: float = 2.0,
    mode: str = ANCHORED,
    n_sensors: int | None = None,
    sdp_restarts: int = 5,
    seed: int = 0,
    pinned_anchor_frames: bool = False,
) -> RegistrationResult:
    problem = assemble(localized, anchors, lam, mode, n_sensors, pinned_anchor_frames)
    if mode == ANCHORED and len(problem.anchor_id) == 0:
        raise RegistrationError("registration graph disconnected or anchorless")
    reduced = reduce(problem)
    gram = solve_sdp(reduced.C, problem.dimension, restarts=sdp_restarts, seed=seed)
    gram = round_and_recover(problem, reduced, gram)
    F = problem.n_points
    Z = gram.Z_star
    positions = {int(v): Z[:, c] for c, v in enumerate(problem.free_ids)}
    return RegistrationResult(
        problem=problem,
        reduced=reduced,
        gram=gram,
        positions=positions,
        translations=Z[:, F:].T,
        frame_defined_up_to_rigid_motion=(mode == ANCHOR_FREE),
    )
