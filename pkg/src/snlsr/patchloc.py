"""Independent localization of each patch in its own coordinate frame."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra

from .partition import Patch
from .refine import RefinementConfig, edge_stress, refine_positions

LOCALIZED = "localized"
FALLBACK = "fallback_localized"
FAILED = "failed"

WORKERS_ENV = "SNLSR_WORKERS"


@dataclass(frozen=True)
class MajorizationConfig:
    max_iterations: int = 500
    relative_tolerance: float = 1e-10
    polish: RefinementConfig = RefinementConfig(max_iterations=200, gradient_tolerance=1e-9)


@dataclass(frozen=True, eq=False)
class LocalizedPatch:
    patch_id: int
    vertex_ids: tuple[int, ...]
    coordinates: np.ndarray | None  # (len(vertex_ids), d); None when failed
    status: str
    residual_stress: float

    @property
    def ok(self) -> bool:
        return self.status != FAILED

    def as_dict(self) -> dict[int, np.ndarray]:
        if self.coordinates is None:
            return {}
        return dict(zip(self.vertex_ids, self.coordinates))


def classical_mds(dist: np.ndarray, dimension: int) -> np.ndarray:
    n = len(dist)
    center = np.eye(n) - 1.0 / n
    gram = -0.5 * center @ (dist**2) @ center
    vals, vecs = np.linalg.eigh((gram + gram.T) / 2)
    top = np.argsort(vals)[::-1][:dimension]
    return vecs[:, top] * np.sqrt(np.clip(vals[top], 0.0, None))


def stress_majorization(
    init: np.ndarray,
    edges: np.ndarray,
    distances: np.ndarray,
    max_iterations: int = 500,
    relative_tolerance: float = 1e-10,
) -> tuple[np.ndarray, list[float], bool]:
    """Unit-weight SMACOF on the measured pairs only.

    Returns the final configuration, the stress after every Guttman transform
    (starting with the initial stress), and whether the tolerance was met.
    """
    x = np.array(init, dtype=float)
    n = len(x)
    i, j = edges[:, 0], edges[:, 1]
    lap = np.zeros((n, n))
    np.add.at(lap, (i, j), -1.0)
    np.add.at(lap, (j, i), -1.0)
    lap[np.diag_indices(n)] = -lap.sum(axis=1)
    ones = np.full((n, n), 1.0 / n)
    lap_pinv = np.linalg.inv(lap + ones) - ones

    trace = [edge_stress(x, edges, distances)]
    converged = False
    for _ in range(max_iterations):
        diff = x[i] - x[j]
        gap = np.linalg.norm(diff, axis=1)
        ratio = np.divide(distances, gap, out=np.zeros_like(gap), where=gap > 0)
        b = np.zeros((n, n))
        np.add.at(b, (i, j), -ratio)
        np.add.at(b, (j, i), -ratio)
        b[np.diag_indices(n)] = -b.sum(axis=1)
        x = lap_pinv @ (b @ x)
        s = edge_stress(x, edges, distances)
        prev = trace[-1]
        trace.append(s)
        if prev - s <= relative_tolerance * max(prev, 1e-300):
            converged = True
            break
    return x, trace, converged


def localize_patch(
    patch: Patch,
    dimension: int = 2,
    patch_id: int = 0,
    config: MajorizationConfig = MajorizationConfig(),
) -> LocalizedPatch:
    """Localize a patch from its induced distances alone (anchors are not pinned)."""
    n = len(patch)

    def failed():
        return LocalizedPatch(patch_id, patch.vertex_ids, None, FAILED, float("nan"))

    if n < dimension + 1:
        return failed()
    edges = patch.local_edges()
    dist = patch.induced_distances
    graph = sp.coo_matrix((dist, (edges[:, 0], edges[:, 1])), shape=(n, n)).tocsr()
    if connected_components(graph, directed=False)[0] > 1:
        return failed()

    completed = dijkstra(graph, directed=False)
    x0 = classical_mds(completed, dimension)
    x, _, converged = stress_majorization(x0, edges, dist, config.max_iterations, config.relative_tolerance)
    polished = refine_positions(x, edges, dist, config=config.polish)
    x = polished.positions
    residual = edge_stress(x, edges, dist)
    if not np.isfinite(residual):
        return failed()
    status = LOCALIZED if converged else FALLBACK
    return LocalizedPatch(patch_id, patch.vertex_ids, x, status, residual)


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV)
    return max(1, int(value)) if value else 1


def _localize_job(args):
    patch, dimension, patch_id, config = args
    return localize_patch(patch, dimension, patch_id, config)


def localize_all(
    patches: list[Patch],
    dimension: int = 2,
    workers: int | None = None,
    config: MajorizationConfig = MajorizationConfig(),
    localizer: Callable | None = None,
) -> list[LocalizedPatch]:
    """Localize every patch as an independent job; output order follows input order.

    ``localizer`` replaces :func:`localize_patch` (same call signature) when given.
    Raises ``RuntimeError`` only when every patch fails.
    """
    workers = default_workers() if workers is None else max(1, workers)
    jobs = [(p, dimension, i, config) for i, p in enumerate(patches)]
    if localizer is not None:
        results = [localizer(*job) for job in jobs]
    elif workers == 1 or len(jobs) <= 1:
        results = [_localize_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_localize_job, jobs))
    if results and not any(r.ok for r in results):
        raise RuntimeError("every patch failed to localize")
    return results


# -- debug dump: {"patches": [{"patch_id", "vertex_ids", "status",
#    "residual_stress", "coordinates"}, ...]}


def localized_to_dict(localized: list[LocalizedPatch]) -> dict:
    return {
        "patches": [
            {
                "patch_id": p.patch_id,
                "vertex_ids": list(p.vertex_ids),
                "status": p.status,
                "residual_stress": p.residual_stress,
                "coordinates": None if p.coordinates is None else p.coordinates.tolist(),
            }
            for p in localized
        ]
    }
