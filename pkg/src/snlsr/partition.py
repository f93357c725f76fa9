"""Recursive normalized-cut clustering and growth of clusters into overlapping patches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import LinearOperator, eigsh

from .netgen import NetworkInstance

DENSE_EIGEN_LIMIT = 200
EIGEN_TOL = 1e-8


class DisconnectedGraphError(ValueError):
    def __init__(self, components):
        self.components = components
        sizes = [len(c) for c in components]
        super().__init__(f"graph has {len(components)} connected components (sizes {sizes})")


@dataclass(frozen=True)
class Cluster:
    vertex_ids: tuple[int, ...]

    def __len__(self):
        return len(self.vertex_ids)


@dataclass(frozen=True, eq=False)
class Patch:
    vertex_ids: tuple[int, ...]  # sorted
    anchor_ids: tuple[int, ...]
    induced_edges: np.ndarray  # (E_i, 2) global vertex ids
    induced_distances: np.ndarray  # (E_i,)

    def __len__(self):
        return len(self.vertex_ids)

    @property
    def n_anchors(self) -> int:
        return len(self.anchor_ids)

    def local_edges(self) -> np.ndarray:
        """``induced_edges`` re-indexed into positions of ``vertex_ids``."""
        return np.searchsorted(np.asarray(self.vertex_ids), self.induced_edges)


def _as_csr(adjacency) -> sp.csr_matrix:
    a = sp.csr_matrix(adjacency, dtype=float)
    a.eliminate_zeros()
    return a


def components(adjacency) -> list[np.ndarray]:
    """Connected components, each sorted, ordered by smallest member."""
    a = _as_csr(adjacency)
    n_comp, labels = connected_components(a, directed=False)
    comps = [np.flatnonzero(labels == c) for c in range(n_comp)]
    return sorted(comps, key=lambda c: c[0])


def fiedler_vector(adjacency) -> np.ndarray:
    """Second generalized eigenvector of ``(D - A) y = mu D y`` (Shi-Malik relaxation)."""
    a = _as_csr(adjacency)
    n = a.shape[0]
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    # normalized affinity D^-1/2 A D^-1/2; its top eigenvector is sqrt(deg)
    s = sp.diags(inv_sqrt) @ a @ sp.diags(inv_sqrt)
    trivial = np.sqrt(deg) / np.linalg.norm(np.sqrt(deg))

    z = None
    if n >= DENSE_EIGEN_LIMIT:
        # spectrum of I + S lies in [0, 2]; deflate the trivial eigenvalue 2
        def matvec(x):
            x = np.ravel(x)
            return x + s @ x - 2.0 * trivial * (trivial @ x)

        op = LinearOperator((n, n), matvec=matvec, dtype=float)
        start = np.cos(np.arange(n) + 1.0)  # fixed start vector for reproducibility
        try:
            vals, vecs = eigsh(op, k=1, which="LA", tol=EIGEN_TOL, v0=start, maxiter=20 * n)
            z = vecs[:, 0]
            lap = z - s @ z
            mu = z @ lap
            if np.linalg.norm(lap - mu * z) > EIGEN_TOL * 10 or abs(z @ trivial) > 1e-6:
                z = None
        except Exception:  # ArpackNoConvergence and friends: use the dense route
            z = None
    if z is None:
        lap = np.eye(n) - s.toarray()
        _, vecs = np.linalg.eigh((lap + lap.T) / 2)
        z = vecs[:, 1]
    y = z * inv_sqrt
    # fix the sign so the output is reproducible
    if y[np.argmax(np.abs(y))] < 0:
        y = -y
    return y


def normalized_cut(adjacency, mask: np.ndarray) -> float:
    a = _as_csr(adjacency)
    deg = np.asarray(a.sum(axis=1)).ravel()
    mask = np.asarray(mask, dtype=bool)
    cut = a[mask][:, ~mask].sum()
    return float(cut / deg[mask].sum() + cut / deg[~mask].sum())


def spectral_bipartition(adjacency) -> tuple[np.ndarray, np.ndarray]:
    """Split a connected graph in two by a sweep over the sorted Fiedler vector.

    Returns two sorted index arrays, the one holding vertex 0 first. The split
    minimizes the normalized cut among the ``n - 1`` sweep candidates; near-ties
    go to the more balanced split, then to the lower threshold index.
    """
    a = _as_csr(adjacency)
    n = a.shape[0]
    if n < 2:
        raise ValueError("need at least two vertices to bipartition")
    comps = components(a)
    if len(comps) > 1:
        raise DisconnectedGraphError(comps)

    y = fiedler_vector(a)
    order = np.argsort(y, kind="stable")
    deg = np.asarray(a.sum(axis=1)).ravel()
    vol_total = deg.sum()
    position = np.empty(n, dtype=np.int64)
    position[order] = np.arange(n)

    # sweep: cut(S_t) for S_t = order[:t+1] updated incrementally
    cut = 0.0
    vol = 0.0
    best = None
    for t in range(n - 1):
        v = order[t]
        row = a.getrow(v)
        w_inside = row.data[position[row.indices] < t].sum()
        cut += deg[v] - 2.0 * w_inside
        vol += deg[v]
        ncut = cut / vol + cut / (vol_total - vol)
        imbalance = abs(2 * (t + 1) - n)
        key = (ncut, imbalance, t)
        if best is None:
            best = key
            continue
        if ncut < best[0] - 1e-12 * max(1.0, best[0]):
            best = key
        elif abs(ncut - best[0]) <= 1e-12 * max(1.0, best[0]) and imbalance < best[1]:
            best = key
    t = best[2]
    left = np.sort(order[: t + 1])
    right = np.sort(order[t + 1:])
    if left[0] > right[0]:
        left, right = right, left
    return left, right


def recursive_partition(adjacency, max_cluster_size: int = 30) -> list[Cluster]:
    """Split until every cluster has fewer than ``max_cluster_size`` vertices."""
    if max_cluster_size < 2:
        raise ValueError("max_cluster_size must be >= 2")
    a = _as_csr(adjacency)
    clusters: list[Cluster] = []

    def split(ids: np.ndarray):
        sub = a[ids][:, ids]
        comps = components(sub)
        if len(comps) > 1:
            for c in comps:
                split(ids[c])
            return
        if len(ids) < max_cluster_size:
            clusters.append(Cluster(tuple(int(v) for v in ids)))
            return
        left, right = spectral_bipartition(sub)
        split(ids[left])
        split(ids[right])

    split(np.arange(a.shape[0]))
    return clusters


def grow_patches(
    clusters: list[Cluster],
    instance: NetworkInstance,
    max_patch_size: int = 45,
) -> list[Patch]:
    """Grow each cluster by absorbing outside neighbors with the most edges into it."""
    a = instance.graph.adjacency()
    patches = []
    for cluster in clusters:
        members = np.array(cluster.vertex_ids, dtype=np.int64)
        if len(members) > max_patch_size:
            raise ValueError("cluster larger than max_patch_size")
        inside = np.zeros(a.shape[0], dtype=bool)
        inside[members] = True
        counts = np.asarray(a[members].sum(axis=0)).ravel()
        counts[inside] = 0
        candidates = np.flatnonzero(counts > 0)
        # rank: most edges into the cluster first, then lower vertex id
        ranked = candidates[np.lexsort((candidates, -counts[candidates]))]
        room = max_patch_size - len(members)
        vertex_ids = np.sort(np.r_[members, ranked[:room]])
        patches.append(make_patch(vertex_ids, instance))
    return patches


def make_patch(vertex_ids, instance: NetworkInstance) -> Patch:
    vertex_ids = np.unique(np.asarray(vertex_ids, dtype=np.int64))
    member = np.zeros(instance.config.n_vertices, dtype=bool)
    member[vertex_ids] = True
    edges = instance.graph.edges
    keep = member[edges[:, 0]] & member[edges[:, 1]]
    anchors = vertex_ids[vertex_ids >= instance.n_sensors]
    return Patch(
        vertex_ids=tuple(int(v) for v in vertex_ids),
        anchor_ids=tuple(int(v) for v in anchors),
        induced_edges=edges[keep],
        induced_distances=instance.measured[keep],
    )


@dataclass
class CoverageReport:
    membership: np.ndarray  # per-vertex patch count
    overlap_pairs: list[tuple[int, int, int]]  # (i, j, shared) with shared >= 1
    single_membership: np.ndarray  # vertex ids in exactly one patch
    under_overlap: list[tuple[int, int, int]]  # overlapping pairs sharing < d + 1
    uncovered: np.ndarray
    overlap_connected: bool


def coverage_report(patches: list[Patch], n_vertices: int | None = None, dimension: int = 2) -> CoverageReport:
    if n_vertices is None:
        n_vertices = 1 + max((max(p.vertex_ids) for p in patches if len(p)), default=-1)
    membership = np.zeros(n_vertices, dtype=np.int64)
    sets = [set(p.vertex_ids) for p in patches]
    for p in patches:
        membership[list(p.vertex_ids)] += 1
    pairs, weak = [], []
    m = len(patches)
    adj = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            shared = len(sets[i] & sets[j])
            if shared:
                pairs.append((i, j, shared))
                adj[i, j] = adj[j, i] = 1
                if shared < dimension + 1:
                    weak.append((i, j, shared))
    connected = m <= 1 or connected_components(sp.csr_matrix(adj), directed=False)[0] == 1
    return CoverageReport(
        membership=membership,
        overlap_pairs=pairs,
        single_membership=np.flatnonzero(membership == 1),
        under_overlap=weak,
        uncovered=np.flatnonzero(membership == 0),
        overlap_connected=bool(connected),
    )


def partition_instance(instance: NetworkInstance, max_cluster_size: int = 30, max_patch_size: int = 45) -> list[Patch]:
    clusters = recursive_partition(instance.graph.adjacency(), max_cluster_size)
    return grow_patches(clusters, instance, max_patch_size)


# -- serialization: {"patches": [{"vertex_ids": [...], "anchor_ids": [...],
#    "edges": [[k, l], ...], "distances": [...]}, ...]}


def patches_to_dict(patches: list[Patch]) -> dict:
    return {
        "patches": [
            {
                "vertex_ids": list(p.vertex_ids),
                "anchor_ids": list(p.anchor_ids),
                "edges": p.induced_edges.tolist(),
                "distances": p.induced_distances.tolist(),
            }
            for p in patches
        ]
    }


def patches_from_dict(data: dict) -> list[Patch]:
    return [
        Patch(
            vertex_ids=tuple(p["vertex_ids"]),
            anchor_ids=tuple(p["anchor_ids"]),
            induced_edges=np.array(p["edges"], dtype=np.int64).reshape(-1, 2),
            induced_distances=np.array(p["distances"], dtype=float),
        )
        for p in data["patches"]
    ]
