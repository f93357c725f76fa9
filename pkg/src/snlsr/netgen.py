"""Synthetic network generation, the distance-graph data model and instance I/O.

Vertices are numbered from 0: sensors are ``0..N-1`` and anchors ``N..N+K-1``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class NetworkConfig:
    n_sensors: int
    n_anchors: int | None = None  # None -> floor(N / 10)
    dimension: int = 2
    radio_range: float = 0.2
    noise_level: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_anchors is None:
            object.__setattr__(self, "n_anchors", self.n_sensors // 10)
        if self.n_sensors < 1:
            raise ValueError("n_sensors must be >= 1")
        if self.n_anchors < 0:
            raise ValueError("n_anchors must be >= 0")
        if self.dimension not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        if not self.radio_range > 0:
            raise ValueError("radio_range must be positive")
        if not self.noise_level >= 0:
            raise ValueError("noise_level must be nonnegative")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must fit in 64 unsigned bits")

    @property
    def n_vertices(self) -> int:
        return self.n_sensors + self.n_anchors


@dataclass(frozen=True, eq=False)
class DistanceGraph:
    """Undirected graph on sensors and anchors.

    ``edges`` holds canonical ``(min, max)`` pairs sorted lexicographically.
    Anchor-anchor pairs never appear: anchor positions are known outright.
    """

    n_vertices: int
    n_sensors: int
    edges: np.ndarray  # (E, 2) int

    @property
    def is_sensor_anchor(self) -> np.ndarray:
        return self.edges[:, 1] >= self.n_sensors

    @property
    def edges_ss(self) -> np.ndarray:
        return self.edges[~self.is_sensor_anchor]

    @property
    def edges_sa(self) -> np.ndarray:
        return self.edges[self.is_sensor_anchor]

    def adjacency(self):
        """Unit-weight sparse adjacency matrix (CSR)."""
        from scipy.sparse import coo_matrix

        n = self.n_vertices
        i, j = self.edges[:, 0], self.edges[:, 1]
        w = np.ones(2 * len(i))
        return coo_matrix((w, (np.r_[i, j], np.r_[j, i])), shape=(n, n)).tocsr()


@dataclass(frozen=True, eq=False)
class NetworkInstance:
    config: NetworkConfig
    true_positions: np.ndarray  # (N+K, d), sensors first
    graph: DistanceGraph
    measured: np.ndarray  # (E,), aligned with graph.edges

    @property
    def n_sensors(self) -> int:
        return self.config.n_sensors

    @property
    def anchor_ids(self) -> np.ndarray:
        return np.arange(self.config.n_sensors, self.config.n_vertices)

    @property
    def anchor_positions(self) -> np.ndarray:
        return self.true_positions[self.config.n_sensors:]

    def measured_distance(self, k: int, l: int) -> float:
        a, b = (k, l) if k < l else (l, k)
        edges = self.graph.edges
        lo = np.searchsorted(edges[:, 0], a, side="left")
        hi = np.searchsorted(edges[:, 0], a, side="right")
        pos = lo + np.searchsorted(edges[lo:hi, 1], b)
        if pos >= hi or edges[pos, 1] != b:
            raise KeyError((k, l))
        return float(self.measured[pos])

    def distance_map(self) -> dict[tuple[int, int], float]:
        return {(int(a), int(b)): float(v) for (a, b), v in zip(self.graph.edges, self.measured)}


def apply_noise(true_distance: float, eta: float, gaussian_draw: float) -> float:
    """Multiplicative noise model ``|1 + eta * g| * distance``."""
    return abs(1.0 + eta * gaussian_draw) * true_distance


def range_edges(positions: np.ndarray, n_sensors: int, radio_range: float) -> np.ndarray:
    """All sensor-sensor and sensor-anchor pairs within ``radio_range``."""
    pairs = cKDTree(positions).query_pairs(radio_range, output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.sort(pairs.astype(np.int64), axis=1)
    # query_pairs uses <= r up to rounding; re-check exactly
    gap = np.linalg.norm(positions[pairs[:, 0]] - positions[pairs[:, 1]], axis=1)
    pairs = pairs[(gap <= radio_range) & (pairs[:, 0] < n_sensors)]
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def generate_instance(config: NetworkConfig) -> NetworkInstance:
    rng = np.random.default_rng(config.rng_seed)
    n, d = config.n_vertices, config.dimension
    positions = rng.uniform(-0.5, 0.5, size=(n, d))
    edges = range_edges(positions, config.n_sensors, config.radio_range)
    true_dist = np.linalg.norm(positions[edges[:, 0]] - positions[edges[:, 1]], axis=1)
    draws = rng.standard_normal(len(edges))
    measured = np.abs(1.0 + config.noise_level * draws) * true_dist
    graph = DistanceGraph(n_vertices=n, n_sensors=config.n_sensors, edges=edges)
    return NetworkInstance(config=config, true_positions=positions, graph=graph, measured=measured)


def rmsd(estimated, truth) -> float:
    est = np.asarray(estimated, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape or len(est) == 0:
        raise ValueError(f"rmsd needs equal nonempty inputs, got {est.shape} vs {tru.shape}")
    return float(np.sqrt(np.sum((est - tru) ** 2) / len(est)))


def align_rigid(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Return ``source`` moved by the orthogonal transform + translation that best fits ``target``."""
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    u, _, vt = np.linalg.svd((target - mu_t).T @ (source - mu_s))
    rot = u @ vt
    return (source - mu_s) @ rot.T + mu_t


# -- serialization -----------------------------------------------------------
# {"config": {...NetworkConfig fields}, "positions": [[x, y], ...],
#  "edges": [[k, l], ...], "measured": [d_kl, ...]}


def instance_to_dict(instance: NetworkInstance) -> dict:
    return {
        "config": asdict(instance.config),
        "positions": instance.true_positions.tolist(),
        "edges": instance.graph.edges.tolist(),
        "measured": instance.measured.tolist(),
    }


def instance_from_dict(data: dict) -> NetworkInstance:
    config = NetworkConfig(**data["config"])
    positions = np.array(data["positions"], dtype=float).reshape(config.n_vertices, config.dimension)
    edges = np.array(data["edges"], dtype=np.int64).reshape(-1, 2)
    measured = np.array(data["measured"], dtype=float)
    if len(measured) != len(edges):
        raise ValueError("edges and measured have different lengths")
    graph = DistanceGraph(n_vertices=config.n_vertices, n_sensors=config.n_sensors, edges=edges)
    return NetworkInstance(config=config, true_positions=positions, graph=graph, measured=measured)


def save_instance(instance: NetworkInstance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance)))


def load_instance(path) -> NetworkInstance:
    return instance_from_dict(json.loads(Path(path).read_text()))
