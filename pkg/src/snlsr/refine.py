"""Gradient refinement of positions against measured distances."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netgen import NetworkInstance


@dataclass(frozen=True)
class RefinementConfig:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-9
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    max_backtracks: int = 60

    def __post_init__(self):
        if min(self.max_iterations, self.gradient_tolerance, self.shrink, self.sufficient_decrease) <= 0:
            raise ValueError("refinement parameters must be positive")


@dataclass
class RefinementResult:
    positions: np.ndarray
    stress_trace: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    gradient_norm: float = np.inf


def edge_stress(positions: np.ndarray, edges: np.ndarray, distances: np.ndarray) -> float:
    if len(edges) == 0:
        return 0.0
    gap = np.linalg.norm(positions[edges[:, 0]] - positions[edges[:, 1]], axis=1)
    return float(np.sum((gap - distances) ** 2))


def edge_stress_gradient(positions: np.ndarray, edges: np.ndarray, distances: np.ndarray) -> tuple[float, np.ndarray]:
    """Stress and its gradient with respect to every row of ``positions``."""
    grad = np.zeros_like(positions)
    if len(edges) == 0:
        return 0.0, grad
    diff = positions[edges[:, 0]] - positions[edges[:, 1]]
    gap = np.linalg.norm(diff, axis=1)
    resid = gap - distances
    # coincident endpoints contribute no direction
    scale = np.divide(2.0 * resid, gap, out=np.zeros_like(gap), where=gap > 0)
    contrib = scale[:, None] * diff
    np.add.at(grad, edges[:, 0], contrib)
    np.add.at(grad, edges[:, 1], -contrib)
    return float(np.sum(resid**2)), grad


def refine_positions(
    positions: np.ndarray,
    edges: np.ndarray,
    distances: np.ndarray,
    fixed: np.ndarray | None = None,
    config: RefinementConfig = RefinementConfig(),
) -> RefinementResult:
    """Backtracking gradient descent on edge stress.

    Rows flagged in ``fixed`` never move. The first trial step of each line
    search is the Barzilai-Borwein step; the Armijo test keeps the stress
    sequence non-increasing.
    """
    x = np.array(positions, dtype=float, copy=True)
    free = np.ones(len(x), dtype=bool) if fixed is None else ~np.asarray(fixed, dtype=bool)
    f, g = edge_stress_gradient(x, edges, distances)
    g[~free] = 0.0
    trace = [f]
    step = 1.0
    prev_x = prev_g = None
    gnorm = float(np.linalg.norm(g))
    it = 0
    for it in range(1, config.max_iterations + 1):
        if gnorm < config.gradient_tolerance:
            it -= 1
            break
        if prev_x is not None:
            s, yv = (x - prev_x).ravel(), (g - prev_g).ravel()
            sy = s @ yv
            if sy > 0:
                step = (s @ s) / sy
        accepted = False
        for _ in range(config.max_backtracks):
            trial = x - step * g
            f_trial = edge_stress(trial, edges, distances)
            if f_trial <= f - config.sufficient_decrease * step * gnorm**2:
                accepted = True
                break
            step *= config.shrink
        if not accepted:
            break
        prev_x, prev_g = x, g
        x = trial
        f, g = edge_stress_gradient(x, edges, distances)
        g[~free] = 0.0
        gnorm = float(np.linalg.norm(g))
        trace.append(f)
    return RefinementResult(
        positions=x,
        stress_trace=trace,
        converged=gnorm < config.gradient_tolerance,
        iterations=it,
        gradient_norm=gnorm,
    )


def stress(positions: np.ndarray, instance: NetworkInstance) -> float:
    """Squared-residual stress of sensor ``positions`` against every measured edge.

    Anchors sit at their known positions.
    """
    full = _full_positions(positions, instance)
    return edge_stress(full, instance.graph.edges, instance.measured)


def refine(
    positions: np.ndarray,
    instance: NetworkInstance,
    config: RefinementConfig = RefinementConfig(),
    fix_anchors: bool = True,
) -> RefinementResult:
    """Refine sensor positions over all measured edges.

    ``positions`` holds either the N sensors (anchors are then taken at their
    known positions) or all N+K vertices. With ``fix_anchors=False`` every
    vertex is free, which is what anchor-free runs use. The result always
    carries all N+K rows.
    """
    full = _full_positions(positions, instance)
    fixed = np.zeros(len(full), dtype=bool)
    if fix_anchors:
        fixed[instance.n_sensors:] = True
        full[instance.n_sensors:] = instance.anchor_positions
    return refine_positions(full, instance.graph.edges, instance.measured, fixed, config)


def _full_positions(positions: np.ndarray, instance: NetworkInstance) -> np.ndarray:
    positions = np.asarray(positions, dtype=float)
    n, total = instance.n_sensors, instance.config.n_vertices
    if len(positions) == total:
        return positions.copy()
    if len(positions) != n:
        raise ValueError(f"expected {n} or {total} position rows, got {len(positions)}")
    return np.vstack([positions, instance.anchor_positions])


def write_trace_csv(trace, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "stress"])
        for i, value in enumerate(trace):
            writer.writerow([i, repr(float(value))])
