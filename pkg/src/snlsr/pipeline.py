"""End-to-end divide-and-conquer localization: partition, localize, register, refine."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .netgen import NetworkConfig, NetworkInstance, align_rigid, generate_instance, rmsd
from .partition import coverage_report, partition_instance
from .patchloc import FAILED, localize_all
from .refine import RefinementConfig, refine
from .register import ANCHOR_FREE, ANCHORED, register


@dataclass(frozen=True)
class SolverConfig:
    max_cluster_size: int = 30
    max_patch_size: int = 45
    lam: float = 2.0
    mode: str = ANCHORED
    registration_anchors: int | None = None  # None: every anchor; else a random subset of this size
    workers: int | None = None
    sdp_restarts: int = 5
    seed: int = 0
    refine_iterations: int = 500
    refine_tolerance: float = 1e-9

    def __post_init__(self):
        if self.mode not in (ANCHORED, ANCHOR_FREE):
            raise ValueError(f"mode must be {ANCHORED!r} or {ANCHOR_FREE!r}")
        if self.max_cluster_size < 2 or self.max_patch_size < self.max_cluster_size - 1:
            raise ValueError("need max_cluster_size >= 2 and max_patch_size >= max_cluster_size - 1")
        if not self.lam > 0:
            raise ValueError("lam must be positive")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


@dataclass
class PipelineResult:
    instance: NetworkInstance
    config: SolverConfig
    patches: list
    localized: list
    registration: object
    registration_anchor_ids: list[int]
    positions_registered: np.ndarray  # (N, d), evaluation frame
    positions_refined: np.ndarray  # (N, d), evaluation frame
    rmsd_registered: float
    rmsd_refined: float
    refine_trace: list[float]
    timings: dict = field(default_factory=dict)

    def summary(self) -> dict:
        sizes = [len(p) for p in self.patches]
        reg = self.registration.report()
        for key in ("transforms", "translations"):
            reg.pop(key)
        return {
            "network": asdict(self.instance.config),
            "solver": asdict(self.config),
            "registration_anchor_ids": self.registration_anchor_ids,
            "patches": {
                "count": len(sizes),
                "size_min": int(min(sizes)),
                "size_mean": float(np.mean(sizes)),
                "size_max": int(max(sizes)),
                "failed": sum(p.status == FAILED for p in self.localized),
            },
            "registration": reg,
            "rmsd_before_refinement": self.rmsd_registered,
            "rmsd_after_refinement": self.rmsd_refined,
            "refinement_iterations": len(self.refine_trace) - 1,
        }


def choose_registration_anchors(instance: NetworkInstance, count: int | None, seed: int) -> list[int]:
    ids = instance.anchor_ids
    if count is None or count >= len(ids):
        return ids.tolist()
    rng = np.random.default_rng(seed)
    return sorted(int(v) for v in rng.choice(ids, size=count, replace=False))


def solve_instance(instance: NetworkInstance, config: SolverConfig = SolverConfig()) -> PipelineResult:
    """Run every stage; failures surface as :class:`PipelineError` naming the stage.

    Anchored runs register against the chosen anchor subset and refine with
    every anchor held at its known position. Anchor-free runs treat anchors as
    ordinary unknown nodes throughout; their output is rigidly aligned to the
    true sensor positions before RMSD is computed.
    """
    N = instance.n_sensors
    d = instance.config.dimension
    timings = {}

    t = time.perf_counter()
    try:
        patches = partition_instance(instance, config.max_cluster_size, config.max_patch_size)
    except Exception as exc:
        raise PipelineError("partition", str(exc)) from exc
    timings["partition"] = time.perf_counter() - t

    t = time.perf_counter()
    try:
        localized = localize_all(patches, d, workers=config.workers)
    except Exception as exc:
        raise PipelineError("localize", str(exc)) from exc
    timings["localize"] = time.perf_counter() - t

    t = time.perf_counter()
    anchor_ids = choose_registration_anchors(instance, config.registration_anchors, config.seed)
    anchors = {a: instance.true_positions[a] for a in anchor_ids} if config.mode == ANCHORED else None
    try:
        reg = register(
            localized, anchors, config.lam, config.mode, n_sensors=N, sdp_restarts=config.sdp_restarts, seed=config.seed
        )
    except Exception as exc:
        raise PipelineError("register", str(exc)) from exc
    timings["register"] = time.perf_counter() - t

    t = time.perf_counter()
    anchored = config.mode == ANCHORED
    full = np.array(instance.true_positions, dtype=float)
    if not anchored:
        # anchors missing from every patch stay at the centroid of the rest
        full[N:] = np.nan
    for v, x in reg.positions.items():
        full[v] = x
    if not anchored:
        missing = np.isnan(full[:, 0])
        full[missing] = np.nanmean(full, axis=0)
    refcfg = RefinementConfig(max_iterations=config.refine_iterations, gradient_tolerance=config.refine_tolerance)
    refined = refine(full, instance, refcfg, fix_anchors=anchored)
    timings["refine"] = time.perf_counter() - t

    truth = instance.true_positions[:N]
    before, after = full[:N], refined.positions[:N]
    if not anchored:
        before, after = align_rigid(before, truth), align_rigid(after, truth)
    return PipelineResult(
        instance=instance,
        config=config,
        patches=patches,
        localized=localized,
        registration=reg,
        registration_anchor_ids=anchor_ids if anchored else [],
        positions_registered=before,
        positions_refined=after,
        rmsd_registered=rmsd(before, truth),
        rmsd_refined=rmsd(after, truth),
        refine_trace=refined.stress_trace,
        timings=timings,
    )


def run(network: NetworkConfig, config: SolverConfig = SolverConfig()) -> PipelineResult:
    t = time.perf_counter()
    try:
        instance = generate_instance(network)
    except Exception as exc:
        raise PipelineError("generate", str(exc)) from exc
    result = solve_instance(instance, config)
    result.timings = {"generate": time.perf_counter() - t - sum(result.timings.values()), **result.timings}
    return result


def coverage(result: PipelineResult):
    return coverage_report(result.patches, result.instance.config.n_vertices, result.instance.config.dimension)
