import numpy as np
import pytest
from scipy.spatial.distance import pdist, squareform

from snlsr.netgen import DistanceGraph, NetworkConfig, NetworkInstance
from snlsr.partition import make_patch, partition_instance
from snlsr.patchloc import (
    FAILED,
    LOCALIZED,
    MajorizationConfig,
    classical_mds,
    localize_all,
    localize_patch,
    stress_majorization,
)
from snlsr.refine import edge_stress
from snlsr.synthetic import random_orthogonal


def complete_instance(points, eta=0.0, seed=0):
    n = len(points)
    edges = np.array([(i, j) for i in range(n) for j in range(i + 1, n)])
    dist = np.linalg.norm(points[edges[:, 0]] - points[edges[:, 1]], axis=1)
    if eta:
        dist = dist * np.abs(1 + eta * np.random.default_rng(seed).standard_normal(len(dist)))
    cfg = NetworkConfig(n_sensors=n, n_anchors=0, radio_range=2.0)
    return NetworkInstance(cfg, points, DistanceGraph(n, n, edges), dist)


def test_equilateral_triangle():
    pts = 0.1 * np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    inst = complete_instance(pts)
    loc = localize_patch(make_patch(range(3), inst))
    assert loc.status == LOCALIZED
    np.testing.assert_allclose(pdist(loc.coordinates), [0.1] * 3, atol=1e-9)


def test_noiseless_complete_patch(rng):
    pts = rng.uniform(-0.5, 0.5, size=(20, 2))
    loc = localize_patch(make_patch(range(20), complete_instance(pts)))
    assert loc.residual_stress <= 1e-12
    np.testing.assert_allclose(squareform(pdist(loc.coordinates)), squareform(pdist(pts)), atol=1e-6)
    assert list(loc.as_dict()) == list(range(20))


def test_classical_mds_exact(rng):
    pts = rng.normal(size=(12, 2))
    x = classical_mds(squareform(pdist(pts)), 2)
    np.testing.assert_allclose(pdist(x), pdist(pts), atol=1e-10)


def test_majorization_monotone_under_noise(rng):
    pts = rng.uniform(-0.5, 0.5, size=(25, 2))
    inst = complete_instance(pts, eta=0.3, seed=4)
    edges, dist = inst.graph.edges, inst.measured
    x0 = rng.uniform(-0.5, 0.5, size=(25, 2))
    _, trace, _ = stress_majorization(x0, edges, dist, max_iterations=300)
    assert len(trace) > 5
    assert all(b <= a * (1 + 1e-12) for a, b in zip(trace, trace[1:]))
    loc = localize_patch(make_patch(range(25), inst))
    assert 0 < loc.residual_stress < np.inf


def test_residual_stress_gauge_invariant(rng, noisy_instance):
    patch = partition_instance(noisy_instance, 20, 30)[0]
    loc = localize_patch(patch)
    edges = patch.local_edges()
    for _ in range(5):
        q = random_orthogonal(rng, 2)
        moved = loc.coordinates @ q.T + rng.normal(size=2)
        assert edge_stress(moved, edges, patch.induced_distances) == pytest.approx(loc.residual_stress, rel=1e-9, abs=1e-14)


def test_too_small_and_disconnected_fail():
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [0.3, 0.3]])
    inst = complete_instance(pts)
    assert localize_patch(make_patch([0, 1], inst)).status == FAILED
    edges = np.array([[0, 1], [2, 3]])
    split = NetworkInstance(inst.config, pts, DistanceGraph(4, 4, edges), np.array([0.1, 0.2]))
    assert localize_patch(make_patch(range(4), split)).status == FAILED


def test_single_patch_list(small_instance):
    patch = partition_instance(small_instance, 60, 60)[0]
    (a,) = localize_all([patch], workers=1)
    b = localize_patch(patch)
    np.testing.assert_array_equal(a.coordinates, b.coordinates)


def test_parallel_determinism(noisy_instance):
    patch = partition_instance(noisy_instance, 20, 30)[0]
    serial = localize_all([patch] * 20, workers=1)
    parallel = localize_all([patch] * 20, workers=4)
    assert [p.patch_id for p in parallel] == list(range(20))
    for a, b in zip(serial, parallel):
        assert a.status == b.status
        np.testing.assert_array_equal(a.coordinates, b.coordinates)
        np.testing.assert_array_equal(a.coordinates, serial[0].coordinates)


def test_one_failure_is_not_fatal(noisy_instance):
    patches = partition_instance(noisy_instance, 20, 30)[:9]
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [0.5, 0.5], [0.6, 0.5]])
    broken = NetworkInstance(
        NetworkConfig(n_sensors=4, n_anchors=0, radio_range=0.2), pts, DistanceGraph(4, 4, np.array([[0, 1], [2, 3]])), np.array([0.1, 0.1])
    )
    out = localize_all(patches[:4] + [make_patch(range(4), broken)] + patches[4:], workers=2)
    assert [p.status == FAILED for p in out] == [False] * 4 + [True] + [False] * 5


def test_all_failed_raises():
    pts = np.zeros((2, 2))
    inst = complete_instance(pts + [[0, 0], [0.1, 0]])
    with pytest.raises(RuntimeError):
        localize_all([make_patch([0, 1], inst)])


def test_stopping_rule_defaults():
    cfg = MajorizationConfig()
    assert (cfg.max_iterations, cfg.relative_tolerance) == (500, 1e-10)
    assert (cfg.polish.max_iterations, cfg.polish.gradient_tolerance) == (200, 1e-9)
