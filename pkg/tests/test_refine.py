import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snlsr.netgen import DistanceGraph, NetworkConfig, NetworkInstance, generate_instance, rmsd
from snlsr.refine import RefinementConfig, edge_stress_gradient, refine, stress, write_trace_csv


def loop_stress(positions, instance):
    total = 0.0
    for (k, l), d in zip(instance.graph.edges.tolist(), instance.measured.tolist()):
        a, b = positions[k], positions[l]
        total += (math.sqrt(sum((a[c] - b[c]) ** 2 for c in range(len(a)))) - d) ** 2
    return total


def test_truth_has_zero_stress(small_instance):
    assert stress(small_instance.true_positions[:50], small_instance) == 0.0


def test_single_edge_example():
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    inst = NetworkInstance(NetworkConfig(n_sensors=2, n_anchors=0, radio_range=2.0), pts, DistanceGraph(2, 2, np.array([[0, 1]])), np.array([1.1]))
    assert stress(pts, inst) == pytest.approx(0.01, abs=1e-15)


def test_matches_edge_loop(rng, small_instance):
    x = rng.uniform(-0.5, 0.5, size=(50, 2))
    full = np.vstack([x, small_instance.anchor_positions])
    assert stress(x, small_instance) == pytest.approx(loop_stress(full.tolist(), small_instance), rel=1e-12, abs=1e-12)


def test_truth_is_fixed_point(small_instance):
    truth = small_instance.true_positions
    res = refine(truth[:50], small_instance)
    np.testing.assert_array_equal(res.positions, truth)
    assert res.iterations == 0


def test_small_perturbation_recovered(rng):
    inst = generate_instance(NetworkConfig(n_sensors=80, n_anchors=8, radio_range=0.4, rng_seed=21))
    truth = inst.true_positions[:80]
    step = rng.normal(size=(80, 2))
    start = truth + 1e-3 * step / np.linalg.norm(step, axis=1, keepdims=True)
    res = refine(start, inst, RefinementConfig(max_iterations=5000, gradient_tolerance=1e-13))
    assert res.stress_trace[-1] <= 1e-14
    assert rmsd(res.positions[:80], truth) <= 1e-6


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_gradient_matches_finite_differences(seed):
    inst = generate_instance(NetworkConfig(n_sensors=30, n_anchors=3, radio_range=0.4, noise_level=0.2, rng_seed=seed))
    x = np.random.default_rng(seed).uniform(-0.5, 0.5, size=(33, 2))
    edges, dist = inst.graph.edges, inst.measured
    _, grad = edge_stress_gradient(x, edges, dist)
    fd = np.zeros_like(x)
    h = 1e-6
    for i in range(x.shape[0]):
        for c in range(2):
            xp, xm = x.copy(), x.copy()
            xp[i, c] += h
            xm[i, c] -= h
            fd[i, c] = (edge_stress_gradient(xp, edges, dist)[0] - edge_stress_gradient(xm, edges, dist)[0]) / (2 * h)
    assert np.linalg.norm(grad - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-12)


def test_coincident_points_have_finite_gradient():
    x = np.zeros((2, 2))
    _, g = edge_stress_gradient(x, np.array([[0, 1]]), np.array([0.5]))
    np.testing.assert_array_equal(g, 0.0)


def test_monotone_and_anchors_immobile(rng, noisy_instance):
    start = noisy_instance.true_positions[:120] + 0.05 * rng.normal(size=(120, 2))
    res = refine(start, noisy_instance)
    trace = res.stress_trace
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert trace[-1] < trace[0]
    np.testing.assert_array_equal(res.positions[120:], noisy_instance.anchor_positions)


def test_free_anchors_move(rng, noisy_instance):
    start = noisy_instance.true_positions + 0.05 * rng.normal(size=(132, 2))
    res = refine(start, noisy_instance, fix_anchors=False)
    assert not np.array_equal(res.positions[120:], start[120:])


def test_invalid_config():
    with pytest.raises(ValueError):
        RefinementConfig(shrink=0.0)


def test_trace_csv(tmp_path):
    path = tmp_path / "trace.csv"
    write_trace_csv([3.0, 1.5, 0.1], path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iteration", "stress"]
    assert [float(r[1]) for r in rows[1:]] == [3.0, 1.5, 0.1]
