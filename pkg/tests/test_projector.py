import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spanrank.errors import DegenerateDenominator, DimensionError
from spanrank.projector import SolverConfig, fista_optimize, fit_projection, gradient, objective, project
from spanrank.scatter import LabeledInstanceSet, ScatterPair

from oracles import central_difference_mp, matmul_loops, objective_mp


def diag_pair(w, b):
    z = np.zeros((1, 1))
    return ScatterPair(z, z, np.diag(np.asarray(w, float)), np.diag(np.asarray(b, float)))


def random_problem(rng, d, c):
    return rng.normal(size=(d, c)), diag_pair(rng.uniform(0.1, 3, size=c), rng.uniform(0.1, 3, size=c))


def test_objective_hand_case():
    h, h1, h2 = objective(np.array([[1.0, 0.0]]), diag_pair([1, 1], [2, 2]))
    assert (h, h1, h2) == (0.5, 0.5, 0.0)


def test_orthonormal_rows_have_zero_penalty():
    q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(5, 2)))
    _, _, h2 = objective(q.T, diag_pair([1] * 5, [2] * 5))
    assert h2 < 1e-14
    assert objective(np.eye(5)[[3, 1]], diag_pair([1] * 5, [2] * 5))[2] == 0.0
    # the penalty gradient is switched off at A A' = I, so only the ratio term remains
    a = np.eye(2, 5)
    sp = diag_pair([1, 2, 3, 4, 5], [5, 4, 3, 2, 1])
    assert np.array_equal(gradient(a, sp, 1.0), gradient(a, sp, 0.0))


def test_zero_matrix_is_degenerate():
    with pytest.raises(DegenerateDenominator):
        objective(np.zeros((1, 3)), diag_pair([1] * 3, [1] * 3))
    with pytest.raises(DegenerateDenominator):
        gradient(np.zeros((1, 3)), diag_pair([1] * 3, [1] * 3))


def test_objective_matches_extended_precision():
    rng = np.random.default_rng(21)
    a, sp = random_problem(rng, 3, 6)
    ref = float(objective_mp(a, np.diag(sp.sw_spanned), np.diag(sp.sb_spanned), 0.7))
    assert objective(a, sp, 0.7)[0] == pytest.approx(ref, rel=1e-13)


def test_weight_scales_penalty():
    rng = np.random.default_rng(2)
    a, sp = random_problem(rng, 2, 4)
    h, h1, h2 = objective(a, sp, 2.5)
    assert h == pytest.approx(h1 + 2.5 * h2, rel=1e-15)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(50):
        c = int(rng.integers(2, 13))
        d = int(rng.integers(1, c))
        a, sp = random_problem(rng, d, c)
        g = gradient(a, sp, 1.0)
        fd = central_difference_mp(a, np.diag(sp.sw_spanned), np.diag(sp.sb_spanned))
        big = np.abs(fd) >= 1e-8
        assert np.all(np.abs(g - fd)[big] <= 1e-5 * np.abs(fd)[big])
        assert np.all(np.abs(g - fd)[~big] <= 1e-8)


def test_gradient_vanishes_when_scatters_equal():
    rng = np.random.default_rng(4)
    s = rng.uniform(0.5, 2, size=4)
    a = rng.normal(size=(2, 4))
    g = gradient(a, diag_pair(s, s), 0.0)
    assert np.max(np.abs(g)) < 1e-14


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0), st.sampled_from([-1.0, 1.0]))
def test_h1_is_scale_invariant(seed, alpha, sign):
    a, sp = random_problem(np.random.default_rng(seed), 2, 5)
    h1 = objective(a, sp)[1]
    assert objective(sign * alpha * a, sp)[1] == pytest.approx(h1, rel=1e-10)


def test_project_examples():
    assert project(np.array([[2.0], [3.0]]), np.array([[1.0, 0.0]])).tolist() == [[2.0, 0.0], [3.0, 0.0]]
    assert not project(np.ones((4, 2)), np.zeros((2, 3))).any()
    rng = np.random.default_rng(9)
    r, a = rng.normal(size=(4, 2)), rng.normal(size=(2, 3))
    np.testing.assert_allclose(project(r, a), matmul_loops(r.tolist(), a.tolist()), rtol=0, atol=1e-12)
    with pytest.raises(DimensionError):
        project(np.ones((3, 2)), np.ones((3, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_project_is_linear(seed):
    rng = np.random.default_rng(seed)
    r = rng.normal(size=(7, 3))
    a1, a2 = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    np.testing.assert_allclose(project(r, a1 + a2), project(r, a1) + project(r, a2), atol=1e-12)


def test_fista_stationary_point():
    sp = diag_pair([1, 1, 1], [2, 2, 2])
    a0 = np.eye(2, 3)
    a, trace = fista_optimize(a0, sp)
    assert np.array_equal(a, a0)
    assert trace.converged and trace.iterations_run <= 2


def test_fista_zero_budget():
    a0 = np.array([[1.0, 0.5, 0.0]])
    a, trace = fista_optimize(a0, diag_pair([1, 2, 3], [3, 2, 1]), SolverConfig(max_iterations=0))
    assert np.array_equal(a, a0) and not trace.converged and trace.iterations_run == 0


def test_fista_regression_d2_c5():
    rng = np.random.default_rng(42)
    a0, sp = random_problem(rng, 2, 5)
    a, trace = fista_optimize(a0, sp)
    h0, _, h2_0 = objective(a0, sp)
    h, _, h2 = objective(a, sp)
    assert h < h0 and h2 <= h2_0
    assert trace.objective_history[0][0] == h0 and trace.objective_history[-1][0] == h
    hist = [t[0] for t in trace.objective_history]
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_fista_monotone(seed):
    rng = np.random.default_rng(seed)
    c = int(rng.integers(3, 9))
    d = int(rng.integers(1, c))
    a0, sp = random_problem(rng, d, c)
    a, trace = fista_optimize(a0, sp, SolverConfig(max_iterations=200))
    hist = [t[0] for t in trace.objective_history]
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
    assert math.isfinite(hist[-1]) and hist[-1] <= hist[0]
    assert len(hist) == trace.iterations_run + 1


def test_trace_csv():
    a0, sp = random_problem(np.random.default_rng(1), 1, 3)
    _, trace = fista_optimize(a0, sp, SolverConfig(max_iterations=3))
    lines = trace.to_csv().splitlines()
    assert lines[0] == "iter,H,H1,H2" and len(lines) == len(trace.objective_history) + 1
    assert float(lines[1].split(",")[1]) == trace.objective_history[0][0]


def test_solver_config_validation():
    for bad in ({"max_iterations": -1}, {"relative_tolerance": 0}, {"initial_step": 0},
                {"backtrack_factor": 1.0}, {"orthogonality_weight": -1}):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


def test_fit_projection_shapes_and_determinism():
    rng = np.random.default_rng(6)
    labels = np.repeat(np.arange(4), 25)
    x = LabeledInstanceSet(rng.normal(size=(100, 2)) + labels[:, None], labels, 4)
    a, a0, sp, trace = fit_projection(x, init="random", seed=3)
    assert a.shape == a0.shape == (2, 4)
    assert objective(a, sp)[0] <= objective(a0, sp)[0]
    b = fit_projection(x, init="random", seed=3)[0]
    assert np.array_equal(a, b)
