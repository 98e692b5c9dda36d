import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spanrank.errors import DimensionError, EmptyClass, SingularDenominator
from spanrank.scatter import (LabeledInstanceSet, ScatterPair, class_stats, classical_fisher, classical_scatter,
                              init_projection, scatter_pair, spanned_scatter, sylvester_similarity,
                              trace_ratio_diagnostic)

from oracles import scatters_loops


def small_set():
    return LabeledInstanceSet(np.array([[0.0], [2.0], [4.0], [6.0]]), np.array([0, 0, 1, 1]), 2)


def random_set(rng, n, d, c):
    labels = np.concatenate([np.arange(c), rng.integers(0, c, size=n - c)])
    rng.shuffle(labels)
    return LabeledInstanceSet(rng.normal(size=(n, d)) * rng.uniform(0.1, 10), labels, c)


@st.composite
def instance_sets(draw):
    c = draw(st.integers(2, 8))
    d = draw(st.integers(1, 6))
    n = draw(st.integers(c, 60))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    return random_set(np.random.default_rng(seed), n, d, c)


def test_class_stats_hand_case():
    s = class_stats(small_set())
    assert s.class_means[:, 0].tolist() == [1.0, 5.0]
    assert s.global_mean.tolist() == [3.0]
    assert s.class_counts.tolist() == [2, 2]


def test_class_stats_single_constant_class():
    x = LabeledInstanceSet(np.full((5, 2), 3.25), np.zeros(5, dtype=int), 1)
    s = class_stats(x)
    assert np.all(s.class_means == 3.25) and np.all(s.global_mean == 3.25)


def test_missing_class_raises():
    x = LabeledInstanceSet(np.zeros((3, 1)), np.array([0, 0, 2]), 3)
    with pytest.raises(EmptyClass):
        class_stats(x)


def test_rejects_non_finite_and_bad_labels():
    with pytest.raises(ValueError):
        LabeledInstanceSet(np.array([[np.nan], [1.0]]), np.array([0, 1]), 2)
    with pytest.raises(ValueError):
        LabeledInstanceSet(np.zeros((2, 1)), np.array([0, 2]), 2)
    with pytest.raises(DimensionError):
        LabeledInstanceSet(np.zeros((2, 1)), np.array([0, 1, 1]), 2)


def test_classical_scatter_hand_case():
    x = small_set()
    sw, sb = classical_scatter(class_stats(x), x)
    assert sw.tolist() == [[4.0]]
    assert sb.tolist() == [[8.0]]


def test_spanned_scatter_hand_case():
    sp = scatter_pair(small_set())
    assert np.array_equal(sp.sw_spanned, np.diag([2.0, 2.0]))
    assert np.array_equal(sp.sb_spanned, np.diag([4.0, 4.0]))
    assert np.trace(sp.sw_classic) == np.trace(sp.sw_spanned) == 4.0
    assert np.trace(sp.sb_classic) == np.trace(sp.sb_spanned) == 8.0


def test_zero_spread():
    x = LabeledInstanceSet(np.ones((6, 2)), np.array([0, 1, 2, 0, 1, 2]), 3)
    sp = scatter_pair(x)
    for m in (sp.sw_classic, sp.sb_classic, sp.sw_spanned, sp.sb_spanned):
        assert not m.any()


def test_one_instance_per_class():
    x = LabeledInstanceSet(np.array([[0.0, 1.0], [2.0, -1.0], [5.0, 0.5]]), np.array([0, 1, 2]), 3)
    sw, sb = classical_scatter(class_stats(x), x)
    assert not sw.any()
    assert np.trace(sb) > 0


def test_matches_loop_oracle():
    rng = np.random.default_rng(3)
    x = random_set(rng, 200, 3, 10)
    sp = scatter_pair(x)
    sw, sb, wd, bd = scatters_loops(x.data, x.labels, 10)
    np.testing.assert_allclose(sp.sw_classic, sw, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(sp.sb_classic, sb, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(np.diag(sp.sw_spanned), wd, rtol=1e-12)
    np.testing.assert_allclose(np.diag(sp.sb_spanned), bd, rtol=1e-12)
    assert abs(np.trace(sp.sw_classic) - np.trace(sp.sw_spanned)) < 1e-9 * np.trace(sp.sw_classic)


def test_compensated_sum_large_offsets():
    # values with a big common offset: the within scatter must not drown in rounding
    rng = np.random.default_rng(0)
    n = 200_000
    noise = rng.normal(size=(n, 1))
    x = LabeledInstanceSet(1e6 + noise, np.zeros(n, dtype=int), 1)
    sp = scatter_pair(x)
    centered = noise - noise.mean()
    np.testing.assert_allclose(sp.sw_classic[0, 0], float(centered[:, 0] @ centered[:, 0]), rtol=1e-8)


@settings(max_examples=60, deadline=None)
@given(instance_sets())
def test_trace_identities_property(x):
    sp = scatter_pair(x)
    for classic, spanned in ((sp.sw_classic, sp.sw_spanned), (sp.sb_classic, sp.sb_spanned)):
        t1, t2 = np.trace(classic), np.trace(spanned)
        assert abs(t1 - t2) <= 1e-9 * max(abs(t1), 1e-300)
        assert np.all(np.diag(spanned) >= 0)
        assert np.array_equal(spanned, np.diag(np.diag(spanned)))
        np.testing.assert_array_equal(classic, classic.T)


@settings(max_examples=40, deadline=None)
@given(instance_sets())
def test_global_mean_is_weighted_class_mean(x):
    s = class_stats(x)
    assert s.class_counts.sum() == x.n
    weighted = (s.class_counts[:, None] * s.class_means).sum(axis=0) / x.n
    np.testing.assert_allclose(s.global_mean, weighted, rtol=1e-10, atol=1e-12)


def test_classical_fisher_identity_case():
    assert classical_fisher(np.eye(2), np.diag([1.0, 2.0]), np.diag([2.0, 4.0])) == pytest.approx(1.0, abs=1e-15)


def _spd(rng, d):
    m = rng.normal(size=(d, d))
    return m @ m.T + d * np.eye(d)


def test_classical_fisher_cyclic_identity():
    rng = np.random.default_rng(18)
    for _ in range(100):
        d = int(rng.integers(1, 7))
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        a = q @ np.diag(rng.uniform(0.5, 2.0, size=d))
        sw, sb = _spd(rng, d), _spd(rng, d)
        direct = np.trace(sw @ np.linalg.inv(sb))
        assert classical_fisher(a, sw, sb) == pytest.approx(direct, rel=1e-8)


def test_classical_fisher_singular():
    with pytest.raises(SingularDenominator):
        classical_fisher(np.eye(2), np.eye(2), np.diag([1.0, 0.0]))


def test_sylvester_shared_eigenvalue():
    res = sylvester_similarity(np.array([[2.0]]), np.diag([2.0, 5.0]))
    assert res.residual == 0.0
    np.testing.assert_allclose(res.gamma[:, 0], [1.0, 0.0], atol=1e-15)


def test_sylvester_no_shared_eigenvalue_matches_svd():
    res = sylvester_similarity(np.array([[3.0]]), np.diag([5.0, 7.0]))
    op = np.array([[3.0 - 5.0, 0.0], [0.0, 3.0 - 7.0]])
    smallest = np.linalg.svd(op, compute_uv=False).min()
    assert res.residual == pytest.approx(smallest, rel=1e-12)
    assert res.residual > 0


def test_sylvester_square_equal():
    s = np.diag([1.0, 2.0, 3.0])
    res = sylvester_similarity(s, s)
    assert res.residual < 1e-14
    np.testing.assert_allclose(res.gamma, np.eye(3) / np.sqrt(3), atol=1e-14)


def test_sylvester_residual_recomputed():
    rng = np.random.default_rng(7)
    for _ in range(50):
        d, c = int(rng.integers(1, 4)), int(rng.integers(2, 6))
        s_classic = _spd(rng, d)
        s_spanned = np.diag(rng.uniform(0, 5, size=c))
        res = sylvester_similarity(s_classic, s_spanned)
        direct = np.linalg.norm(res.gamma @ s_classic - s_spanned @ res.gamma)
        assert abs(res.residual - direct) <= 1e-12
        assert np.linalg.norm(res.gamma) == pytest.approx(1.0, abs=1e-12)


def _pair(w, b):
    z = np.zeros((1, 1))
    return ScatterPair(z, z, np.diag(w), np.diag(b))


def test_init_projection_picks_best_ratio():
    a0 = init_projection(_pair([1.0, 1.0, 4.0], [2.0, 8.0, 4.0]), 1)
    assert a0.tolist() == [[0.0, 1.0, 0.0]]


def test_init_projection_ties_by_index():
    a0 = init_projection(_pair([1.0, 1.0, 1.0], [1.0, 1.0, 1.0]), 2)
    assert a0.tolist() == [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]


def test_init_projection_zero_within_spread():
    a0 = init_projection(_pair([0.0, 1.0, 1.0], [1.0, 5.0, 0.0]), 1)
    assert a0.tolist() == [[1.0, 0.0, 0.0]]


def test_init_projection_too_many_rows():
    with pytest.raises(DimensionError):
        init_projection(_pair([1.0] * 3, [1.0] * 3), 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.data())
def test_init_projection_rows_orthonormal(c, data):
    d = data.draw(st.integers(1, c))
    seed = data.draw(st.integers(0, 1000))
    rng = np.random.default_rng(seed)
    sp = _pair(rng.uniform(0, 3, size=c), rng.uniform(0, 3, size=c))
    a0 = init_projection(sp, d)
    assert np.array_equal(a0 @ a0.T, np.eye(d))
    ar = init_projection(sp, d, method="random", seed=seed)
    np.testing.assert_allclose(ar @ ar.T, np.eye(d), atol=1e-12)
    assert np.array_equal(ar, init_projection(sp, d, method="random", seed=seed))


def test_trace_ratio_diagnostic_reports_both_sides():
    x = random_set(np.random.default_rng(5), 80, 2, 4)
    left, right = trace_ratio_diagnostic(scatter_pair(x))
    assert np.isfinite(left) and np.isfinite(right)


def test_spanned_scatter_accepts_wide_data():
    # d >= c is allowed by the scatter operations
    x = random_set(np.random.default_rng(1), 30, 5, 3)
    sp = spanned_scatter(class_stats(x), x)
    assert sp.sw_classic.shape == (5, 5) and sp.sw_spanned.shape == (3, 3)
