import numpy as np
import pytest
from hypothesis import given, strategies as st

from bbmdiff.rng import StreamKey, derive
from bbmdiff.walk import (DegenerateField, StubField, WalkPath, evaluate_local_time, holder_diagnostic,
                          interpolation_weights, local_time_field, sample_walk, sup_local_time,
                          sup_pair_difference, tail_slope)

ROOT = StreamKey(161)


def test_event_count_is_poisson_mean():
    r, S = 16, 2.0
    n = np.array([sample_walk(r, S, 0.0, derive(ROOT, "n", i)).n_jumps for i in range(2000)])
    assert abs(n.mean() - r * r * S) <= 3 * n.std(ddof=1) / np.sqrt(n.size)


def test_endpoint_second_moment():
    r = 64
    y = np.array([sample_walk(r, 1.0, 0.0, derive(ROOT, "y", i)).levels[-1] for i in range(3000)])
    m2 = y ** 2
    assert abs(m2.mean() - 1.0) <= 3 * m2.std(ddof=1) / np.sqrt(m2.size)


@given(st.integers(0, 2**32), st.integers(1, 40), st.floats(0.05, 3.0), st.integers(0, 20))
def test_walk_structure(seed, r, S, k0):
    w = sample_walk(r, S, k0 / r, seed)
    assert np.all(w.sites >= 0)
    assert w.sites[0] == k0
    assert np.all(np.abs(np.diff(w.sites)) == 1)
    assert np.all(np.diff(w.times) > 0) and w.times[-1] < S
    # occupation identity
    f = local_time_field(w)
    assert abs(f.totals().sum() / r - S) <= 1e-9 * S


def test_prefix_consistency():
    key = derive(ROOT, "prefix")
    short = sample_walk(8, 2.5, 0.0, key)
    long = sample_walk(8, 7.0, 0.0, key)
    cut = long.restrict(2.5)
    assert np.array_equal(cut.times, short.times)
    assert np.array_equal(cut.sites, short.sites)
    assert short.extend(7.0).times.tolist() == long.times.tolist()


def test_before_first_jump():
    w = sample_walk(32, 1.0, 0.25, derive(ROOT, "first"))
    f = local_time_field(w)
    s = 0.5 * w.times[1]
    k0 = 8
    assert f.at_level(k0, s) == pytest.approx(32 * s, rel=1e-15)
    assert f.at_level(k0 + 1, s) == 0.0
    assert sup_local_time(f, s) == pytest.approx(32 * s, rel=1e-15)


def test_at_level_is_integral_of_occupation():
    w = sample_walk(8, 2.0, 0.0, derive(ROOT, "int"))
    f = local_time_field(w)
    s = np.linspace(0, 2.0, 41)
    for k in range(4):
        brute = [8 * np.sum(np.clip(np.minimum(np.append(w.times[1:], 2.0), x) - w.times, 0, None)
                            * (w.sites == k)) for x in s]
        np.testing.assert_allclose(f.at_level(k, s), brute, rtol=1e-12, atol=1e-12)


def test_evaluate_local_time_interpolates():
    w = sample_walk(8, 2.0, 0.0, derive(ROOT, "ev"))
    f = local_time_field(w)
    assert evaluate_local_time(f, 3 / 8, 2.0) == f.at_level(3, 2.0)
    mid = evaluate_local_time(f, 3.5 / 8, 2.0)
    assert mid == pytest.approx(0.5 * (f.at_level(3, 2.0) + f.at_level(4, 2.0)))
    assert evaluate_local_time(f, (f.max_level + 5) / 8, 2.0) == 0.0
    with pytest.raises(ValueError):
        evaluate_local_time(f, -0.1, 1.0)


def test_interpolation_weights_snap_to_grid():
    assert interpolation_weights(0.25, 4) == ((1, 1.0), (2, 0.0))
    (k0, w0), (k1, w1) = interpolation_weights(0.3, 4)
    assert (k0, k1) == (1, 2) and w0 + w1 == pytest.approx(1.0) and w1 == pytest.approx(0.2)


def test_zero_local_time_refinement():
    def mean_l0(r, n):
        return np.mean([local_time_field(sample_walk(r, 1.0, 0.0, derive(ROOT, f"l0-{r}", i))).at_level(0, 1.0)
                        for i in range(n)])
    a, b = mean_l0(32, 3000), mean_l0(64, 3000)
    assert abs(a - b) / b < 0.05


def test_shift_is_additive():
    w = sample_walk(8, 3.0, 0.0, derive(ROOT, "shift"))
    f = local_time_field(w)
    g = local_time_field(w.shifted(1.0))
    for k in range(4):
        assert f.at_level(k, 2.5) == pytest.approx(f.at_level(k, 1.0) + g.at_level(k, 1.5), abs=1e-12)


def test_sup_pair_difference_brute_force():
    w = sample_walk(16, 1.0, 0.0, derive(ROOT, "pair"))
    f = local_time_field(w)
    pts = np.unique(np.append(w.times, 1.0))
    brute = np.max(np.abs(f.at_level(2, pts) - f.at_level(5, pts)))
    assert sup_pair_difference(f, 2, 3) == pytest.approx(brute, rel=1e-12)


def test_holder_flags_constant_field():
    est = holder_diagnostic(StubField(np.full(300, 2.0), r=256))
    assert est.flagged


def test_holder_needs_fine_grid_and_levels():
    with pytest.raises(ValueError):
        holder_diagnostic(local_time_field(sample_walk(16, 1.0, 0.0, 1)))
    narrow = StubField(np.ones(10), r=256)
    with pytest.raises(DegenerateField):
        holder_diagnostic(narrow)


def test_tail_slope_of_gaussian_tail():
    # P(|N(0,1)| > x) ~ exp(-x^2/2), slope against x^2 near -1/2
    x = np.abs(np.random.default_rng(0).standard_normal(200000))
    assert -0.75 < tail_slope(x, np.linspace(1.5, 3.0, 7)) < -0.5
    with pytest.raises(DegenerateField):
        tail_slope(np.zeros(10), [1.0, 2.0])


def test_sup_second_moment_stabilises():
    sups = np.array([sup_local_time(local_time_field(sample_walk(32, 1.0, 0.0, derive(ROOT, "sup", i))))
                     for i in range(2000)])
    v1, v2 = sups[:1000].var(), sups.var()
    assert abs(v1 - v2) / v2 < 0.15


def test_invalid_parameters():
    for args in ((0, 1.0, 0.0), (4, 0.0, 0.0), (4, 1.0, 0.1), (4, 1.0, -0.25)):
        with pytest.raises(ValueError):
            sample_walk(*args)


def test_walkpath_level_at():
    w = WalkPath(2, np.array([0.0, 0.5]), np.array([0, 1]), 1.0)
    assert w.level_at(0.49) == 0.0 and w.level_at(0.5) == 0.5
