import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from bbmdiff.measures import AtomicMeasure, EmptyMeasure
from bbmdiff.pcaf import (AdditiveFunctional, Exhausted, NegativeWeight, StepFunction, build_pcaf,
                          full_pcaf, inverse, l1_distance_functionals, level_weights, revuz_check,
                          sup_distance_functionals, thinned_pcaf)
from bbmdiff.rng import StreamKey, derive
from bbmdiff.walk import local_time_field, sample_walk

ROOT = StreamKey(2718)


def field(r=8, S=2.0, name="f"):
    return local_time_field(sample_walk(r, S, 0.0, derive(ROOT, name)))


def af(b, v):
    return AdditiveFunctional(np.asarray(b, dtype=float), np.asarray(v, dtype=float))


def test_unit_atom_is_local_time():
    f = field()
    F = build_pcaf(AtomicMeasure.from_atoms([3 / 8], [1.0]), f)
    np.testing.assert_allclose(F.values, f.at_level(3, F.breakpoints), rtol=1e-12, atol=1e-12)


def test_two_atoms_are_linear():
    f = field()
    F = build_pcaf(AtomicMeasure.from_atoms([1 / 8, 4 / 8], [0.3, 2.0]), f)
    s = F.breakpoints
    direct = 0.3 * f.at_level(1, s) + 2.0 * f.at_level(4, s)
    np.testing.assert_allclose(F.values, direct, rtol=1e-12, atol=1e-12)


def test_off_grid_atom_interpolates():
    f = field()
    F = build_pcaf(AtomicMeasure.from_atoms([2.25 / 8], [1.0]), f)
    s = F.breakpoints
    np.testing.assert_allclose(F.values, 0.75 * f.at_level(2, s) + 0.25 * f.at_level(3, s), atol=1e-12)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0.01, 5)), min_size=1, max_size=6),
       st.integers(0, 2**32))
def test_contract(atoms, seed):
    loc, w = zip(*atoms)
    f = local_time_field(sample_walk(8, 1.5, 0.0, seed))
    F = build_pcaf(AtomicMeasure.from_atoms(loc, w), f)
    assert F.values[0] == 0.0
    assert np.all(np.diff(F.values) >= 0)
    # additivity: the level weights carry the whole mass
    assert level_weights(AtomicMeasure.from_atoms(loc, w), 8).sum() == pytest.approx(sum(w))


def test_rejects_bad_measures():
    f = field()
    with pytest.raises(NegativeWeight):
        build_pcaf(AtomicMeasure.from_atoms([0.1, 0.2], [1.0, -0.5]), f)
    with pytest.raises(EmptyMeasure):
        build_pcaf(AtomicMeasure.from_atoms([], []), f)


def test_single_lineage_thinned_equals_full(lineage):
    f = field()
    a = thinned_pcaf(lineage, 0.5, None, f)
    b = full_pcaf(lineage, 0.5, None, f)
    assert np.array_equal(a.values, b.values)


def test_inverse_examples():
    F = af([0, 1, 2], [0, 0, 3])
    assert inverse(F, 0.0) == 1.0
    assert inverse(F, 1.5) == 1.5
    G = af([0, 4], [0, 8])
    np.testing.assert_allclose(inverse(G, [0.0, 1.0, 7.5]), [0.0, 0.5, 3.75])
    with pytest.raises(Exhausted):
        inverse(G, 8.0)
    with pytest.raises(ValueError):
        inverse(G, -1.0)


@given(st.lists(st.floats(0, 3), min_size=2, max_size=12), st.floats(0, 0.999))
def test_inverse_is_right_continuous(incs, frac):
    v = np.concatenate([[0.0], np.cumsum(incs)])
    if v[-1] <= 0:
        return
    F = af(np.arange(v.size), v)
    u = frac * v[-1]
    s = inverse(F, u)
    assert F(s) == pytest.approx(u, abs=1e-12)
    # nothing to the right of s is still at level u
    assert F(s + 1e-9) > u or s + 1e-9 > F.horizon


def test_sup_distance_examples():
    F = af([0, 1, 3], [0, 2, 2])
    assert sup_distance_functionals(F, F, 3.0) == 0.0
    c = 0.7
    G = af([0, 1, 3], [0, 2 + c, 2 + 3 * c])
    assert sup_distance_functionals(F, G, 3.0) == pytest.approx(3 * c)
    with pytest.raises(ValueError):
        sup_distance_functionals(F, G, 4.0)


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=8), st.lists(st.floats(-2, 2), min_size=3, max_size=8))
def test_l1_distance_matches_quadrature(a, b):
    F = af(np.linspace(0, 2, len(a)), a)
    G = af(np.linspace(0, 2, len(b)), b)
    x = np.linspace(0, 2, 200001)
    quad = integrate.trapezoid(np.abs(F(x) - G(x)), x)
    assert l1_distance_functionals(F, G, 2.0) == pytest.approx(quad, abs=1e-6)


def test_step_function():
    f = StepFunction((0.0, 0.5, 1.25), (1.0, 2.0))
    np.testing.assert_array_equal(f([-1, 0, 0.49, 0.5, 1.2, 1.25, 5]), [0, 1, 1, 2, 2, 0, 0])
    assert f.support_max == 1.25 and f.sup_norm == 2.0
    with pytest.raises(ValueError):
        StepFunction((0.0, 0.0), (1.0,))


def test_revuz_zero_function():
    m = AtomicMeasure.from_atoms([0.5], [1.0])
    rep = revuz_check(m, StepFunction((0.0, 1.0), (0.0,)), r=16, N=500, rng=derive(ROOT, "zero"))
    assert rep.lhs == 0.0 and rep.rhs == 0.0


def test_revuz_dirac():
    m = AtomicMeasure.from_atoms([0.5], [1.0])
    rep = revuz_check(m, StepFunction.indicator(0.5 - 1 / 16, 0.5 + 1 / 16), r=32, N=20000,
                      rng=derive(ROOT, "dirac"))
    assert rep.lhs == 1.0
    assert abs(rep.rhs - 1.0) <= 3 * rep.se + rep.bias_bound


def test_revuz_two_atoms_total_mass():
    m = AtomicMeasure.from_atoms([0.25, 0.75], [1.0, 2.5])
    rep = revuz_check(m, StepFunction.indicator(0.0, 1.0), r=32, N=20000, rng=derive(ROOT, "two"))
    assert rep.lhs == pytest.approx(3.5)
    assert abs(rep.rhs - rep.lhs) <= 3 * rep.se + rep.bias_bound
