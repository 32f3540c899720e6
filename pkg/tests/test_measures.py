import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bbmdiff.bbm import sample_bbm
from bbmdiff.embedding import leaf_displacements, leaf_gammas
from bbmdiff.gw_tree import BINARY
from bbmdiff.measures import (AtomicMeasure, EmptyMeasure, derivative_martingale, derivative_weights,
                              lattice_measure, mckean_cdf, mckean_martingale, support_gap_profile,
                              thinned_martingale, thinned_truncated_measure, thinning_mask,
                              truncated_measure)
from bbmdiff.rng import StreamKey, derive

ROOT = StreamKey(271)
SQRT2 = math.sqrt(2)


def test_single_lineage_values(lineage):
    assert derivative_martingale(lineage) == pytest.approx(0.191393, abs=5e-7)
    assert derivative_martingale(lineage) == pytest.approx(SQRT2 * math.exp(-2), rel=1e-15)
    assert derivative_martingale(lineage, 0) == 0.0
    assert mckean_martingale(lineage, 0.5) == pytest.approx(0.286505, abs=5e-7)
    assert mckean_martingale(lineage, 0.5) == pytest.approx(math.exp(-1.25), rel=1e-15)
    assert mckean_martingale(lineage, 0.5, 0) == 1.0


def test_sigma_range(lineage):
    for s in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError, match=r"sigma outside \(0,1\)"):
            mckean_martingale(lineage, s)


def test_r_zero_is_one_atom():
    real = sample_bbm(BINARY, 3.0, ROOT)
    m = truncated_measure(real, 0.0)
    assert len(m) == 1 and m.locations[0] == 0.0
    assert m.total_mass == pytest.approx(derivative_martingale(real), rel=1e-12, abs=1e-15)


@given(st.integers(0, 2**32), st.floats(0.0, 2.9))
def test_truncated_mass_is_martingale(seed, r):
    real = sample_bbm(BINARY, 3.0, seed)
    m = truncated_measure(real, r)
    assert m.total_mass == pytest.approx(derivative_martingale(real), rel=1e-9, abs=1e-12)
    assert np.all(np.diff(m.locations) > 0)
    # cdf is nondecreasing only when weights are positive; it always ends at the total mass
    assert m.cdf(1e9) == pytest.approx(m.total_mass, abs=1e-12)


def test_lattice_fine_grid_matches_leaf_weights():
    real = sample_bbm(BINARY, 3.0, derive(ROOT, "fine"))
    g = leaf_gammas(real.tree)
    w = derivative_weights(real.leaf_positions, 3.0)
    r = 2 ** 20
    cells = np.floor(g * r)
    assert np.unique(cells).size == cells.size  # each leaf in its own cell
    m = lattice_measure(real, r)
    order = np.argsort(cells)
    np.testing.assert_array_equal(m.locations, cells[order] / r)
    np.testing.assert_array_equal(m.weights, w[order])


@given(st.integers(0, 2**32), st.integers(1, 64))
def test_lattice_mass_is_refinement_invariant(seed, r):
    real = sample_bbm(BINARY, 2.5, seed)
    a = lattice_measure(real, r)
    b = lattice_measure(real, 2 * r)
    assert a.total_mass == pytest.approx(b.total_mass, rel=1e-9, abs=1e-12)
    assert np.allclose(a.locations * r, np.round(a.locations * r))
    # coarse cells are unions of fine ones
    ends = a.locations + 0.75 / r
    np.testing.assert_allclose(a.cdf(ends), b.cdf(ends), rtol=1e-9, atol=1e-12)


def test_lattice_single_lineage(lineage):
    m = lattice_measure(lineage, 8)
    assert m.locations.tolist() == [0.0]
    assert m.weights[0] == pytest.approx(SQRT2 * math.exp(-2))


def test_thinning_single_lineage_keeps_all(lineage):
    assert thinned_martingale(lineage, 0.5) == derivative_martingale(lineage)


def test_thinning_matches_brute_force_filter():
    # find a realization where some displacement after r = 0 exceeds 1
    for i in range(200):
        real = sample_bbm(BINARY, 3.0, derive(ROOT, "thin", i))
        d = leaf_displacements(real.tree, 0.0)
        if d.max() > 1:
            break
    else:
        pytest.fail("no realization with a displacement above 1")
    w = derivative_weights(real.leaf_positions, 3.0)
    keep = [k for k in range(real.n_leaves) if d[k] <= 1.0]
    assert len(keep) < real.n_leaves
    assert thinned_martingale(real, 0.0) == pytest.approx(math.fsum(w[keep]), rel=1e-12)
    assert thinning_mask(real, 0.0).sum() == len(keep)
    assert thinned_truncated_measure(real, 0.0).total_mass == pytest.approx(math.fsum(w[keep]))


def test_mckean_cdf_ends_at_martingale():
    real = sample_bbm(BINARY, 3.0, derive(ROOT, "mk"))
    assert mckean_cdf(real, 0.5, 1.0, 1e9) == pytest.approx(mckean_martingale(real, 0.5))
    assert mckean_cdf(real, 0.5, 1.0, -1.0) == 0.0


def test_mckean_mean_small_mc():
    y = np.array([mckean_martingale(sample_bbm(BINARY, 2.0, derive(ROOT, "y", i)), 0.5)
                  for i in range(4000)])
    assert abs(y.mean() - 1) <= 3 * y.std(ddof=1) / np.sqrt(y.size)


def test_positivity_onset():
    pos4, pos10 = [], []
    # r close to t keeps atoms nearly leaf-level, so the flag sees individual weights
    for i in range(600):
        real = sample_bbm(BINARY, 10.0, derive(ROOT, "onset", i))
        pos10.append(truncated_measure(real, 9.5).positivity_flag)
        pos4.append(truncated_measure(real.restrict(4.0), 3.5).positivity_flag)
    assert np.mean(pos10) > np.mean(pos4)


def test_gap_profile_examples():
    p = support_gap_profile(AtomicMeasure.from_atoms([0.3], [1.0]))
    assert p.gaps == [] and p.largest_gap == 0.0
    p = support_gap_profile(AtomicMeasure.from_atoms([0.0, 1.0], [1.0, 2.0]))
    assert p.gaps == [(0.0, 1.0)] and p.largest_gap == 1.0
    with pytest.raises(EmptyMeasure):
        support_gap_profile(AtomicMeasure.from_atoms([], []))


def test_atomic_measure_merges_and_validates():
    m = AtomicMeasure.from_atoms([0.5, 0.1, 0.5], [1.0, 2.0, 3.0])
    assert m.locations.tolist() == [0.1, 0.5]
    assert m.weights.tolist() == [2.0, 4.0]
    assert m.mass(0.1, 0.5) == 4.0
    with pytest.raises(ValueError):
        AtomicMeasure.from_atoms([-0.1], [1.0])
    with pytest.raises(ValueError):
        AtomicMeasure.from_atoms([0.1, 0.2], [1.0])
