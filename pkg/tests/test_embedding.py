import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bbmdiff.embedding import (gamma, gamma_displacement, gamma_leaf, leaf_displacements,
                               leaf_gammas, node_gammas, tail_bound)
from bbmdiff.gw_tree import MultiIndex, OffspringLaw, label_nodes, sample_tree

from conftest import hand_tree

LAW = OffspringLaw.from_dict({1: 0.2, 2: 0.6, 3: 0.2})


def test_zero_label():
    tree = hand_tree([-1], [0], [9], [0], [0], 1.0)
    assert gamma(MultiIndex(), tree) == 0.0


def test_single_entry_at_ln2():
    ln2 = math.log(2)
    tree = hand_tree([-1, 0, 0], [0, ln2, ln2], [ln2, 9, 9], [2, 0, 0], [0, 0, 1], 1.0)
    assert gamma(MultiIndex.from_dict({1: 1}), tree) == pytest.approx(0.5, abs=1e-15)
    assert gamma_leaf(tree, 1, 1.0) == pytest.approx(0.5, abs=1e-15)


def test_two_entries(gamma_tree):
    u = MultiIndex.from_dict({1: 1, 2: 2})
    assert gamma(u, gamma_tree) == pytest.approx(0.638550, abs=5e-7)
    assert gamma(u, gamma_tree) == pytest.approx(math.exp(-1) + 2 * math.exp(-2), rel=1e-15)
    np.testing.assert_allclose(leaf_gammas(gamma_tree),
                               [0.0, math.exp(-1), math.exp(-1) + math.exp(-2),
                                math.exp(-1) + 2 * math.exp(-2)], rtol=1e-15)


def test_truncated_embedding(gamma_tree):
    # at r = 1.5 the second split has not happened: leaves under node 2 share e^{-1}
    np.testing.assert_allclose(leaf_gammas(gamma_tree, 1.5), [0, math.exp(-1)] + [math.exp(-1)] * 2)
    assert np.all(leaf_gammas(gamma_tree, 0.0) == 0.0)
    assert gamma_displacement(gamma_tree, 3, 1.5) == pytest.approx(2 * math.exp(-2))
    assert gamma_displacement(gamma_tree, 3, 3.0) == 0.0


def test_single_lineage_never_moves(lineage):
    tree = lineage.tree
    for r in (0.0, 0.5, 1.0):
        assert leaf_displacements(tree, r)[0] == 0.0
        assert gamma_leaf(tree, 0, r) == 0.0


@given(st.integers(0, 2**32))
def test_vectorised_matches_labels(seed):
    tree = sample_tree(LAW, 2.5, seed)
    g = node_gammas(tree)
    for node, u in label_nodes(tree).items():
        assert g[node] == pytest.approx(gamma(u, tree), rel=1e-12, abs=1e-15)


@given(st.integers(0, 2**32), st.floats(0.0, 2.5))
def test_displacement_bounded_by_tail(seed, r):
    tree = sample_tree(LAW, 2.5, seed)
    assert leaf_displacements(tree, r).max() <= tail_bound(tree, r) + 1e-12


@given(st.integers(0, 2**32))
def test_embedding_range(seed):
    # every label sum is below sum_j (lmax - 1) e^{-t_j}
    tree = sample_tree(LAW, 2.5, seed)
    g = leaf_gammas(tree)
    assert np.all(g >= 0)
    assert g.max() <= tail_bound(tree, 0.0) + 1e-12


def test_errors(gamma_tree):
    with pytest.raises(IndexError):
        gamma_leaf(gamma_tree, 4, 1.0)
    with pytest.raises(ValueError):
        gamma_leaf(gamma_tree, 0, 4.0)
