import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from spdvae import stats
from spdvae.errors import DegenerateTest, InvalidInput

from oracles import brute_force_p


def test_balanced_accuracy_cases():
    assert stats.balanced_accuracy([0, 1, 1, 0], [0, 1, 1, 0]) == 1.0
    # recalls 4/5 and 3/5
    pred = [0, 0, 0, 0, 1, 1, 1, 1, 0, 0]
    lab = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]
    assert stats.balanced_accuracy(pred, lab) == pytest.approx(0.7, abs=1e-15)
    assert stats.balanced_accuracy([0] * 10, [0] * 8 + [1] * 2) == 0.5
    # confusion matrix [[3, 1], [2, 6]]: recalls 3/4, 6/8
    pred = [0, 0, 0, 1] + [0, 0] + [1] * 6
    lab = [0] * 4 + [1] * 8
    assert stats.balanced_accuracy(pred, lab) == 0.75
    with pytest.raises(InvalidInput):
        stats.balanced_accuracy([0, 0], [0, 0])
    with pytest.raises(InvalidInput):
        stats.balanced_accuracy([0], [0, 1])


@given(st.permutations(list(range(12))))
def test_balanced_accuracy_order_invariant(perm):
    pred = np.array([0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 0])
    lab = np.array([0, 1, 0, 0, 1, 1, 0, 1, 0, 1, 1, 0])
    perm = np.array(perm)
    assert stats.balanced_accuracy(pred[perm], lab[perm]) == stats.balanced_accuracy(pred, lab)


def test_wilcoxon_examples():
    with pytest.raises(DegenerateTest):
        stats.wilcoxon_signed_rank([1, 2, 3], [1, 2, 3])
    p = stats.wilcoxon_signed_rank([1, 2, 3, 4, 5, 6], [0] * 6)
    assert p == pytest.approx(2 / 2**6, abs=1e-15)
    with pytest.raises(InvalidInput):
        stats.wilcoxon_signed_rank([1, 2, 3, 4], [0, 0, 0, 0])


def test_wilcoxon_matches_enumeration(rng):
    for _ in range(100):
        a = rng.normal(0, 1, 10)
        b = a + rng.normal(0.3, 1, 10)
        assert abs(stats.wilcoxon_signed_rank(a, b) - brute_force_p(a, b)) <= 1e-10


def test_wilcoxon_ties_match_enumeration(rng):
    for _ in range(20):
        a = rng.integers(0, 4, 10).astype(float)
        b = rng.integers(0, 4, 10).astype(float)
        if np.count_nonzero(a - b) < 5:
            continue
        assert abs(stats.wilcoxon_signed_rank(a, b) - brute_force_p(a, b)) <= 1e-10


def test_wilcoxon_matches_scipy_exact(rng):
    for _ in range(10):
        a, b = rng.normal(size=(2, 12))
        ref = sps.wilcoxon(a, b, method="exact").pvalue
        assert stats.wilcoxon_signed_rank(a, b) == pytest.approx(ref, abs=1e-12)


def test_wilcoxon_normal_branch(rng):
    a, b = rng.normal(size=(2, 40))
    ref = sps.wilcoxon(a, b, method="approx", correction=True).pvalue
    assert stats.wilcoxon_signed_rank(a, b) == pytest.approx(ref, rel=1e-10)


@given(st.lists(st.floats(-5, 5).filter(lambda v: abs(v) > 1e-3), min_size=5, max_size=14))
def test_wilcoxon_range_and_symmetry(diffs):
    d = np.array(diffs)
    p = stats.wilcoxon_signed_rank(d, np.zeros_like(d))
    assert 0 < p <= 1
    assert p == pytest.approx(stats.wilcoxon_signed_rank(-d, np.zeros_like(d)), abs=1e-12)
