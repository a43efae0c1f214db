"""Tests for the paired signed-rank test."""
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import rankdata

from rarescale.errors import EvaluationError, LengthMismatchError, TooFewDifferencesError
from rarescale.significance import EXACT_MAX_N, wilcoxon_signed_rank


def _brute_force_p(diffs):
    diffs = [d for d in diffs if d != 0]
    ranks = rankdata(np.abs(diffs))
    observed = sum(r for r, d in zip(ranks, diffs) if d > 0)
    center = ranks.sum() / 2
    extreme = 0
    total = 0
    for signs in itertools.product((0, 1), repeat=len(ranks)):
        w = sum(r for r, s in zip(ranks, signs) if s)
        total += 1
        if abs(w - center) >= abs(observed - center) - 1e-9:
            extreme += 1
    return extreme / total


def test_all_positive_differences():
    result = wilcoxon_signed_rank([1] * 5, [0] * 5)
    assert result.p_value == pytest.approx(0.0625, abs=1e-12)
    assert result.statistic == 15
    assert result.method == "exact"
    assert wilcoxon_signed_rank([1] * 6, [0] * 6).p_value == pytest.approx(0.03125, abs=1e-12)


def test_zero_differences_are_dropped():
    result = wilcoxon_signed_rank([1, 1, 1, 1, 1, 0.5, 0.5], [0, 0, 0, 0, 0, 0.5, 0.5])
    assert result.n == 5
    assert result.p_value == pytest.approx(0.0625, abs=1e-12)


def test_sign_flip_is_symmetric():
    a = [1.0, 0.5, 0.0, 0.2, 1.0, 0.33, 0.0]
    b = [0.0, 1.0, 0.25, 0.0, 0.5, 0.0, 1.0]
    assert wilcoxon_signed_rank(a, b).p_value == pytest.approx(wilcoxon_signed_rank(b, a).p_value, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-4, 4).filter(lambda x: x != 0), min_size=5, max_size=12))
def test_exact_matches_brute_force(diffs):
    result = wilcoxon_signed_rank(diffs, [0] * len(diffs), method="exact")
    assert result.p_value == pytest.approx(_brute_force_p(diffs), abs=1e-12)


def test_normal_approximation_tracks_exact_at_n12():
    diffs = [1, 2, -3, 4, 5, -6, 7, 8, 9, -10, 11, 12]
    exact = wilcoxon_signed_rank(diffs, [0] * 12, method="exact")
    approx = wilcoxon_signed_rank(diffs, [0] * 12, method="approx")
    assert exact.statistic == approx.statistic == 59
    assert abs(exact.p_value - approx.p_value) < 0.02
    assert approx.z is not None and "z" in approx.to_dict()


def test_auto_switches_to_approximation():
    diffs = list(range(1, EXACT_MAX_N + 2))
    assert wilcoxon_signed_rank(diffs, [0] * len(diffs)).method == "approx"
    diffs = list(range(1, EXACT_MAX_N + 1))
    assert wilcoxon_signed_rank(diffs, [0] * len(diffs)).method == "exact"


def test_errors():
    with pytest.raises(LengthMismatchError):
        wilcoxon_signed_rank([1, 2, 3], [1, 2])
    with pytest.raises(TooFewDifferencesError):
        wilcoxon_signed_rank([1, 1, 1, 1, 0, 0], [0, 0, 0, 0, 0, 0])
    with pytest.raises(EvaluationError):
        wilcoxon_signed_rank(list(range(1, 22)), [0] * 21, method="exact")
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1] * 5, [0] * 5, method="bootstrap")
