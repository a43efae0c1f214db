"""
Paired significance testing.

Two-sided Wilcoxon signed-rank test. Zero differences are dropped, tied
|differences| get average ranks. Up to EXACT_MAX_N nonzero differences the
p-value comes from enumerating every sign assignment; beyond that a normal
approximation with tie and continuity correction is used.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .errors import EvaluationError, LengthMismatchError, TooFewDifferencesError

EXACT_MAX_N = 15
ENUMERATION_LIMIT = 20
MIN_DIFFERENCES = 5


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float     # W+, sum of ranks of positive differences
    p_value: float
    n: int               # nonzero differences used
    method: str          # "exact" | "approx"
    z: Optional[float] = None

    def to_dict(self) -> dict:
        out = {"statistic": self.statistic, "p_value": self.p_value, "n": self.n, "method": self.method}
        if self.z is not None:
            out["z"] = self.z
        return out


def _exact_p(ranks: np.ndarray, w_plus: float) -> float:
    # Average ranks are multiples of 1/2; doubling keeps the sums integral.
    doubled = np.rint(2 * ranks).astype(np.int64)
    n = len(doubled)
    signs = (np.arange(2 ** n, dtype=np.int64)[:, None] >> np.arange(n, dtype=np.int64)) & 1
    sums = signs @ doubled
    center = doubled.sum() / 2.0
    observed = abs(2 * w_plus - center)
    extreme = np.abs(sums - center) >= observed - 1e-9
    return min(1.0, float(extreme.mean()))


def _approx_p(ranks: np.ndarray, abs_diffs: np.ndarray, w_plus: float) -> tuple[float, float]:
    n = len(ranks)
    mu = n * (n + 1) / 4.0
    _, counts = np.unique(abs_diffs, return_counts=True)
    tie_term = float(np.sum(counts ** 3 - counts)) / 48.0
    sigma = np.sqrt(n * (n + 1) * (2 * n + 1) / 24.0 - tie_term)
    if sigma == 0:
        return 0.0, 1.0
    z = max(abs(w_plus - mu) - 0.5, 0.0) / sigma
    return float(z), min(1.0, float(2.0 * norm.sf(z)))


def wilcoxon_signed_rank(
    a: Sequence[float],
    b: Sequence[float],
    method: str = "auto",
) -> WilcoxonResult:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatchError(f"paired samples differ in length: {len(a)} vs {len(b)}")
    if method not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown method: {method}")

    diffs = a - b
    diffs = diffs[diffs != 0]
    n = len(diffs)
    if n < MIN_DIFFERENCES:
        raise TooFewDifferencesError(f"need at least {MIN_DIFFERENCES} nonzero differences, got {n}")

    abs_diffs = np.abs(diffs)
    ranks = rankdata(abs_diffs)
    w_plus = float(ranks[diffs > 0].sum())

    if method == "auto":
        method = "exact" if n <= EXACT_MAX_N else "approx"
    if method == "exact":
        if n > ENUMERATION_LIMIT:
            raise EvaluationError(f"exact enumeration limited to {ENUMERATION_LIMIT} differences, got {n}")
        return WilcoxonResult(w_plus, _exact_p(ranks, w_plus), n, "exact")
    z, p = _approx_p(ranks, abs_diffs, w_plus)
    return WilcoxonResult(w_plus, p, n, "approx", z)
