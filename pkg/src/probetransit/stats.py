"""Error metrics, the paired Wilcoxon signed-rank test, and t-based confidence intervals."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy import stats as _sps

from .errors import UsageError

METRICS = ("mae", "median_ae", "std_ae", "rmse", "r2")
EXACT_MAX_N = 20


@dataclass(frozen=True)
class MetricBundle:
    mae: float
    median_ae: float
    std_ae: float
    rmse: float
    r2: float | None  # None when the truth vector is constant

    def get(self, name):
        return getattr(self, name)


def metric_bundle(truth, estimate):
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape or truth.ndim != 1:
        raise UsageError(f"truth and estimate shapes differ: {truth.shape} vs {estimate.shape}")
    if len(truth) == 0:
        raise UsageError("metric_bundle needs at least one element")
    resid = truth - estimate
    err = np.abs(resid)
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    r2 = None if ss_tot == 0.0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return MetricBundle(
        mae=float(err.mean()),
        median_ae=float(np.median(err)),
        std_ae=float(err.std()),
        rmse=math.sqrt(float(np.mean(err ** 2))),
        r2=r2,
    )


@dataclass(frozen=True)
class RankTestResult:
    statistic_w: float
    p_value: float
    n_effective: int
    method: str  # "exact" | "normal_approx"


def _signed_ranks(a, b):
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[d != 0]
    ranks = _sps.rankdata(np.abs(d))  # mid-ranks for ties
    return d, ranks


def _exact_lower_count(rank2, w2):
    """Number of sign vectors whose doubled positive-rank sum is <= w2."""
    total = int(rank2.sum())
    dist = np.zeros(total + 1, dtype=np.int64)
    dist[0] = 1
    top = 0
    for r in rank2:
        r = int(r)
        dist[r:top + r + 1] += dist[:top + 1].copy()
        top += r
    return int(dist[: w2 + 1].sum())


def wilcoxon_signed_rank(a, b, method="auto"):
    """Two-sided paired Wilcoxon signed-rank test on ``a - b``.

    Zero differences are dropped and ties get mid-ranks. With ``method="auto"``
    the exact null distribution is used for up to 20 non-zero pairs and the
    tie-corrected normal approximation (with continuity correction) beyond.
    """
    if len(a) != len(b):
        raise UsageError(f"paired samples differ in length: {len(a)} vs {len(b)}")
    if method not in ("auto", "exact", "normal"):
        raise UsageError(f"unknown method {method!r}")
    d, ranks = _signed_ranks(a, b)
    n = len(d)
    if n == 0:
        return RankTestResult(0.0, 1.0, 0, "exact")
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)

    if method == "exact" or (method == "auto" and n <= EXACT_MAX_N):
        rank2 = np.rint(ranks * 2).astype(np.int64)
        count = _exact_lower_count(rank2, int(round(2 * w)))
        p = min(1.0, 2 * count / 2 ** n)
        return RankTestResult(w, p, n, "exact")

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
    if var <= 0:
        return RankTestResult(w, 1.0, n, "normal_approx")
    z = max(abs(w - mean) - 0.5, 0.0) / math.sqrt(var)
    p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return RankTestResult(w, p, n, "normal_approx")


def t_quantile(q, df):
    """Student-t quantile via the regularized incomplete-beta inverse."""
    if not 0.0 < q < 1.0:
        raise UsageError(f"quantile level {q} outside (0, 1)")
    if q == 0.5:
        return 0.0
    tail = min(q, 1.0 - q)
    x = special.betaincinv(df / 2.0, 0.5, 2.0 * tail)
    t = math.sqrt(df * (1.0 - x) / x)
    return t if q > 0.5 else -t


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    mean: float
    std: float
    count: int


def mean_ci95(samples):
    """Mean +/- t(0.975, n-1) * s / sqrt(n), with s the sample standard deviation."""
    x = np.asarray([s for s in samples if s is not None], dtype=float)
    n = len(x)
    if n < 2:
        raise UsageError(f"need at least 2 samples for a confidence interval, got {n}")
    mean = float(x.mean())
    std = float(x.std(ddof=1))
    half = t_quantile(0.975, n - 1) * std / math.sqrt(n)
    return ConfidenceInterval(mean - half, mean + half, mean, std, n)
