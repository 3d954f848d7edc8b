"""Monte Carlo aggregation and statistical testing primitives.

Replicate statistics merge associatively and are always folded in
replicate-index order, so every reported number is independent of worker
count and completion order.  Normal-approximation intervals throughout;
Clopper-Pearson is provided for the zero-success edge of rare-event
estimates, where the normal interval degenerates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _sps

_Z = {0.95: 1.959963984540054, 0.99: 2.5758293035489004, "3-sigma": 3.0}


@dataclass
class McSummary:
    """Streaming count/mean/M2 summary (M2 = sum of squared deviations).

    Merging follows the parallel Welford update, so a tree of partial
    summaries reproduces the single-pass result to rounding.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    quantiles: dict | None = None

    @property
    def variance(self) -> float:
        if self.count < 2:
            return 0.0
        return self.m2 / (self.count - 1)

    @property
    def se(self) -> float:
        if self.count < 1:
            return math.inf
        return math.sqrt(self.variance / self.count)

    @classmethod
    def from_samples(cls, samples, q=()) -> "McSummary":
        x = np.asarray(samples, dtype=float)
        n = x.size
        if n == 0:
            return cls()
        mean = float(x.mean())
        m2 = float(np.sum((x - mean) ** 2))
        qs = {float(p): float(np.quantile(x, p)) for p in q} or None
        return cls(count=n, mean=mean, m2=m2, quantiles=qs)

    def push(self, x: float) -> None:
        # classic Welford single-observation update
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += d * (x - self.mean)

    def merge(self, other: "McSummary") -> "McSummary":
        if other.count == 0:
            return McSummary(self.count, self.mean, self.m2)
        if self.count == 0:
            return McSummary(other.count, other.mean, other.m2)
        n = self.count + other.count
        d = other.mean - self.mean
        mean = self.mean + d * other.count / n
        m2 = self.m2 + other.m2 + d * d * self.count * other.count / n
        return McSummary(count=n, mean=mean, m2=m2)


def merge_summaries(parts) -> McSummary:
    """Fold partial summaries in the given (replicate-index) order."""
    acc = McSummary()
    for p in parts:
        acc = acc.merge(p)
    return acc


def welford_summary(samples) -> McSummary:
    """Single-pass reference recomputation (cross-check for from_samples)."""
    acc = McSummary()
    for x in np.asarray(samples, dtype=float):
        acc.push(float(x))
    return acc


def mc_mean_ci(samples, level=0.95) -> tuple[float, float]:
    """(mean, z*SE) normal-approximation interval.

    level is 0.95, 0.99, or "3-sigma".
    """
    if level not in _Z:
        raise ValueError(f"unsupported level {level!r}")
    s = samples if isinstance(samples, McSummary) else McSummary.from_samples(samples)
    if s.count < 2:
        raise ValueError("need at least 2 samples for a CI")
    return s.mean, _Z[level] * s.se


def bernoulli_test(successes: int, n: int, p0: float) -> float:
    """z-score of an observed success count against Bernoulli(p0)."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= successes <= n:
        raise ValueError("successes outside [0, n]")
    if not 0 < p0 < 1:
        raise ValueError("p0 must be in (0, 1)")
    return (successes / n - p0) / math.sqrt(p0 * (1 - p0) / n)


def clopper_pearson(successes: int, n: int, conf=0.95) -> tuple[float, float]:
    """Exact binomial CI; intended for the zero/full-success edges."""
    if n <= 0:
        raise ValueError("n must be positive")
    a = 1 - conf
    lo = 0.0 if successes == 0 else float(_sps.beta.ppf(a / 2, successes, n - successes + 1))
    hi = 1.0 if successes == n else float(_sps.beta.ppf(1 - a / 2, successes + 1, n - successes))
    return lo, hi


def empirical_laplace(samples, lam_grid) -> tuple[np.ndarray, np.ndarray]:
    """Mean of exp(-lam*X) per lam with its SE; samples must be >= 0."""
    x = np.asarray(samples, dtype=float)
    if x.size and x.min() < 0:
        raise ValueError("Laplace transform needs nonnegative samples")
    lams = np.asarray(lam_grid, dtype=float)
    vals = np.empty(lams.size)
    ses = np.empty(lams.size)
    for i, lam in enumerate(lams):
        e = np.exp(-lam * x)
        vals[i] = e.mean()
        ses[i] = e.std(ddof=1) / math.sqrt(e.size) if e.size > 1 else math.inf
    return vals, ses


def loglog_regression(points) -> tuple[float, float, float]:
    """OLS of log y on log x; returns (slope, intercept, slope stderr)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("need >= 3 (x, y) points")
    if np.any(pts <= 0):
        raise ValueError("log-log regression needs positive coordinates")
    lx = np.log(pts[:, 0])
    ly = np.log(pts[:, 1])
    n = lx.size
    mx = lx.mean()
    sxx = float(np.sum((lx - mx) ** 2))
    if sxx == 0:
        raise ValueError("degenerate abscissae")
    slope = float(np.sum((lx - mx) * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * mx)
    resid = ly - (intercept + slope * lx)
    s2 = float(np.sum(resid ** 2)) / (n - 2) if n > 2 else 0.0
    return slope, intercept, math.sqrt(s2 / sxx)


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("KS needs nonempty samples")
    res = _sps.ks_2samp(a, b, method="asymp")
    return float(res.statistic), float(res.pvalue)
