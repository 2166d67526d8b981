"""Summary statistics shared by the Monte Carlo estimators and the experiment reports."""

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class Moments:
    """Running count / mean / sum of squared deviations; merges are associative."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def from_samples(cls, x) -> "Moments":
        x = np.asarray(x, dtype=float).ravel()
        if x.size == 0:
            return cls()
        mu = float(x.mean())
        return cls(n=int(x.size), mean=mu, m2=float(((x - mu) ** 2).sum()))

    def merge(self, other: "Moments") -> "Moments":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return Moments(n=n, mean=mean, m2=m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n > 1 else 0.0


def pool_moments(parts: Iterable[Moments]) -> Moments:
    """Merge shard summaries in the order given."""
    out = Moments()
    for part in parts:
        out = out.merge(part)
    return out


def mean_stderr(values, weights=None) -> Tuple[float, float]:
    """Sample mean and its standard error; with weights the mean is exact and stderr 0."""
    x = np.asarray(values, dtype=float)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        return float(np.dot(w, x) / w.sum()), 0.0
    m = Moments.from_samples(x)
    return m.mean, m.stderr


def ratio_stats(a, b, weights=None) -> Tuple[float, float]:
    """mean(a) / mean(b) with the paired delta-method stderr sd(a - r b) / (sqrt(n) |mean b|).

    Returns (nan, nan) when mean(b) is zero.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    abar, _ = mean_stderr(a, weights)
    bbar, _ = mean_stderr(b, weights)
    if bbar == 0.0:
        return math.nan, math.nan
    r = abar / bbar
    if weights is not None or a.size < 2:
        return r, 0.0
    resid = a - r * b
    se = float(np.std(resid, ddof=1) / (math.sqrt(a.size) * abs(bbar)))
    return r, se


def ratio_of_estimates(a: float, a_se: float, b: float, b_se: float) -> Tuple[float, float]:
    """a / b for independent estimates, stderr by the first-order delta method."""
    if b == 0.0:
        return math.nan, math.nan
    r = a / b
    se = abs(r) * math.sqrt((a_se / a) ** 2 + (b_se / b) ** 2) if a != 0.0 else abs(a_se / b)
    return r, se


def envelope(a, b, groups: int, weights=None) -> Tuple[float, float]:
    """(min, max) of mean(a)/mean(b) over `groups` contiguous sub-ensembles.

    Sub-ensembles whose b-mean is zero are skipped; (nan, nan) if all are.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w = np.ones_like(a) if weights is None else np.asarray(weights, dtype=float)
    groups = max(1, min(groups, a.size))
    ratios = []
    for idx in np.array_split(np.arange(a.size), groups):
        bb = float(np.dot(w[idx], b[idx]))
        if bb > 0.0:
            ratios.append(float(np.dot(w[idx], a[idx])) / bb)
    if not ratios:
        return math.nan, math.nan
    return min(ratios), max(ratios)


def within(x: float, target: float, stderr: float, k: float = 4.0, floor: float = 1e-12) -> bool:
    """|x - target| <= k * stderr (with an absolute floor for exact branches)."""
    return abs(x - target) <= k * stderr + floor * max(1.0, abs(target))


def combine_stderr(*parts: Optional[float]) -> float:
    return math.sqrt(sum(p * p for p in parts if p is not None))
