"""Sample statistics: distances, moments, tail diagnostics, rate fits.

All estimators here are honest sample-level surrogates: the histogram TV
lower-bounds the true total variation, the tail coefficient comes from a
quantile-range regression, and samples never stand in for exact laws
without the caller labeling them as estimates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .rng import stream


@dataclass(frozen=True)
class RatePoint:
    """One point of a log-log rate regression: x is tau or N."""

    x: float
    err: float
    stderr: float = 0.0

    def __post_init__(self):
        if not (self.x > 0 and math.isfinite(self.x)):
            raise ValidationError("x must be positive and finite")
        if not (self.err >= 0 and math.isfinite(self.err)):
            raise ValidationError("err must be nonnegative and finite")


def empirical_moment(samples, q: float) -> tuple[float, float]:
    """Mean of |x|^q with jackknife standard error.

    Rows of a 2-d input are treated as d-dimensional points (|x| is the
    Euclidean norm); 1-d input is scalar samples.  For the sample mean the
    leave-one-out jackknife collapses to std(y, ddof=1)/sqrt(m), which is
    what is computed.
    """
    if q < 1:
        raise ValidationError("q must be >= 1")
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        radial = np.abs(arr)
    elif arr.ndim == 2:
        radial = np.linalg.norm(arr, axis=1)
    else:
        raise ValidationError("samples must be 1-d or 2-d")
    if radial.size < 2:
        raise ValidationError("need at least two samples")
    y = radial**q
    return float(y.mean()), float(y.std(ddof=1) / math.sqrt(y.size))


def w1_1d(a, b) -> float:
    """Empirical Wasserstein-1 distance between two scalar samples.

    Equal counts: mean absolute gap between order statistics (the exact
    empirical W1).  Unequal counts: both empirical quantile functions are
    evaluated at the midpoint grid of the finer size (quantile-matched
    variant; linear interpolation between order statistics).
    """
    av = np.sort(np.asarray(a, dtype=float).ravel())
    bv = np.sort(np.asarray(b, dtype=float).ravel())
    if av.size == 0 or bv.size == 0:
        raise ValidationError("samples must be non-empty")
    if av.size == bv.size:
        return float(np.abs(av - bv).mean())
    m = max(av.size, bv.size)
    grid = (np.arange(m) + 0.5) / m
    qa = np.quantile(av, grid, method="linear")
    qb = np.quantile(bv, grid, method="linear")
    return float(np.abs(qa - qb).mean())


def w1_sliced(a, b, directions: int = 64, seed: int = 0) -> float:
    """Sliced W1 for d > 1: average of w1_1d over a fixed seeded set of
    random unit directions.  For d = 1 inputs this reduces to w1_1d up to
    the sign-symmetric direction average."""
    av = np.atleast_2d(np.asarray(a, dtype=float))
    bv = np.atleast_2d(np.asarray(b, dtype=float))
    if av.shape[1] != bv.shape[1]:
        raise ValidationError("dimension mismatch")
    if directions < 1:
        raise ValidationError("need at least one direction")
    d = av.shape[1]
    g = stream(seed, "sliced-w1-directions").standard_normal((directions, d))
    units = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    return float(np.mean([w1_1d(av @ u, bv @ u) for u in units]))


@dataclass(frozen=True)
class HistTv:
    value: float
    clipped_fraction_a: float
    clipped_fraction_b: float


def hist_tv_report(a, b, bins: int, value_range: tuple[float, float]) -> HistTv:
    """Histogram total-variation surrogate with out-of-range accounting.

    Mass outside value_range is clipped into the edge bins (and its
    fraction reported); the result lower-bounds the true TV because
    binning merges events.
    """
    if bins < 2:
        raise ValidationError("need bins >= 2")
    lo, hi = float(value_range[0]), float(value_range[1])
    if not lo < hi:
        raise ValidationError("empty range")
    av = np.asarray(a, dtype=float).ravel()
    bv = np.asarray(b, dtype=float).ravel()
    if av.size == 0 or bv.size == 0:
        raise ValidationError("samples must be non-empty")
    clip_a = float(np.mean((av < lo) | (av > hi)))
    clip_b = float(np.mean((bv < lo) | (bv > hi)))
    edges = np.linspace(lo, hi, bins + 1)
    pa = np.histogram(np.clip(av, lo, hi), bins=edges)[0] / av.size
    pb = np.histogram(np.clip(bv, lo, hi), bins=edges)[0] / bv.size
    return HistTv(float(0.5 * np.abs(pa - pb).sum()), clip_a, clip_b)


def hist_tv(a, b, bins: int, value_range: tuple[float, float]) -> float:
    return hist_tv_report(a, b, bins, value_range).value


def fit_gaussian(samples) -> tuple[float, float]:
    """Moment-matched (mean, variance), ddof=1."""
    arr = np.asarray(samples, dtype=float).ravel()
    if arr.size < 2:
        raise ValidationError("need at least two samples")
    return float(arr.mean()), float(arr.var(ddof=1))


@dataclass(frozen=True)
class TailFit:
    """Result of fitting P(|X| > t) ~ 2 exp(-t^2 / C^2)."""

    coefficient: float  # fitted C; nan when unavailable
    r_squared: float
    n_points: int
    available: bool


def subgaussian_tail(
    samples,
    q_lo: float = 0.90,
    q_hi: float = 0.999,
    grid_points: int = 25,
    min_samples: int = 100,
) -> TailFit:
    """Regress ln P(|X| > t) on -t^2 over the [q_lo, q_hi] quantile range.

    The slope beta gives C = 1/sqrt(beta); R^2 near 1 marks a
    gaussian-like tail, visibly low R^2 flags heavier tails.  Fewer than
    min_samples samples, a degenerate quantile range, or a nonpositive
    slope mark the fit unavailable instead of raising.
    """
    arr = np.abs(np.asarray(samples, dtype=float).ravel())
    unavailable = TailFit(math.nan, math.nan, 0, False)
    if arr.size < min_samples:
        return unavailable
    t_lo, t_hi = np.quantile(arr, [q_lo, q_hi])
    if not (t_hi > t_lo > 0):
        return unavailable
    ts = np.linspace(t_lo, t_hi, grid_points)
    sf = (arr[None, :] > ts[:, None]).mean(axis=1)
    keep = sf > 0
    if keep.sum() < 5:
        return unavailable
    x = -(ts[keep] ** 2)
    y = np.log(sf[keep])
    slope, intercept = np.polyfit(x, y, 1)
    if slope <= 0:
        return unavailable
    resid = y - (slope * x + intercept)
    total = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / total if total > 0 else 0.0
    return TailFit(float(1.0 / math.sqrt(slope)), r2, int(keep.sum()), True)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    n_used: int
    n_excluded: int  # zero-err or non-finite points dropped before the fit


def regress_rate(points: Sequence[RatePoint]) -> RateFit:
    """Least squares of ln err on ln x.

    Points with err == 0 cannot enter a log fit and are excluded (count
    reported); fewer than 3 usable points is an error.
    """
    usable = [pt for pt in points if pt.err > 0]
    excluded = len(points) - len(usable)
    if len(usable) < 3:
        raise ValidationError(f"need >= 3 points with err > 0, have {len(usable)}")
    x = np.log([pt.x for pt in usable])
    y = np.log([pt.err for pt in usable])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / total if total > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2, len(usable), excluded)
