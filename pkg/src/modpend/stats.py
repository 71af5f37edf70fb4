"""Splitting-fluctuation statistics.

In a mixed phase space the doublet splitting fluctuates over orders of
magnitude as parameters vary; normalized by its typical value it follows a
Cauchy law with CDF (2/pi) arctan(delta_s).  A regular regime instead shows
a clean exponential ln(delta) ~ -S / hbar_eff.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError


@dataclass
class FluctuationEnsemble:
    samples: np.ndarray        # raw splittings
    delta_typ: float
    normalized: np.ndarray     # delta / delta_typ


def normalize_fluctuations(samples, min_samples: int = 50) -> FluctuationEnsemble:
    """Normalize splittings by their typical value (the median).

    The half-Cauchy law has median exactly 1, so the median normalization
    is self-consistent: median(normalized) = 1 by construction.
    """
    arr = np.asarray([s.delta if hasattr(s, "delta") else s for s in samples],
                     dtype=float)
    arr = arr[np.isfinite(arr)]
    if len(arr) < min_samples:
        raise InsufficientDataError(
            f"need >= {min_samples} samples, got {len(arr)}")
    typ = float(np.median(arr))
    if typ <= 0:
        raise InsufficientDataError("median splitting must be positive")
    return FluctuationEnsemble(samples=arr, delta_typ=typ,
                               normalized=arr / typ)


def cauchy_cdf(delta_s):
    """CDF of the normalized half-Cauchy law, (2/pi) arctan(delta_s)."""
    return 2.0 / math.pi * np.arctan(np.asarray(delta_s, dtype=float))


def cauchy_gof(ensemble: FluctuationEnsemble) -> float:
    """Two-sided Kolmogorov-Smirnov distance against the half-Cauchy CDF."""
    x = np.sort(ensemble.normalized)
    n = len(x)
    cdf = cauchy_cdf(x)
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


@dataclass
class RegularFit:
    action: float             # S in delta ~ exp(-S / hbar_eff)
    prefactor: float          # intercept of ln delta vs 1/hbar_eff
    residual: float           # RMS residual in log space


class RegimeWarning(UserWarning):
    """The sweep does not look like a clean regular-regime exponential."""


def regular_action_fit(samples) -> RegularFit:
    """Fit ln(delta) = prefactor - S / hbar_eff over a sweep.

    Issues a RegimeWarning when the data are non-monotone with a small
    log-range, the signature of a chaos-dominated sweep.
    """
    pairs = [(s.hbar_eff, s.delta) if hasattr(s, "delta") else tuple(s)
             for s in samples]
    pairs = [(h, d) for h, d in pairs if d > 0 and math.isfinite(d)]
    if len(pairs) < 3:
        raise InsufficientDataError("need >= 3 positive splittings")
    inv_h = np.array([1.0 / h for h, _ in pairs])
    log_d = np.array([math.log(d) for _, d in pairs])
    slope, intercept = np.polyfit(inv_h, log_d, 1)
    resid = log_d - (slope * inv_h + intercept)
    rms = float(np.sqrt(np.mean(resid ** 2)))
    order = np.argsort(inv_h)
    monotone = np.all(np.diff(log_d[order]) <= 0) or np.all(
        np.diff(log_d[order]) >= 0)
    log_range = float(np.ptp(log_d))
    if (not monotone and log_range < 2.0) or rms > 0.1 * max(log_range, 1e-12):
        warnings.warn("sweep does not follow a clean exponential law; "
                      f"rms {rms:.3g} over log-range {log_range:.3g}",
                      RegimeWarning)
    return RegularFit(action=float(-slope), prefactor=float(intercept),
                      residual=rms)


@dataclass
class CorrelationScale:
    scale: float
    lower_bound_only: bool    # True when no 1/e crossing inside the window


def beta_correlation_scale(beta_grid, deltas,
                           min_points: int = 100) -> CorrelationScale:
    """Correlation scale of ln(delta) along beta: first 1/e crossing (or
    first zero) of the autocorrelation.

    Returns a flagged lower bound when the autocorrelation never crosses
    within the sampled window.
    """
    b = np.asarray(beta_grid, dtype=float)
    d = np.asarray([s.delta if hasattr(s, "delta") else s for s in deltas],
                   dtype=float)
    if len(b) < min_points:
        raise InsufficientDataError(f"need >= {min_points} grid points")
    steps = np.diff(b)
    if np.max(np.abs(steps - steps[0])) > 1e-9 * abs(steps[0]):
        raise InsufficientDataError("beta grid must be uniform")
    y = np.log(d)
    y = y - y.mean()
    n = len(y)
    # unbiased estimator: without the 1/(n - lag) correction the triangular
    # window forces an artificial decay and a slowly varying signal can never
    # report a lower bound
    acf = np.correlate(y, y, mode="full")[n - 1:] / (n - np.arange(n))
    acf = acf / acf[0]
    threshold = 1.0 / math.e
    # beyond a quarter of the window the estimate rests on too few pairs to
    # trust; structure correlated past that point yields a flagged lower bound
    max_lag = n // 4
    for lag in range(1, max_lag + 1):
        if acf[lag] <= threshold:
            # linear interpolation between lag-1 and lag
            a0, a1 = acf[lag - 1], acf[lag]
            frac = (a0 - threshold) / (a0 - a1) if a0 != a1 else 0.0
            return CorrelationScale(scale=float((lag - 1 + frac) * steps[0]),
                                    lower_bound_only=False)
    return CorrelationScale(scale=float(max_lag * steps[0]),
                            lower_bound_only=True)


def half_cauchy_samples(n: int, seed: int = 0) -> np.ndarray:
    """Synthetic draws from the half-Cauchy law via the inverse CDF
    tan(pi u / 2); handy as a statistics oracle."""
    rng = np.random.default_rng(seed)
    return np.tan(math.pi * rng.uniform(size=n) / 2.0)
