"""Seasonal-trend decomposition by loess (additive model).

The decomposition alternates cycle-subseries smoothing (seasonal) with a
low-frequency trend fit, both using locally weighted linear regression with
tricube weights. Robustness reweights residuals with the bisquare function.
Edges use asymmetric neighborhoods rather than padding. The seasonal
component is shifted to zero mean over the span of complete periods, with the
constant absorbed by the trend, so observed = trend + seasonal + residual
holds exactly by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InsufficientDataError, ValidationError


@dataclass(frozen=True)
class StlConfig:
    period_samples: int
    seasonal_window: int = 7
    trend_window: Optional[int] = None  # None: smallest odd >= 1.5 * period
    inner_iters: int = 2
    robust_iters: int = 1

    def __post_init__(self):
        if self.period_samples < 2:
            raise ValidationError(f"period_samples must be >= 2, got {self.period_samples}")
        for name in ("seasonal_window", "trend_window"):
            w = getattr(self, name)
            if w is None:
                continue
            if w < 3 or w % 2 == 0:
                raise ValidationError(f"{name} must be odd and >= 3, got {w}")
        if self.inner_iters < 1 or self.robust_iters < 0:
            raise ValidationError("inner_iters must be >= 1 and robust_iters >= 0")

    def effective_trend_window(self) -> int:
        if self.trend_window is not None:
            return self.trend_window
        return _next_odd(int(np.ceil(1.5 * self.period_samples)))


@dataclass(frozen=True)
class Decomposition:
    trend: np.ndarray
    seasonal: np.ndarray
    residual: np.ndarray
    period_samples: int

    def __post_init__(self):
        n = len(self.trend)
        if len(self.seasonal) != n or len(self.residual) != n:
            raise ValidationError("decomposition components must share one length")

    def reconstruct(self) -> np.ndarray:
        return self.trend + self.seasonal + self.residual


def _next_odd(k: int) -> int:
    return k if k % 2 == 1 else k + 1


def _clamp_window(window: int, length: int) -> int:
    w = min(window, length)
    if w % 2 == 0:
        w -= 1
    return max(w, 1)


def _loess_at(y: np.ndarray, positions, window: int, degree: int,
              rho: Optional[np.ndarray] = None) -> np.ndarray:
    """Loess fit of y (uniform integer grid) evaluated at arbitrary positions.

    The neighborhood is the `window` nearest grid indices, one-sided at the
    edges. Tricube weights over normalized distance; optional robustness
    weights multiply in. Falls back to the weighted mean when the local
    linear system degenerates.
    """
    n = len(y)
    half = window // 2
    grid = np.arange(n, dtype=float)
    out = np.empty(len(positions))
    for k, p in enumerate(positions):
        center = int(np.clip(round(p), 0, n - 1))
        lo = int(np.clip(center - half, 0, n - window))
        sl = slice(lo, lo + window)
        x = grid[sl]
        d = np.abs(x - p)
        dmax = d.max()
        if dmax <= 0:
            dmax = 1.0
        w = (1.0 - np.minimum(d / dmax, 1.0) ** 3) ** 3
        if rho is not None:
            w = w * rho[sl]
        sw = w.sum()
        if sw <= 0:
            out[k] = y[center]
            continue
        yb = float(w @ y[sl]) / sw
        if degree == 0:
            out[k] = yb
            continue
        xb = float(w @ x) / sw
        dx = x - xb
        den = float(w @ (dx * dx))
        if den <= 1e-12:
            out[k] = yb
        else:
            slope = float(w @ (dx * (y[sl] - yb))) / den
            out[k] = yb + slope * (p - xb)
    return out


def loess_smooth(series, window: int, degree: int = 1,
                 robust_weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Locally weighted regression over the whole series.

    Reproduces a globally linear input exactly when degree=1 (weighted least
    squares through collinear points is the line itself).
    """
    y = np.asarray(series, dtype=float)
    if window % 2 == 0 or window < 1:
        raise ValidationError(f"window must be odd and >= 1, got {window}")
    if window > len(y):
        raise ValidationError(f"window {window} exceeds series length {len(y)}")
    if degree not in (0, 1):
        raise ValidationError(f"degree must be 0 or 1, got {degree}")
    return _loess_at(y, np.arange(len(y)), window, degree, robust_weights)


def _moving_average(x: np.ndarray, k: int) -> np.ndarray:
    return np.convolve(x, np.full(k, 1.0 / k), mode="valid")


def stl_decompose(series, cfg: StlConfig) -> Decomposition:
    """Additive decomposition observed = trend + seasonal + residual."""
    y = np.asarray(series, dtype=float)
    n = len(y)
    period = cfg.period_samples
    if n < 2 * period:
        raise InsufficientDataError(
            f"series length {n} is below the required minimum {2 * period} "
            f"(two full periods of {period} samples)"
        )
    trend_w = _clamp_window(cfg.effective_trend_window(), n)
    lowpass_w = _clamp_window(_next_odd(period), n)

    rho: Optional[np.ndarray] = None
    trend = np.zeros(n)
    seasonal = np.zeros(n)
    for outer in range(cfg.robust_iters + 1):
        for _ in range(cfg.inner_iters):
            detrended = y - trend
            # Cycle-subseries smoothing, extended one period on each side.
            cycle = np.empty(n + 2 * period)
            for phase in range(period):
                sub = detrended[phase::period]
                m = len(sub)
                sub_w = _clamp_window(cfg.seasonal_window, m)
                rho_sub = None if rho is None else rho[phase::period]
                positions = np.arange(-1.0, m + 1.0)
                vals = _loess_at(sub, positions, sub_w, degree=1, rho=rho_sub)
                cycle[phase::period][: m + 2] = vals
            # Remove the low-frequency content the subseries picked up.
            low = _moving_average(_moving_average(_moving_average(cycle, period), period), 3)
            low = _loess_at(low, np.arange(n), lowpass_w, degree=1)
            seasonal = cycle[period:n + period] - low
            trend = loess_smooth(y - seasonal, trend_w, degree=1, robust_weights=rho)
        if outer < cfg.robust_iters:
            resid = y - trend - seasonal
            rho = _bisquare_weights(resid)

    # Zero-mean convention for the seasonal over complete periods.
    whole = (n // period) * period
    if whole:
        shift = float(seasonal[:whole].mean())
        seasonal = seasonal - shift
        trend = trend + shift
    residual = y - trend - seasonal
    return Decomposition(trend=trend, seasonal=seasonal, residual=residual,
                         period_samples=period)


def _bisquare_weights(resid: np.ndarray) -> np.ndarray:
    scale = 6.0 * np.median(np.abs(resid))
    if scale <= 0:
        return np.ones_like(resid)
    u = np.minimum(np.abs(resid) / scale, 1.0)
    return (1.0 - u * u) ** 2
