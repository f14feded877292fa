"""Estimate a generator spec from an observed series.

Per feature: OLS trend, then periodogram peaks, then least-squares sinusoids
at those peaks.  The deseasonalized residuals of all observed features are
pooled for one AR fit, because the generator shares its AR coefficients
across the features of a client.  The fitted spec uses identity skew.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import FitError
from .sdg import ClientSpec, SeasonalComponent, SeriesPanel, companion_spectral_radius

CRITERIA = ("aic", "bic")


class TrendWarning(UserWarning):
    """The series handed to the periodogram still carries a strong linear trend."""


class TrendFit(NamedTuple):
    slope: float
    intercept: float
    r2: float


class Peak(NamedTuple):
    period: float
    power: float


class ARFit(NamedTuple):
    coeffs: tuple
    sigma: float
    order: int
    intercept: float
    criteria: tuple  # criterion value for p = 0..p_max


@dataclass(frozen=True)
class FitReport:
    spec: ClientSpec
    trend_r2: tuple
    selected_order: int
    criterion_used: str
    periodogram_peaks: tuple  # per feature: the accepted peaks at bin resolution
    residual_std: tuple

    def as_dict(self) -> dict:
        s = self.spec
        return {
            "client_id": s.client_id,
            "feature_count": s.feature_count,
            "trend_slope": list(s.trend_slope),
            "noise_mean": list(s.noise_mean),
            "noise_std": list(s.noise_std),
            "ar_coeffs": list(s.ar_coeffs),
            "seasonal": [
                [{"amplitude": c.amplitude, "period": c.period, "phase": c.phase} for c in comps]
                for comps in s.seasonal
            ],
            "trend_r2": list(self.trend_r2),
            "selected_order": self.selected_order,
            "criterion_used": self.criterion_used,
            "periodogram_peaks": [[list(p) for p in peaks] for peaks in self.periodogram_peaks],
            "residual_std": list(self.residual_std),
        }


def _series(x, name="series") -> np.ndarray:
    y = np.asarray(x, dtype=float)
    if y.ndim != 1:
        raise FitError(f"{name} must be one-dimensional", stage="input")
    if not np.all(np.isfinite(y)):
        raise FitError(f"{name} contains non-finite values", stage="input")
    return y


def fit_trend_ols(series) -> TrendFit:
    """Closed-form OLS of ``y_t`` on ``(1, t)`` with ``t = 1..n``."""
    y = _series(series)
    n = y.size
    if n < 3:
        raise FitError(f"trend fit needs at least 3 points, got {n}", stage="trend")
    t = np.arange(1, n + 1, dtype=float)
    tc = t - t.mean()
    yc = y - y.mean()
    slope = float(np.dot(tc, yc) / np.dot(tc, tc))
    intercept = float(y.mean() - slope * t.mean())
    resid = yc - slope * tc
    sst = float(np.dot(yc, yc))
    ssr = float(np.dot(resid, resid))
    r2 = 1.0 if sst == 0.0 else 1.0 - ssr / sst
    return TrendFit(slope, intercept, r2)


def periodogram(series) -> np.ndarray:
    """``|X_k|^2 / N`` for ``k = 0..N//2`` of the mean-removed series."""
    y = _series(series)
    return np.abs(np.fft.rfft(y - y.mean())) ** 2 / y.size


def periodogram_peaks(series, max_peaks: int = 3, check_trend: bool = True) -> list:
    """The ``max_peaks`` highest local maxima of the periodogram, as ``(N/k, power)``.

    Bin 0 is excluded.  Equal powers are ordered by the lower frequency.  A
    plateau counts once, at its lowest-frequency bin.
    """
    y = _series(series)
    if y.size < 8:
        raise FitError(f"periodogram needs at least 8 points, got {y.size}", stage="periodogram")
    if max_peaks < 1:
        raise FitError("max_peaks must be positive", stage="periodogram")
    if check_trend and fit_trend_ols(y).r2 > 0.5:
        warnings.warn("series looks trended; detrend before peak picking", TrendWarning, stacklevel=2)
    p = periodogram(y)[1:]
    left = np.concatenate(([-np.inf], p[:-1]))
    right = np.concatenate((p[1:], [-np.inf]))
    idx = np.flatnonzero((p > left) & (p >= right))
    # lexsort: last key is primary
    order = np.lexsort((idx, -p[idx]))[:max_peaks]
    N = y.size
    return [Peak(N / float(idx[i] + 1), float(p[idx[i]])) for i in order]


def _smoothed(p: np.ndarray, half: int) -> np.ndarray:
    w = 2 * half + 1
    c = np.concatenate(([0.0], np.cumsum(p)))
    n = p.size
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) + half + 1, 0, n)
    return (c[hi] - c[lo]) / (hi - lo) if w > 1 else p.copy()


def dominance(series, period: float, half: int = 3, window: int = 50) -> float:
    """Smoothed power at ``period`` over the local median of the smoothed periodogram.

    The raw periodogram of white noise has roughly exponential ordinates, so
    its largest value routinely exceeds five times the median.  Averaging
    ``2*half+1`` bins removes that tail; the local baseline (``window`` bins
    each side, the peak's own neighbourhood excluded) follows a coloured
    noise spectrum.
    """
    y = _series(series)
    p = periodogram(y)[1:]
    ps = _smoothed(p, half)
    N = y.size
    i = int(round(N / period)) - 1
    lo, hi = max(0, i - window), min(ps.size, i + window + 1)
    j = np.arange(lo, hi)
    base = ps[j[np.abs(j - i) > 2 * half + 1]]
    if base.size == 0:
        base = ps
    med = float(np.median(base))
    if med <= 0.0:
        return np.inf if ps[i] > 0 else 0.0
    return float(ps[i] / med)


def dominant_peaks(series, max_peaks: int = 3, ratio: float = 5.0) -> list:
    """Peaks whose :func:`dominance` exceeds ``ratio``.

    An empty list means the series has no dominant period.
    """
    y = _series(series)
    return [
        pk
        for pk in periodogram_peaks(y, max_peaks, check_trend=False)
        if dominance(y, pk.period) > ratio
    ]


def _ar_design(y: np.ndarray, p: int, start: int):
    rows = y.size - start
    X = np.ones((rows, p + 1))
    for i in range(1, p + 1):
        X[:, i] = y[start - i : y.size - i]
    return X, y[start:]


def fit_ar(residuals, p_max: int = 10, criterion: str = "bic") -> ARFit:
    """Conditional least-squares AR fit with the order chosen by AIC or BIC.

    ``residuals`` is one series or a list of series sharing coefficients.
    Every order is fitted on the same rows (those after the first ``p_max``
    of each series), so the criteria compare like with like:
    ``AIC = n ln s2 + 2(p+1)`` and ``BIC = n ln s2 + (p+1) ln n``.
    """
    if criterion not in CRITERIA:
        raise FitError(f"criterion must be one of {CRITERIA}", stage="ar")
    if p_max < 0:
        raise FitError("p_max must be nonnegative", stage="ar")
    if isinstance(residuals, np.ndarray) and residuals.ndim == 1:
        parts = [residuals]
    elif isinstance(residuals, (list, tuple)) and residuals and np.ndim(residuals[0]) == 1:
        parts = list(residuals)
    else:
        parts = [residuals]
    parts = [_series(r, "residuals") for r in parts]
    for r in parts:
        if r.size <= 2 * p_max:
            raise FitError(f"AR fit needs more than {2 * p_max} points, got {r.size}", stage="ar")

    crits, fits = [], []
    n = sum(r.size - p_max for r in parts)
    for p in range(p_max + 1):
        blocks = [_ar_design(r, p, p_max) for r in parts]
        X = np.vstack([b[0] for b in blocks])
        z = np.concatenate([b[1] for b in blocks])
        beta, *_ = np.linalg.lstsq(X, z, rcond=None)
        e = z - X @ beta
        s2 = float(np.dot(e, e) / n)
        fits.append((beta, s2))
        if s2 <= 1e-24 * (1.0 + float(np.dot(z, z)) / n):
            # exact fit: nothing left to explain, stop at the smallest such order
            crits.append(-np.inf)
            break
        penalty = 2.0 * (p + 1) if criterion == "aic" else (p + 1) * np.log(n)
        crits.append(n * np.log(s2) + penalty)
    order = int(np.argmin(crits))
    beta, s2 = fits[order]
    crits += [np.nan] * (p_max + 1 - len(crits))
    return ARFit(tuple(float(b) for b in beta[1:]), float(np.sqrt(s2)), order, float(beta[0]), tuple(crits))


def _sincos(t, periods):
    cols = []
    for T in periods:
        w = 2.0 * np.pi * t / T
        cols += [np.sin(w), np.cos(w)]
    return np.column_stack(cols) if cols else np.zeros((t.size, 0))


def _fit_sinusoids(r, t, periods):
    X = _sincos(t, periods)
    if X.shape[1] == 0:
        return np.zeros(0), np.zeros_like(r)
    coef, *_ = np.linalg.lstsq(X, r, rcond=None)
    return coef, X @ coef


def _refine_period(r, t, k, N):
    """Continuous frequency near bin ``k`` maximizing the explained sinusoid power."""

    def neg(f):
        _, fitted = _fit_sinusoids(r, t, [1.0 / f])
        return -float(np.dot(fitted, fitted))

    lo, hi = (k - 0.5) / N, (k + 0.5) / N
    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-3 / N})
    return 1.0 / float(res.x)


def extract_seasonal(r, t, max_peaks=3, ratio=5.0, refine=True):
    """Peel sinusoids off ``r`` one dominant peak at a time.

    Re-running the periodogram after each removal keeps spectral leakage of a
    strong off-bin sinusoid from being mistaken for further periods.  Returns
    accepted bin peaks, the (possibly refined) periods and the joint fit.
    """
    N = r.size
    peaks, periods = [], []
    work = r.copy()
    scale = float(np.dot(r, r)) / N
    for _ in range(max_peaks):
        if scale <= 1e-20 or float(np.dot(work, work)) / N <= 1e-18 * scale:
            break
        pk = periodogram_peaks(work, 1, check_trend=False)[0]
        if not dominance(work, pk.period) > ratio:
            break
        k = int(round(N / pk.period))
        if any(abs(int(round(N / q.period)) - k) <= 1 for q in peaks):
            break
        peaks.append(pk)
        periods.append(_refine_period(work, t, k, N) if refine else pk.period)
        _, fitted = _fit_sinusoids(r, t, periods)
        work = r - fitted
    coef, fitted = _fit_sinusoids(r, t, periods)
    return peaks, periods, coef, fitted


def fit_sdg(
    panel: SeriesPanel,
    max_peaks: int = 3,
    p_max: int = 10,
    criterion: str = "bic",
    pooled: bool = True,
    dominance: float = 5.0,
    refine_periods: bool = True,
    client_id: str = None,
) -> FitReport:
    """Fit a generator spec, one feature at a time, then a shared AR model."""
    if not isinstance(panel, SeriesPanel):
        raise FitError("fit_sdg expects a SeriesPanel", stage="input")
    F = panel.feature_count
    obs = [f for f in range(F) if panel.observed[f]]
    if not obs:
        raise FitError("panel has no observed features", stage="input")
    shift = panel.t_origin - 1
    t = np.arange(1, panel.length + 1, dtype=float)

    slopes, levels, r2s = [0.0] * F, [0.0] * F, [1.0] * F
    seasonal = [() for _ in range(F)]
    all_peaks = [() for _ in range(F)]
    residuals = {}
    for f in obs:
        y = panel.values[f]
        try:
            tr = fit_trend_ols(y)
        except FitError as exc:
            raise FitError(f"feature {f}: {exc}", stage="trend") from exc
        slopes[f], r2s[f] = tr.slope, tr.r2
        # the generator's clock starts at t_origin; express the level at t = 0
        levels[f] = tr.intercept - tr.slope * shift
        r = y - (tr.slope * t + tr.intercept)
        try:
            peaks, periods, coef, fitted = extract_seasonal(r, t + shift, max_peaks, dominance, refine_periods)
        except FitError as exc:
            raise FitError(f"feature {f}: {exc}", stage="seasonal") from exc
        comps = []
        for j, T in enumerate(periods):
            a, b = coef[2 * j], coef[2 * j + 1]
            comps.append(SeasonalComponent(float(np.hypot(a, b)), float(T), float(np.arctan2(b, a))))
        seasonal[f] = tuple(comps)
        all_peaks[f] = tuple(peaks)
        residuals[f] = r - fitted

    try:
        if pooled:
            ar = fit_ar([residuals[f] for f in obs], p_max, criterion)
            ar_per = {f: ar for f in obs}
        else:
            # per-feature orders may differ; the fitted ClientSpec keeps the first feature's model
            ar_per = {f: fit_ar(residuals[f], p_max, criterion) for f in obs}
            ar = ar_per[obs[0]]
    except FitError as exc:
        raise FitError(str(exc), stage="ar") from exc
    if companion_spectral_radius(ar.coeffs) >= 1.0:
        raise FitError("fitted AR model is not stationary", stage="ar")

    phi_sum = float(np.sum(ar.coeffs))
    noise_mean, noise_std = [0.0] * F, [0.0] * F
    for f in obs:
        e = _ar_innovations(residuals[f], ar_per[f], p_max)
        noise_std[f] = float(np.sqrt(np.mean(e**2)))
        noise_mean[f] = levels[f] * (1.0 - phi_sum) + ar_per[f].intercept

    spec = ClientSpec(
        client_id=client_id or panel.client_id,
        feature_count=F,
        seasonal=tuple(seasonal),
        ar_coeffs=ar.coeffs,
        trend_slope=tuple(slopes),
        noise_mean=tuple(noise_mean),
        noise_std=tuple(noise_std),
        observed_features=tuple(panel.observed),
    )
    spec.validate()
    return FitReport(
        spec,
        tuple(r2s[f] for f in obs),
        ar.order,
        criterion,
        tuple(all_peaks[f] for f in obs),
        tuple(noise_std[f] for f in obs),
    )


def _ar_innovations(r: np.ndarray, ar: ARFit, start: int) -> np.ndarray:
    X, z = _ar_design(r, ar.order, start)
    beta = np.concatenate(([ar.intercept], ar.coeffs))
    return z - X @ beta
