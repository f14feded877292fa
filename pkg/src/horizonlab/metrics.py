"""Fidelity of a re-synthesized series against an original one."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import ks_2samp

from .errors import MetricError


@dataclass(frozen=True)
class FidelityReport:
    mean_gap: float
    var_gap: float
    acf_l2: float
    psd_l2: float
    ks: float
    length: int  # common length after truncation

    def as_dict(self) -> dict:
        return asdict(self)


def _clean(x, name):
    a = np.asarray(x, dtype=float)
    if a.ndim != 1:
        raise MetricError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(a)):
        raise MetricError(f"{name} contains non-finite values")
    return a


def autocorrelation(x, lags: int) -> np.ndarray:
    """Biased sample autocorrelation ``r(1..lags)``; a constant series gives zeros."""
    x = np.asarray(x, dtype=float)
    xc = x - x.mean()
    c0 = float(np.dot(xc, xc))
    if c0 == 0.0:
        return np.zeros(lags)
    n = x.size
    # zero-padded FFT gives the full linear autocovariance
    m = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[: lags + 1]
    return acov[1:] / acov[0]


def normalized_periodogram(x) -> np.ndarray:
    """Periodogram over frequencies ``1..N//2`` scaled to unit sum."""
    x = np.asarray(x, dtype=float)
    p = np.abs(np.fft.rfft(x - x.mean()))[1:] ** 2
    s = p.sum()
    return p / s if s > 0 else p


def ks_statistic(a, b) -> float:
    # the statistic does not depend on the p-value method; asymp avoids the exact search
    return float(ks_2samp(a, b, method="asymp").statistic)


def fidelity_report(a, b, acf_lags: int = 30) -> FidelityReport:
    """Mean, variance, ACF, spectral-shape and KS gaps between ``a`` and ``b``.

    Unequal lengths are truncated to the shorter one from the start.
    """
    a = _clean(a, "a")
    b = _clean(b, "b")
    if acf_lags < 1:
        raise MetricError("acf_lags must be positive")
    n = min(a.size, b.size)
    if n < acf_lags + 2:
        raise MetricError(f"need at least {acf_lags + 2} points, got {n}")
    a, b = a[:n], b[:n]
    acf = autocorrelation(a, acf_lags) - autocorrelation(b, acf_lags)
    psd = normalized_periodogram(a) - normalized_periodogram(b)
    return FidelityReport(
        mean_gap=float(abs(a.mean() - b.mean())),
        var_gap=float(abs(a.var() - b.var())),
        acf_l2=float(np.dot(acf, acf)),
        psd_l2=float(np.dot(psd, psd)),
        ks=ks_statistic(a, b),
        length=n,
    )
