"""Analytic loss curves: irreducible (Bayes) components and the approximation bound.

All outputs are relative scores.  The constants of the approximation bound and
of the seasonal residual are not identifiable from data, so only the shape
of a curve across horizons carries meaning.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np

from .errors import AggregationError, DomainError
from .intrinsic import theoretical_intrinsic_dim
from .sdg import DEFAULT_EPSILON, ClientSpec, companion_spectral_radius

COMPONENTS = ("bayes_ar", "bayes_seasonal", "bayes_trend", "approx_curvature", "approx_variance")


@dataclass(frozen=True)
class LossConstants:
    c: float = 1.0
    gamma: float = 1.5
    K2: float = 1.0
    c_curv: float = 1.0
    c_sample: float = 1.0


@dataclass(frozen=True)
class LossBreakdown:
    bayes_ar: float = 0.0
    bayes_seasonal: float = 0.0
    bayes_trend: float = 0.0
    approx_curvature: float = 0.0
    approx_variance: float = 0.0
    total: float = None

    def __post_init__(self):
        if self.total is None:
            object.__setattr__(self, "total", float(sum(getattr(self, c) for c in COMPONENTS)))

    @property
    def bayes(self) -> float:
        return self.bayes_ar + self.bayes_seasonal + self.bayes_trend

    @property
    def approx(self) -> float:
        return self.approx_curvature + self.approx_variance

    @classmethod
    def empirical(cls, total: float) -> "LossBreakdown":
        """Measured loss whose component split is unknown (components are NaN)."""
        nan = float("nan")
        return cls(nan, nan, nan, nan, nan, float(total))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class LossCurve:
    horizons: np.ndarray
    values: list
    s_steps: int
    provenance: str = "analytic"
    owner: str = "server"

    def __post_init__(self):
        self.horizons = np.asarray(self.horizons, dtype=int)
        if self.horizons.ndim != 1 or self.horizons.size == 0:
            raise DomainError("horizon grid must be a non-empty 1-d sequence")
        if np.any(np.diff(self.horizons) <= 0):
            raise DomainError("horizon grid must be strictly increasing")
        if len(self.values) != self.horizons.size:
            raise DomainError("one breakdown per horizon is required")

    def column(self, name: str = "total") -> np.ndarray:
        if name == "bayes":
            return np.array([v.bayes for v in self.values])
        if name == "approx":
            return np.array([v.approx for v in self.values])
        return np.array([getattr(v, name) for v in self.values], dtype=float)

    @property
    def totals(self) -> np.ndarray:
        return self.column("total")


def ma_impulse_response(ar_coeffs: Sequence[float], steps: int) -> np.ndarray:
    """MA(infinity) weights ``psi_0 .. psi_{S-1}`` of an AR filter."""
    phi = np.asarray(ar_coeffs, dtype=float)
    psi = np.zeros(int(steps))
    psi[0] = 1.0
    for s in range(1, psi.size):
        lags = min(s, phi.size)
        psi[s] = np.dot(phi[:lags], psi[s - 1 :: -1][:lags])
    return psi


def _observed_noise_var(spec: ClientSpec) -> float:
    sd = np.asarray(spec.noise_std)[spec.observed_index]
    return float(np.sum(sd**2))


def bayes_ar_loss(spec: ClientSpec, S: int, mode: str = "exact") -> float:
    """Error variance of the S-step-ahead forecast from the AR component.

    ``exact``: ``sum_f sigma_f^2 sum_{s<S} psi_s^2``;
    ``geometric_bound``: ``sum_f sigma_f^2 (1 - rho^{2S}) / (1 - rho^2)``.
    """
    rho = companion_spectral_radius(spec.ar_coeffs)
    if rho >= 1.0:
        raise DomainError(f"client {spec.client_id}: non-stationary AR (rho={rho:.6g})")
    var = _observed_noise_var(spec)
    if mode == "exact":
        return var * float(np.sum(ma_impulse_response(spec.ar_coeffs, S) ** 2))
    if mode == "geometric_bound":
        return var * (1.0 - rho ** (2 * S)) / (1.0 - rho**2)
    raise DomainError(f"unknown mode {mode!r}")


def seasonal_residual_loss(spec: ClientSpec, H: int, c: float = 1.0, gamma: float = 1.5) -> float:
    """Bound on the unresolved seasonal energy, ``sum A^2 c min(1, (T/H)^gamma)``."""
    if c <= 0:
        raise DomainError("c must be positive")
    if not 1.0 <= gamma <= 2.0:
        raise DomainError(f"gamma must lie in [1, 2], got {gamma}")
    total = 0.0
    for f in spec.observed_index:
        for comp in spec.seasonal[f]:
            total += comp.amplitude**2 * c * min(1.0, (comp.period / H) ** gamma)
    return total


def unmodeled_trend_loss(spec: ClientSpec, S: int) -> float:
    """``sum_f beta_f^2 Var(t)`` over an S-step block, ``Var(t) = (S^2 - 1)/12``."""
    beta = np.asarray(spec.trend_slope)[spec.observed_index]
    return float(np.sum(beta**2) * (S * S - 1) / 12.0)


def bayes_client_loss(
    spec: ClientSpec,
    H: int,
    S: int,
    trend_modeled: bool = True,
    c: float = 1.0,
    gamma: float = 1.5,
) -> LossBreakdown:
    spec.validate()
    return LossBreakdown(
        bayes_ar=bayes_ar_loss(spec, S, "exact"),
        bayes_seasonal=seasonal_residual_loss(spec, H, c, gamma),
        bayes_trend=0.0 if trend_modeled else unmodeled_trend_loss(spec, S),
    )


def approx_loss_bound(d_I, H, D, K2=1.0, c_curv=1.0, c_sample=1.0):
    """Curvature and finite-sample terms of the approximation bound.

    ``c_curv (K2^2 d^2)^(d/(4+d))`` and ``c_sample (d H / D)^(4/(4+d))``.
    """
    if D <= 0:
        raise DomainError("D must be positive")
    if d_I <= 0:
        raise DomainError("d_I must be positive")
    curvature = c_curv * (K2**2 * d_I**2) ** (d_I / (4.0 + d_I))
    variance = c_sample * (d_I * H / D) ** (4.0 / (4.0 + d_I))
    return float(curvature), float(variance)


def total_loss_curve(
    spec: ClientSpec,
    h_grid: Sequence[int],
    S: int,
    D: int,
    constants: LossConstants = LossConstants(),
    trend_modeled: bool = True,
    epsilon: float = DEFAULT_EPSILON,
) -> LossCurve:
    rows = []
    for H in h_grid:
        bayes = bayes_client_loss(spec, H, S, trend_modeled, constants.c, constants.gamma)
        d_I = theoretical_intrinsic_dim(spec, H, epsilon)
        curv, var = approx_loss_bound(d_I, H, D, constants.K2, constants.c_curv, constants.c_sample)
        rows.append(
            LossBreakdown(bayes.bayes_ar, bayes.bayes_seasonal, bayes.bayes_trend, curv, var)
        )
    return LossCurve(np.asarray(h_grid), rows, S, "analytic", spec.client_id)


def server_aggregate_curve(curves: Sequence[LossCurve], pi: Sequence[float]) -> LossCurve:
    """Component-wise mixture ``sum_k pi_k L_k`` of client curves."""
    curves = list(curves)
    pi = np.asarray(pi, dtype=float)
    if not curves or pi.size != len(curves):
        raise AggregationError("need one weight per curve")
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
        raise AggregationError(f"weights must be nonnegative and sum to 1, got sum {pi.sum()}")
    ref = curves[0]
    for cv in curves[1:]:
        if cv.s_steps != ref.s_steps or not np.array_equal(cv.horizons, ref.horizons):
            raise AggregationError("curves do not share horizon grid and S")
    names = COMPONENTS + ("total",)
    rows = []
    for i in range(ref.horizons.size):
        mix = {}
        for name in names:
            vals = np.array([getattr(cv.values[i], name) for cv in curves])
            # zero-weight clients must not leak NaN components into the mix
            mix[name] = float(np.sum(np.where(pi > 0, pi * vals, 0.0)))
        rows.append(LossBreakdown(**mix))
    provenance = "analytic" if all(cv.provenance == "analytic" for cv in curves) else "empirical"
    return LossCurve(ref.horizons.copy(), rows, ref.s_steps, provenance, "server")


class ForwardDifference(NamedTuple):
    horizons: np.ndarray  # start horizon of each step
    values: np.ndarray
    scaled: bool  # True when some grid gap exceeded 1 and was divided out


def forward_difference(curve: LossCurve, component: str = "total") -> ForwardDifference:
    """``value(H_{i+1}) - value(H_i)``, divided by the gap on non-unit grids."""
    y = curve.column(component)
    h = curve.horizons
    if h.size < 2:
        return ForwardDifference(np.zeros(0, int), np.zeros(0), False)
    gaps = np.diff(h)
    scaled = bool(np.any(gaps != 1))
    return ForwardDifference(h[:-1].copy(), np.diff(y) / gaps, scaled)
