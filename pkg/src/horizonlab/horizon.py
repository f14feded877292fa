"""Horizon selection: sufficiency, seasonal coverage, unimodality and server aggregation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError, TrimError, VerdictError
from .loss import ForwardDifference, LossCurve
from .sdg import DEFAULT_EPSILON, ClientSpec, _component_arrays, ar_memory


class SufficientHorizon(NamedTuple):
    horizon: int
    saturated: bool


def smallest_sufficient_horizon(bayes_diffs, delta: float, start: int = 1) -> SufficientHorizon:
    """First horizon whose Bayes forward difference is within ``delta`` of zero.

    ``bayes_diffs`` is a ForwardDifference or a plain sequence whose first step
    starts at ``start`` on a unit grid.  When no step qualifies the result
    carries ``saturated=False`` and the last horizon of the grid.
    """
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    if isinstance(bayes_diffs, ForwardDifference):
        horizons, values = bayes_diffs.horizons, bayes_diffs.values
    else:
        values = np.asarray(bayes_diffs, dtype=float)
        horizons = start + np.arange(values.size)
    if values.size == 0:
        raise DomainError("no differences supplied")
    hits = np.flatnonzero(np.abs(values) <= delta)
    if hits.size:
        return SufficientHorizon(int(horizons[hits[0]]), True)
    step = int(horizons[-1] - horizons[-2]) if horizons.size > 1 else 1
    return SufficientHorizon(int(horizons[-1]) + step, False)


class CoverageHorizon(NamedTuple):
    horizon: int
    seasonal: bool


def coverage_horizon(spec: ClientSpec, tau: float = 0.95) -> CoverageHorizon:
    """Smallest H leaving at most ``(1 - tau)`` of the seasonal energy in periods > H."""
    if not 0.0 < tau <= 1.0:
        raise DomainError(f"tau must lie in (0, 1], got {tau}")
    A, T = _component_arrays(spec)
    energy = (A**2).ravel()
    periods = T.ravel()
    keep = energy > 0
    energy, periods = energy[keep], periods[keep]
    total = energy.sum()
    if total == 0.0:
        return CoverageHorizon(1, False)
    allowed = (1.0 - tau) * total
    # candidate H values are the integer ceilings of the periods; H=1 first
    candidates = np.unique(np.concatenate(([1], np.ceil(periods).astype(int))))
    for H in candidates:
        unresolved = energy[periods > H].sum()
        if unresolved <= allowed * (1 + 1e-12):
            return CoverageHorizon(int(H), True)
    return CoverageHorizon(int(candidates[-1]), True)


class ClientHorizon(NamedTuple):
    h_star: int
    l_ar: int
    t_tau: int


def client_optimal_horizon(spec: ClientSpec, tau: float = 0.95, epsilon: float = DEFAULT_EPSILON) -> ClientHorizon:
    """``max(l_AR, T^(tau))``, floored at 1."""
    spec.validate()
    l_ar = ar_memory(spec, epsilon)
    t_tau = coverage_horizon(spec, tau).horizon
    return ClientHorizon(max(l_ar, t_tau, 1), l_ar, t_tau)


def delta_from_tau(spec: ClientSpec, tau: float = 0.95) -> float:
    """Tolerance that makes the tau-coverage premise hold: ``(1 - tau) * A^2``."""
    A, _ = _component_arrays(spec)
    return (1.0 - tau) * float(np.sum(A**2))


@dataclass
class UnimodalityVerdict:
    unimodal: bool
    argmin_index: int
    argmin_horizon: int
    violations: list = field(default_factory=list)
    plateau: bool = False
    smoothed: np.ndarray = None


def moving_average(y: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; edges average over the available points."""
    if window <= 1:
        return np.asarray(y, dtype=float).copy()
    half = window // 2
    c = np.concatenate(([0.0], np.cumsum(y)))
    n = len(y)
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) + half + 1, 0, n)
    return (c[hi] - c[lo]) / (hi - lo)


def check_unimodality(
    curve: LossCurve,
    smoothing_window: int = 3,
    component: str = "total",
    tol: float = 0.0,
) -> UnimodalityVerdict:
    """Check that the (smoothed) curve falls to its minimum and rises afterwards.

    Differences with ``|delta| <= tol`` count as ties.  A violation is reported
    as the index of the grid point a wrong-signed step lands on.  ``plateau``
    marks a minimum followed only by ties.
    """
    y = curve.column(component)
    if y.size < 3:
        raise VerdictError("unimodality needs at least three grid points")
    if smoothing_window < 1 or smoothing_window % 2 == 0:
        raise VerdictError("smoothing window must be a positive odd integer")
    ys = moving_average(y, smoothing_window)
    k = int(np.argmin(ys))
    d = np.diff(ys)
    bad = [i + 1 for i in range(k) if d[i] > tol]
    bad += [i + 1 for i in range(k, d.size) if d[i] < -tol]
    after = d[k:]
    plateau = bool(after.size > 0 and np.all(np.abs(after) <= tol))
    return UnimodalityVerdict(not bad, k, int(curve.horizons[k]), bad, plateau, ys)


def _trim(horizons, weights, alpha):
    h = np.asarray(horizons, dtype=float)
    w = np.asarray(weights, dtype=float)
    if h.size == 0 or h.size != w.size:
        raise TrimError("need one weight per horizon")
    if not 0.0 <= alpha < 0.5:
        raise DomainError(f"alpha must lie in [0, 0.5), got {alpha}")
    if np.any(w < 0):
        raise TrimError("weights must be nonnegative")
    total = w.sum()
    if not total > 0:
        raise TrimError("weights sum to zero")
    w = w / total
    order = np.argsort(h, kind="stable")
    hs, ws = h[order], w[order]
    upper = np.cumsum(ws)
    lower = upper - ws
    # weight mass of each client inside [alpha, 1 - alpha]
    kept = np.clip(np.minimum(upper, 1 - alpha) - np.maximum(lower, alpha), 0.0, None)
    return order, hs, kept


def weighted_trimmed_mean(horizons, weights=None, alpha: float = 0.0, rounded: bool = True):
    """Trim ``alpha`` weight mass from both tails and average what is left.

    Boundary clients keep the part of their weight that lies inside the
    central band.  The mean is rounded half-up unless ``rounded`` is False.
    """
    horizons = np.asarray(horizons, dtype=float)
    if weights is None:
        weights = np.ones(horizons.size)
    _, hs, kept = _trim(horizons, weights, alpha)
    mass = kept.sum()
    if mass <= 1e-15:
        raise TrimError("no weight survives trimming")
    value = float(np.dot(hs, kept) / mass)
    return int(math.floor(value + 0.5)) if rounded else value


def trimmed_clients(horizons, weights, alpha: float) -> list:
    """Indices of clients whose weight is trimmed away entirely."""
    order, _, kept = _trim(horizons, weights, alpha)
    return sorted(int(order[i]) for i in np.flatnonzero(kept <= 1e-15))


@dataclass
class ClientDecision:
    client_id: str
    h_star: int
    delta: float
    tau: float
    l_ar: int
    t_tau: int


@dataclass
class HorizonDecision:
    per_client: list
    server_horizon: int
    trim_alpha: float
    data_weights: np.ndarray
    trimmed_out: list

    def as_dict(self) -> dict:
        return {
            "per_client": [vars(c) for c in self.per_client],
            "server_horizon": self.server_horizon,
            "trim_alpha": self.trim_alpha,
            "data_weights": [float(w) for w in self.data_weights],
            "trimmed_out": list(self.trimmed_out),
        }


def decide_horizons(
    specs: Sequence[ClientSpec],
    sample_counts: Sequence[float],
    tau: float = 0.95,
    epsilon: float = DEFAULT_EPSILON,
    alpha: float = 0.0,
    delta: float = None,
) -> HorizonDecision:
    """Client optima by coverage/tolerance and the server's trimmed mean."""
    counts = np.asarray(sample_counts, dtype=float)
    weights = counts / counts.sum()
    per_client = []
    for spec in specs:
        ch = client_optimal_horizon(spec, tau, epsilon)
        d = delta_from_tau(spec, tau) if delta is None else float(delta)
        per_client.append(ClientDecision(spec.client_id, ch.h_star, d, tau, ch.l_ar, ch.t_tau))
    hs = [c.h_star for c in per_client]
    server = weighted_trimmed_mean(hs, weights, alpha)
    out = [per_client[i].client_id for i in trimmed_clients(hs, weights, alpha)]
    return HorizonDecision(per_client, server, alpha, weights, out)
