"""Synthetic data generator for non-IID federated time series.

Each client feature is an additive sum of sinusoids, a stationary AR(p)
component driven by Gaussian innovations, and a linear trend.  A per-client
affine map (scale, shift) is applied afterwards to create feature skew.

Unobserved features are emitted as rows of NaN.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import DomainError, InvalidSpecError

#: e-folding tolerance, ln(1/(1-eps)) == 1.
DEFAULT_EPSILON = 1.0 - math.exp(-1.0)


@dataclass(frozen=True)
class SeasonalComponent:
    amplitude: float
    period: float
    phase: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.amplitude):
            raise InvalidSpecError(f"amplitude must be finite, got {self.amplitude}")
        if not (math.isfinite(self.period) and self.period > 0):
            raise InvalidSpecError(f"period must be positive, got {self.period}")
        if not math.isfinite(self.phase):
            raise InvalidSpecError(f"phase must be finite, got {self.phase}")


def _as_tuple(values, n, name):
    vals = tuple(float(v) for v in values)
    if len(vals) != n:
        raise InvalidSpecError(f"{name} has length {len(vals)}, expected {n}")
    return vals


@dataclass(frozen=True)
class ClientSpec:
    """Full generator parameterization of one client.

    ``seasonal[f]`` lists the sinusoids of feature ``f``; component ``j`` of
    different features is treated as the same seasonal family.  ``ar_coeffs``
    are shared by every feature of the client.
    """

    client_id: str
    feature_count: int
    seasonal: tuple
    ar_coeffs: tuple = ()
    trend_slope: tuple = ()
    noise_mean: tuple = ()
    noise_std: tuple = ()
    skew_scale: tuple = ()
    skew_shift: tuple = ()
    observed_features: tuple = ()

    def __post_init__(self):
        F = int(self.feature_count)
        if F < 1:
            raise InvalidSpecError("feature_count must be positive")
        object.__setattr__(self, "client_id", str(self.client_id))
        object.__setattr__(self, "feature_count", F)
        seasonal = tuple(tuple(comps) for comps in self.seasonal)
        if len(seasonal) != F:
            raise InvalidSpecError(f"seasonal has {len(seasonal)} feature lists, expected {F}")
        for comps in seasonal:
            for c in comps:
                if not isinstance(c, SeasonalComponent):
                    raise InvalidSpecError("seasonal entries must be SeasonalComponent")
        object.__setattr__(self, "seasonal", seasonal)
        ar = tuple(float(a) for a in self.ar_coeffs)
        if not all(math.isfinite(a) for a in ar):
            raise InvalidSpecError(f"non-finite AR coefficient in {ar}")
        object.__setattr__(self, "ar_coeffs", ar)

        defaults = {
            "trend_slope": 0.0,
            "noise_mean": 0.0,
            "noise_std": 1.0,
            "skew_scale": 1.0,
            "skew_shift": 0.0,
        }
        for name, default in defaults.items():
            vals = getattr(self, name)
            if len(vals) == 0:
                vals = (default,) * F
            vals = _as_tuple(vals, F, name)
            if not all(math.isfinite(v) for v in vals):
                raise InvalidSpecError(f"{name} must be finite")
            object.__setattr__(self, name, vals)
        if any(s < 0 for s in self.noise_std):
            raise InvalidSpecError("noise_std must be nonnegative")
        if any(s == 0 for s in self.skew_scale):
            raise InvalidSpecError("skew_scale must be nonzero (non-invertible skew)")

        obs = self.observed_features
        obs = (True,) * F if len(obs) == 0 else tuple(bool(o) for o in obs)
        if len(obs) != F:
            raise InvalidSpecError(f"observed_features has length {len(obs)}, expected {F}")
        object.__setattr__(self, "observed_features", obs)

    @classmethod
    def uniform(
        cls,
        client_id,
        feature_count=1,
        seasonal=(),
        ar_coeffs=(),
        trend_slope=0.0,
        noise_mean=0.0,
        noise_std=1.0,
        skew_scale=1.0,
        skew_shift=0.0,
        observed_features=None,
    ):
        """Build a spec whose per-feature parameters are broadcast from scalars.

        ``seasonal`` is a sequence of ``(amplitude, period, phase)`` triples (or
        SeasonalComponent) applied to every feature.
        """
        comps = tuple(
            c if isinstance(c, SeasonalComponent) else SeasonalComponent(*c) for c in seasonal
        )

        def bc(v):
            return tuple(np.broadcast_to(np.asarray(v, dtype=float), (feature_count,)).tolist())

        return cls(
            client_id=client_id,
            feature_count=feature_count,
            seasonal=tuple(comps for _ in range(feature_count)),
            ar_coeffs=tuple(ar_coeffs),
            trend_slope=bc(trend_slope),
            noise_mean=bc(noise_mean),
            noise_std=bc(noise_std),
            skew_scale=bc(skew_scale),
            skew_shift=bc(skew_shift),
            observed_features=() if observed_features is None else tuple(observed_features),
        )

    @property
    def ar_order(self) -> int:
        return len(self.ar_coeffs)

    @property
    def observed_index(self) -> np.ndarray:
        return np.flatnonzero(self.observed_features)

    @property
    def n_observed(self) -> int:
        return int(sum(self.observed_features))

    @property
    def n_components(self) -> int:
        return max((len(c) for c in self.seasonal), default=0)

    def replace(self, **changes) -> "ClientSpec":
        return replace(self, **changes)

    def validate(self) -> "ClientSpec":
        """Raise InvalidSpecError unless the AR part is stationary."""
        rho = companion_spectral_radius(self.ar_coeffs)
        if rho >= 1.0:
            raise InvalidSpecError(
                f"client {self.client_id}: AR companion spectral radius {rho:.6g} >= 1"
            )
        return self


@dataclass
class SeriesPanel:
    """F x L matrix of observations; rows of unobserved features are NaN."""

    values: np.ndarray
    client_id: str = ""
    t_origin: int = 1
    observed: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2 or values.shape[1] < 1:
            raise InvalidSpecError("panel values must be a non-empty F x L matrix")
        if self.observed is None:
            observed = ~np.all(np.isnan(values), axis=1)
        else:
            observed = np.asarray(self.observed, dtype=bool)
        if not np.all(np.isfinite(values[observed])):
            raise InvalidSpecError("observed rows contain non-finite entries")
        values[~observed] = np.nan
        self.values = values
        self.observed = observed
        self.client_id = str(self.client_id)

    @property
    def feature_count(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.t_origin, self.t_origin + self.length)


def companion_matrix(ar_coeffs: Sequence[float]) -> np.ndarray:
    phi = np.asarray(ar_coeffs, dtype=float)
    p = phi.size
    C = np.zeros((p, p))
    if p:
        C[0, :] = phi
        C[1:, :-1] = np.eye(p - 1)
    return C


def companion_spectral_radius(ar_coeffs: Sequence[float]) -> float:
    """Largest eigenvalue modulus of the AR companion matrix (0 for p = 0)."""
    phi = np.asarray(ar_coeffs, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise InvalidSpecError(f"non-finite AR coefficient in {list(phi)}")
    if phi.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(phi)))))


def effective_ar_memory(rho: float, epsilon: float = DEFAULT_EPSILON) -> int:
    """Number of lags for the AR impulse response to decay by ``1 - epsilon``.

    ``ceil(ln(1/(1-eps)) / -ln(rho))``, at least 1.
    """
    if not (0.0 < rho < 1.0):
        raise DomainError(f"rho must lie in (0, 1), got {rho}")
    if not (0.0 < epsilon < 1.0):
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    ratio = math.log(1.0 / (1.0 - epsilon)) / -math.log(rho)
    # guard against 2.0000000000000004 rounding up
    return max(1, math.ceil(ratio - 1e-12))


def ar_memory(spec: ClientSpec, epsilon: float = DEFAULT_EPSILON) -> int:
    """Effective AR memory of a client; 0 when there is no AR dynamics."""
    rho = companion_spectral_radius(spec.ar_coeffs)
    if spec.ar_order == 0 or rho == 0.0:
        return 0
    return effective_ar_memory(rho, epsilon)


class SeasonalWeights(NamedTuple):
    weights: np.ndarray
    periods: np.ndarray
    seasonal: bool


def _component_arrays(spec: ClientSpec):
    """Amplitude and period arrays of shape (observed F, J), zero-padded."""
    J = spec.n_components
    idx = spec.observed_index
    A = np.zeros((idx.size, J))
    T = np.ones((idx.size, J))
    for row, f in enumerate(idx):
        for j, c in enumerate(spec.seasonal[f]):
            A[row, j] = c.amplitude
            T[row, j] = c.period
    return A, T


def seasonal_weights(spec: ClientSpec) -> SeasonalWeights:
    """Energy share of each seasonal family and its feature-aggregated period.

    The aggregated period of family ``j`` is the amplitude-weighted mean of the
    feature periods.  ``seasonal`` is False when every amplitude is zero, in
    which case both arrays are empty.
    """
    A, T = _component_arrays(spec)
    energy = (A**2).sum(axis=0)
    total = energy.sum()
    if A.size == 0 or total == 0.0:
        return SeasonalWeights(np.zeros(0), np.zeros(0), False)
    absA = np.abs(A)
    mass = absA.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        periods = np.where(mass > 0, (absA * T).sum(axis=0) / mass, T.mean(axis=0))
    return SeasonalWeights(energy / total, periods, True)


def _client_key(client_id: str) -> int:
    return zlib.crc32(str(client_id).encode("utf-8"))


def feature_rng(seed: int, client_id: str, feature: int, *labels: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, client, feature, labels...)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_client_key(client_id), int(feature), *labels))
    return np.random.Generator(np.random.Philox(ss))


def burn_in_steps(spec: ClientSpec) -> int:
    return max(10 * ar_memory(spec), 100)


def seasonal_signal(components, t: np.ndarray) -> np.ndarray:
    out = np.zeros(t.shape, dtype=float)
    for c in components:
        out += c.amplitude * np.sin(2.0 * np.pi * t / c.period + c.phase)
    return out


def generate_client_series(spec: ClientSpec, length: int, seed: int, t_origin: int = 1) -> SeriesPanel:
    """Draw one client's pre-skew panel.

    Per observed feature the series is ``seasonal(t) + beta*t + a_t`` where
    ``a_t = sum_i phi_i a_{t-i} + e_t`` and ``e_t ~ N(mu, sigma^2)``.  The AR
    state starts at zero and ``burn_in_steps(spec)`` warm-up draws are discarded.
    """
    spec.validate()
    length = int(length)
    if length < 1:
        raise InvalidSpecError("length must be positive")
    burn = burn_in_steps(spec)
    t = np.arange(t_origin, t_origin + length, dtype=float)
    values = np.full((spec.feature_count, length), np.nan)
    denom = np.concatenate(([1.0], -np.asarray(spec.ar_coeffs)))
    for f in spec.observed_index:
        rng = feature_rng(seed, spec.client_id, f)
        innov = spec.noise_mean[f] + spec.noise_std[f] * rng.standard_normal(burn + length)
        ar = lfilter([1.0], denom, innov)[burn:]
        values[f] = seasonal_signal(spec.seasonal[f], t) + spec.trend_slope[f] * t + ar
    return SeriesPanel(values, client_id=spec.client_id, t_origin=t_origin)


def apply_feature_skew(panel: SeriesPanel, spec: ClientSpec) -> SeriesPanel:
    """Affine per-feature skew ``scale * x + shift``; missing rows stay NaN."""
    if panel.feature_count != spec.feature_count:
        raise InvalidSpecError(
            f"panel has {panel.feature_count} features, spec has {spec.feature_count}"
        )
    scale = np.asarray(spec.skew_scale)[:, None]
    if np.any(scale == 0):
        raise InvalidSpecError("skew_scale must be nonzero")
    shift = np.asarray(spec.skew_shift)[:, None]
    return SeriesPanel(scale * panel.values + shift, panel.client_id, panel.t_origin, panel.observed)


def invert_feature_skew(panel: SeriesPanel, spec: ClientSpec) -> SeriesPanel:
    scale = np.asarray(spec.skew_scale)[:, None]
    shift = np.asarray(spec.skew_shift)[:, None]
    return SeriesPanel((panel.values - shift) / scale, panel.client_id, panel.t_origin, panel.observed)


def generate_client(spec: ClientSpec, length: int, seed: int) -> SeriesPanel:
    """Generate and skew in one call."""
    return apply_feature_skew(generate_client_series(spec, length, seed), spec)
