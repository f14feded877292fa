"""Windowing, normalization and the PCA-based intrinsic space.

Windows are flattened feature-major: entry ``f * H + i`` of an input row is
feature ``f`` at offset ``i`` within the look-back window (oldest first).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    AggregationError,
    DecompositionError,
    DegenerateSpectrumError,
    DiagnosticsError,
    ProjectionError,
    WindowError,
)
from .sdg import DEFAULT_EPSILON, ClientSpec, SeriesPanel, ar_memory, seasonal_weights


@dataclass
class WindowSet:
    inputs: np.ndarray  # n x (F*H)
    targets: np.ndarray  # n x (F*S)
    anchors: np.ndarray  # time index of the last input step
    H: int
    S: int
    stride: int
    n_features: int
    client_id: str = ""
    normalized: bool = False

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def input_cube(self) -> np.ndarray:
        return self.inputs.reshape(self.n, self.n_features, self.H)

    def target_cube(self) -> np.ndarray:
        return self.targets.reshape(self.n, self.n_features, self.S)

    def select(self, mask) -> "WindowSet":
        return replace(self, inputs=self.inputs[mask], targets=self.targets[mask], anchors=self.anchors[mask])


def make_windows(panel: SeriesPanel, H: int, S: int, stride: int = 1) -> WindowSet:
    """Slide an (H input, S target) window over ``panel``.

    Anchors run over ``t = H, H + stride, ...`` up to ``L - S`` in 1-based
    column time, and are reported shifted by ``panel.t_origin - 1``.
    """
    H, S, stride = int(H), int(S), int(stride)
    if H < 1 or S < 1 or stride < 1:
        raise WindowError("H, S and stride must be positive")
    F, L = panel.values.shape
    if H + S > L:
        raise WindowError(f"H + S = {H + S} exceeds series length {L}")
    view = sliding_window_view(panel.values, H + S, axis=1)[:, ::stride, :]
    n = view.shape[1]
    cube = np.transpose(view, (1, 0, 2))
    inputs = np.ascontiguousarray(cube[:, :, :H]).reshape(n, F * H)
    targets = np.ascontiguousarray(cube[:, :, H:]).reshape(n, F * S)
    anchors = panel.t_origin - 1 + H + stride * np.arange(n)
    return WindowSet(inputs, targets, anchors, H, S, stride, F, panel.client_id)


@dataclass
class NormStats:
    """Per-feature standardization statistics of one client.

    ``floored`` marks features whose std was clamped at the floor (constant
    features), ``missing`` marks unobserved features, which normalize to 0.
    """

    mean: np.ndarray
    std: np.ndarray
    floored: np.ndarray
    missing: np.ndarray
    per_window: bool = False


def std_floor(mean):
    return 1e-8 * (1.0 + np.abs(mean))


def _stats_from_cube(cube, axes):
    # all-NaN feature rows are handled by hand; nanmean would warn
    nan = np.isnan(cube)
    missing = np.all(nan, axis=axes)
    safe = np.maximum(np.sum(~nan, axis=axes), 1)
    mean = np.where(nan, 0.0, cube).sum(axis=axes) / safe
    dev = np.where(nan, 0.0, cube - np.expand_dims(mean, axes))
    std = np.sqrt((dev**2).sum(axis=axes) / safe)
    floor = std_floor(mean)
    floored = (std < floor) & ~missing
    std = np.where(std < floor, floor, std)
    mean = np.where(missing, 0.0, mean)
    std = np.where(missing, 1.0, std)
    return mean, std, floored, missing


def compute_norm_stats(window_set: WindowSet, per_window: bool = False) -> NormStats:
    """Pool each feature over every input entry of the client's windows.

    With ``per_window`` the statistics are computed over each window's own
    H steps instead (shape n x F).
    """
    cube = window_set.input_cube()
    if per_window:
        mean, std, floored, missing = _stats_from_cube(cube, 2)
    else:
        mean, std, floored, missing = _stats_from_cube(cube, (0, 2))
    return NormStats(mean, std, floored, missing, per_window)


def normalize_and_flatten(window_set: WindowSet, stats: NormStats = None, per_window: bool = False):
    """Standardize inputs and targets with one client's statistics.

    Pass ``stats`` computed on training windows to normalize held-out windows
    consistently.  Returns ``(normalized WindowSet, NormStats)``.
    """
    if stats is None:
        stats = compute_norm_stats(window_set, per_window=per_window)
    if stats.per_window:
        mu = stats.mean[:, :, None]
        sd = stats.std[:, :, None]
        miss = stats.missing[:, :, None]
    else:
        mu = stats.mean[None, :, None]
        sd = stats.std[None, :, None]
        miss = stats.missing[None, :, None]
    x = (window_set.input_cube() - mu) / sd
    y = (window_set.target_cube() - mu) / sd
    x = np.where(miss | np.isnan(x), 0.0, x)
    y = np.where(miss | np.isnan(y), 0.0, y)
    out = replace(
        window_set,
        inputs=x.reshape(window_set.n, -1),
        targets=y.reshape(window_set.n, -1),
        normalized=True,
    )
    return out, stats


class MomentParcel(NamedTuple):
    """Sufficient statistics a client shares for covariance pooling."""

    count: int
    total: np.ndarray
    outer: np.ndarray


def moment_parcel(rows: np.ndarray) -> MomentParcel:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    return MomentParcel(rows.shape[0], rows.sum(axis=0), rows.T @ rows)


def aggregate_covariance(parcels: Sequence[MomentParcel]) -> np.ndarray:
    """Pooled centered covariance ``(1/N) X^T X`` from per-client parcels."""
    parcels = list(parcels)
    if not parcels:
        raise AggregationError("no parcels to aggregate")
    dim = parcels[0].total.shape[0]
    for p in parcels:
        if p.total.shape != (dim,) or p.outer.shape != (dim, dim):
            raise AggregationError(
                f"parcel dimension {p.total.shape[0]} does not match {dim}"
            )
    N = sum(int(p.count) for p in parcels)
    if N < 1:
        raise AggregationError("parcels carry no rows")
    total = np.sum([p.total for p in parcels], axis=0)
    outer = np.sum([p.outer for p in parcels], axis=0)
    mean = total / N
    cov = outer / N - np.outer(mean, mean)
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class IntrinsicBasis:
    eigenvalues: np.ndarray
    vectors: np.ndarray  # full orthonormal eigenbasis, columns
    window_h: int = 0
    retained_dim: int = None
    energy_ratio: float = None

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def components(self) -> np.ndarray:
        d = self.dim if self.retained_dim is None else self.retained_dim
        return self.vectors[:, :d]

    def retain(self, d: int) -> "IntrinsicBasis":
        d = int(d)
        if not 1 <= d <= self.vectors.shape[1]:
            raise ProjectionError(f"retained dimension {d} outside [1, {self.vectors.shape[1]}]")
        total = self.eigenvalues.sum()
        ratio = float(self.eigenvalues[:d].sum() / total) if total > 0 else 1.0
        return replace(self, retained_dim=d, energy_ratio=ratio)

    def with_energy(self, eta: float) -> "IntrinsicBasis":
        return self.retain(empirical_intrinsic_dim(self.eigenvalues, eta))


def eigendecompose(cov: np.ndarray, window_h: int = 0) -> IntrinsicBasis:
    """Symmetric eigendecomposition, eigenvalues clamped at 0 and sorted down.

    Each eigenvector is signed so its first non-negligible entry is positive.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DecompositionError(f"expected a square matrix, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise DecompositionError("covariance has non-finite entries")
    sym = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(sym)
    order = np.argsort(vals, kind="stable")[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    tol = 1e-12
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        nz = np.flatnonzero(np.abs(col) > tol)
        if nz.size and col[nz[0]] < 0:
            vecs[:, k] = -col
    return IntrinsicBasis(vals, vecs, window_h=window_h)


def empirical_intrinsic_dim(eigenvalues, eta: float = 0.99) -> int:
    """Smallest ``d`` whose leading eigenvalues hold at least ``eta`` of the energy."""
    lam = np.asarray(eigenvalues, dtype=float)
    total = lam.sum()
    if lam.size == 0 or not total > 0:
        raise DegenerateSpectrumError("spectrum has no positive eigenvalue")
    ratio = np.cumsum(lam) / total
    # 1e-12 slack keeps exact ratios like 9/10 >= 0.9 from failing on rounding
    return int(np.argmax(ratio >= eta - 1e-12) + 1)


def theoretical_intrinsic_dim(spec: ClientSpec, H: int, epsilon: float = DEFAULT_EPSILON) -> float:
    """Model-implied intrinsic dimension, kept continuous.

    ``F * (min(H, l_AR) + g(H) + 1)`` with ``g(H) = 2 sum_j w_j min(1, H/T*_j)``
    and ``F`` the number of observed features.
    """
    l_ar = ar_memory(spec, epsilon)
    sw = seasonal_weights(spec)
    g = 2.0 * float(np.sum(sw.weights * np.minimum(1.0, H / sw.periods))) if sw.seasonal else 0.0
    return spec.n_observed * (min(H, l_ar) + g + 1.0)


def saturation_horizon(spec: ClientSpec, epsilon: float = DEFAULT_EPSILON) -> int:
    """Horizon beyond which the model-implied dimension no longer grows."""
    sw = seasonal_weights(spec)
    tmax = float(np.max(sw.periods)) if sw.seasonal else 0.0
    return int(np.ceil(max(ar_memory(spec, epsilon), tmax, 1)))


def project(basis: IntrinsicBasis, d: int, flat_window: np.ndarray) -> np.ndarray:
    """Coordinates of a normalized flattened window (or rows) on the top ``d`` axes."""
    x = np.asarray(flat_window, dtype=float)
    if not 1 <= d <= basis.vectors.shape[1]:
        raise ProjectionError(f"d = {d} outside [1, {basis.vectors.shape[1]}]")
    if x.shape[-1] != basis.dim:
        raise ProjectionError(f"window has dimension {x.shape[-1]}, basis expects {basis.dim}")
    return x @ basis.vectors[:, :d]


def build_basis(normalized_sets: Sequence[WindowSet], eta: float = None) -> IntrinsicBasis:
    """Pool normalized training windows of several clients into one basis."""
    sets = list(normalized_sets)
    if not sets:
        raise AggregationError("no window sets")
    cov = aggregate_covariance([moment_parcel(ws.inputs) for ws in sets])
    basis = eigendecompose(cov, window_h=sets[0].H)
    return basis if eta is None else basis.with_energy(eta)


@dataclass
class DiagnosticsReport:
    alpha_hat: float
    beta_hat: float
    kappa_hat: float
    C_Z: float
    alpha_Z: float
    fit_r2: float
    inter_horizon_residual: float
    truncation_pair: tuple
    inter_horizon_map: np.ndarray = None

    @property
    def distortion(self):
        return (self.alpha_hat, self.beta_hat, self.kappa_hat)

    @property
    def powerlaw(self):
        return (self.C_Z, self.alpha_Z, self.fit_r2)


def powerlaw_fit(eigenvalues, n_leading: int = None, rel_floor: float = 1e-12):
    """Least-squares fit of ``log lambda_i = log C - alpha log i``.

    Returns ``(C, alpha, r2)`` over the leading positive eigenvalues.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    keep = lam > rel_floor * lam[0] if lam.size and lam[0] > 0 else np.zeros(lam.shape, bool)
    lam = lam[keep]
    if n_leading is not None:
        lam = lam[:n_leading]
    if lam.size < 2:
        raise DiagnosticsError("power-law fit needs at least two positive eigenvalues")
    x = np.log(np.arange(1, lam.size + 1))
    y = np.log(lam)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(np.exp(intercept)), float(-slope), float(r2)


def assumption_diagnostics(
    basis_h2: IntrinsicBasis,
    basis_h1: IntrinsicBasis,
    windows_h2: WindowSet,
    windows_h1: WindowSet,
    sample_pairs: int = 1000,
    seed: int = 0,
    n_leading: int = None,
) -> DiagnosticsReport:
    """Empirical analogues of the intrinsic-space regularity assumptions.

    Windows must already be normalized; rows are paired across horizons by
    anchor, the shorter window being the most recent ``H1`` steps.
    """
    X2 = windows_h2.inputs
    if X2.shape[0] < 2 or np.unique(X2, axis=0).shape[0] < 2:
        raise DiagnosticsError("need at least two distinct windows")
    rng = np.random.default_rng(seed)

    # bi-Lipschitz distortion of x -> U_d^T x
    U = basis_h2.components
    i = rng.integers(0, X2.shape[0], size=sample_pairs)
    j = rng.integers(0, X2.shape[0], size=sample_pairs)
    diff = X2[i] - X2[j]
    dist = np.linalg.norm(diff, axis=1)
    ok = dist > 1e-12 * max(1.0, float(np.max(dist)))
    if not np.any(ok):
        raise DiagnosticsError("sampled pairs are all identical")
    ratios = np.linalg.norm(diff[ok] @ U, axis=1) / dist[ok]
    alpha_hat, beta_hat = float(ratios.min()), float(ratios.max())
    kappa = beta_hat / alpha_hat if alpha_hat > 0 else np.inf

    C_Z, alpha_Z, r2 = powerlaw_fit(basis_h2.eigenvalues, n_leading=n_leading)

    # inter-horizon map fitted on shared anchors
    common, i2, i1 = np.intersect1d(windows_h2.anchors, windows_h1.anchors, return_indices=True)
    if common.size < 2:
        raise DiagnosticsError("horizons share fewer than two anchors")
    z2 = windows_h2.inputs[i2] @ U
    z1 = windows_h1.inputs[i1] @ basis_h1.components
    P, *_ = np.linalg.lstsq(z2, z1, rcond=None)
    resid = z1 - z2 @ P
    rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return DiagnosticsReport(
        alpha_hat,
        beta_hat,
        float(kappa),
        C_Z,
        alpha_Z,
        r2,
        rms,
        (windows_h2.H, windows_h1.H),
        P.T,
    )
