"""Federated training of a global affine predictor on intrinsic coordinates.

One run at horizon H:

1. every client generates its skewed series and splits it chronologically;
2. each client standardizes with its own training statistics;
3. the server pools moment parcels into one covariance, keeps the leading
   eigenvectors holding ``eta_energy`` of the energy;
4. FedAvg: each round every client takes ``local_steps`` preconditioned
   gradient steps on its ridge objective, the server averages the client
   models weighted by training window counts;
5. held-out MSE per client (normalized units) and its pi-weighted mix.

With ``train_sampling="effective"`` each client trains on ``floor(D_k / H)``
randomly chosen windows instead of all overlapping ones.  Overlapping windows
share almost all their content, so the number of roughly independent samples
shrinks like ``D_k / H``; the effective mode makes that explicit and lets the
finite-sample penalty of long windows show up with a linear predictor.  The
held-out set is never subsampled.  ``replicates`` repeats each horizon with
independent subsamples and averages.

Local steps use the client's Gram matrices, so their cost does not depend on
the number of windows.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import RunError, WindowError
from .intrinsic import (
    IntrinsicBasis,
    aggregate_covariance,
    eigendecompose,
    make_windows,
    moment_parcel,
    normalize_and_flatten,
)
from .loss import LossBreakdown, LossCurve
from .sdg import ClientSpec, SeriesPanel, feature_rng, generate_client


@dataclass
class FedRunConfig:
    client_specs: list
    series_length: list
    h_grid: list
    s_steps: int = 1
    rounds: int = 50
    local_steps: int = 5
    learning_rate: float = 1.0
    ridge_lambda: float = 1e-3
    train_fraction: float = 0.7
    pi_weights: list = None
    eta_energy: float = 0.99
    seed: int = 0
    train_stride: int = 1
    train_sampling: str = "all"
    replicates: int = 1

    def __post_init__(self):
        K = len(self.client_specs)
        if K == 0:
            raise RunError("no clients configured")
        if np.isscalar(self.series_length):
            self.series_length = [int(self.series_length)] * K
        self.series_length = [int(v) for v in self.series_length]
        if len(self.series_length) != K:
            raise RunError("series_length needs one entry per client")
        if not 0.0 < self.train_fraction < 1.0:
            raise RunError("train_fraction must lie in (0, 1)")
        if self.learning_rate <= 0 or self.ridge_lambda < 0:
            raise RunError("learning_rate must be positive and ridge_lambda nonnegative")
        if self.pi_weights is None:
            L = np.asarray(self.series_length, dtype=float)
            self.pi_weights = list(L / L.sum())
        pi = np.asarray(self.pi_weights, dtype=float)
        if pi.size != K or np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise RunError("pi_weights must be K nonnegative reals summing to 1")
        self.h_grid = [int(h) for h in self.h_grid]
        if self.rounds < 1 or self.local_steps < 1:
            raise RunError("rounds and local_steps must be positive")
        if self.train_sampling not in ("all", "effective"):
            raise RunError(f"unknown train_sampling {self.train_sampling!r}")
        if int(self.train_stride) < 1 or int(self.replicates) < 1:
            raise RunError("train_stride and replicates must be positive")
        if self.replicates > 1 and self.train_sampling == "all":
            raise RunError("replicates only differ under train_sampling='effective'")

    @property
    def client_ids(self) -> list:
        return [s.client_id for s in self.client_specs]


@dataclass
class GlobalModel:
    """Affine map ``[z, 1] @ coefficients`` from d intrinsic coordinates to F*S targets."""

    coefficients: np.ndarray  # (d + 1) x (F*S); last row is the intercept
    horizon: int
    retained_dim: int

    def predict(self, z: np.ndarray) -> np.ndarray:
        return z @ self.coefficients[:-1] + self.coefficients[-1]


@dataclass
class FedRunResult:
    model: GlobalModel
    client_mse: dict
    server_mse: float
    client_mse_denormalized: dict
    train_counts: dict
    basis: IntrinsicBasis = field(repr=False, default=None)


@dataclass
class _ClientData:
    client_id: str
    Z_train: np.ndarray
    Y_train: np.ndarray
    Z_test: np.ndarray
    Y_test: np.ndarray
    target_scale: np.ndarray


def client_panels(config: FedRunConfig) -> list:
    """Skewed series of every client; independent of the horizon."""
    return [
        generate_client(spec, L, config.seed)
        for spec, L in zip(config.client_specs, config.series_length)
    ]


def split_windows(panel: SeriesPanel, H: int, S: int, train_fraction: float, train_stride: int = 1, rng=None):
    """Chronological train/test windows.

    Training targets end inside the first ``floor(train_fraction * L)`` steps;
    test anchors start at that boundary, so the test set is the same for
    every H that fits.
    """
    L = panel.length
    if H < 1 or S < 1:
        raise WindowError("H and S must be positive")
    L_train = int(np.floor(train_fraction * L))
    if H + S > L_train:
        raise WindowError(f"H + S = {H + S} exceeds training length {L_train}")
    if L_train > L - S:
        raise WindowError("no room for test windows")
    ws = make_windows(panel, H, S)
    t = ws.anchors - panel.t_origin + 1
    train = ws.select(t <= L_train - S)
    if rng is not None:
        keep = min(train.n, max(2, train.n // H))
        idx = np.sort(rng.choice(train.n, size=keep, replace=False))
        train = train.select(idx)
    elif train_stride > 1:
        train = train.select(slice(None, None, train_stride))
    return train, ws.select(t >= L_train)


def _local_update(W, G, B, P, lr_eff, ridge_mask, ridge, steps):
    for _ in range(steps):
        grad = G @ W - B + ridge * (ridge_mask[:, None] * W)
        W = W - lr_eff * (P[:, None] * grad)
    return W


def _prepare(config: FedRunConfig, panels, H: int, replicate: int):
    S = config.s_steps
    train_sets, test_sets, scales = [], [], []
    for spec, panel in zip(config.client_specs, panels):
        rng = None
        if config.train_sampling == "effective":
            # stream keyed by (seed, client, H, replicate); feature slot unused
            rng = feature_rng(config.seed, spec.client_id, 0, 1, H, replicate)
        try:
            tr, te = split_windows(panel, H, S, config.train_fraction, int(config.train_stride), rng)
        except WindowError as exc:
            raise RunError(f"insufficient data: {exc}", client_id=spec.client_id, horizon=H) from exc
        if tr.n < 2 or te.n < 1:
            raise RunError("insufficient windows", client_id=spec.client_id, horizon=H)
        trn, stats = normalize_and_flatten(tr)
        ten, _ = normalize_and_flatten(te, stats)
        train_sets.append(trn)
        test_sets.append(ten)
        scales.append(np.repeat(stats.std, S))
    cov = aggregate_covariance([moment_parcel(ws.inputs) for ws in train_sets])
    basis = eigendecompose(cov, window_h=H).with_energy(config.eta_energy)
    U = basis.components
    data = []
    for spec, tr, te, sc in zip(config.client_specs, train_sets, test_sets, scales):
        Ztr = np.hstack([tr.inputs @ U, np.ones((tr.n, 1))])
        Zte = np.hstack([te.inputs @ U, np.ones((te.n, 1))])
        data.append(_ClientData(spec.client_id, Ztr, tr.targets, Zte, te.targets, sc))
    return basis, data


def run_federated_training(
    config: FedRunConfig, H: int, panels=None, threads: int = 1, replicate: int = 0
) -> FedRunResult:
    """Train at horizon ``H`` and evaluate on each client's held-out tail."""
    if panels is None:
        panels = client_panels(config)
    basis, data = _prepare(config, panels, H, replicate)
    d = basis.retained_dim
    lam = config.ridge_lambda
    ridge_mask = np.ones(d + 1)
    ridge_mask[-1] = 0.0
    # diagonal preconditioner from the pooled spectrum; intercept unscaled
    P = np.concatenate([1.0 / (basis.eigenvalues[:d] + lam + 1e-12), [1.0]])
    sqrtP = np.sqrt(P)

    grams = []
    for cd in data:
        n = cd.Z_train.shape[0]
        G = cd.Z_train.T @ cd.Z_train / n
        B = cd.Z_train.T @ cd.Y_train / n
        Hk = sqrtP[:, None] * (G + lam * np.diag(ridge_mask)) * sqrtP[None, :]
        lmax = float(np.linalg.eigvalsh(Hk)[-1])
        grams.append((G, B, config.learning_rate / max(lmax, 1e-12), n))
    counts = np.array([g[3] for g in grams], dtype=float)
    agg = counts / counts.sum()

    out_dim = data[0].Y_train.shape[1]
    W = np.zeros((d + 1, out_dim))

    def local(k):
        G, B, lr_eff, _ = grams[k]
        return _local_update(W, G, B, P, lr_eff, ridge_mask, lam, config.local_steps)

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for _ in range(config.rounds):
            if pool is None:
                locals_ = [local(k) for k in range(len(data))]
            else:
                locals_ = list(pool.map(local, range(len(data))))
            # fixed-order reduction keeps results schedule independent
            W = sum(a * Wk for a, Wk in zip(agg, locals_))
    finally:
        if pool is not None:
            pool.shutdown()

    client_mse, client_raw = {}, {}
    for cd in data:
        resid = cd.Z_test @ W - cd.Y_test
        client_mse[cd.client_id] = float(np.mean(resid**2))
        client_raw[cd.client_id] = float(np.mean((resid * cd.target_scale) ** 2))
    pi = np.asarray(config.pi_weights)
    server = float(sum(p * client_mse[cd.client_id] for p, cd in zip(pi, data)))
    model = GlobalModel(W, H, d)
    return FedRunResult(
        model,
        client_mse,
        server,
        client_raw,
        {cd.client_id: int(c) for cd, c in zip(data, counts)},
        basis,
    )


@dataclass
class SweepResult:
    server: LossCurve
    clients: dict
    retained_dims: list
    server_se: np.ndarray
    runs: list = field(repr=False, default_factory=list)

    def tie_tolerance(self, smoothing_window: int = 3, z: float = 2.0) -> float:
        """Noise level below which smoothed differences count as ties.

        ``z`` standard errors of the difference of two window means, using the
        median replicate standard error; 0 when there is a single replicate.
        """
        se = float(np.median(self.server_se))
        return z * np.sqrt(2.0) * se / np.sqrt(smoothing_window)


def sweep_horizons(config: FedRunConfig, threads: int = 1) -> SweepResult:
    """One fresh basis and model per grid horizon (and replicate); empirical curves."""
    panels = client_panels(config)
    R = int(config.replicates)
    jobs = [(H, r) for H in config.h_grid for r in range(R)]

    def one(job):
        H, r = job
        try:
            return run_federated_training(config, H, panels, replicate=r)
        except RunError as exc:
            if exc.horizon is None:
                raise RunError(exc.reason, client_id=exc.client_id, horizon=H) from exc
            raise

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            flat = list(pool.map(one, jobs))
    else:
        flat = [one(j) for j in jobs]
    runs = [flat[i * R : (i + 1) * R] for i in range(len(config.h_grid))]

    S = config.s_steps
    grid = np.asarray(config.h_grid)
    srv = np.array([[r.server_mse for r in rr] for rr in runs])
    se = srv.std(axis=1, ddof=1) / np.sqrt(R) if R > 1 else np.zeros(len(runs))
    server = LossCurve(grid, [LossBreakdown.empirical(m) for m in srv.mean(axis=1)], S, "empirical", "server")
    clients = {
        cid: LossCurve(
            grid,
            [LossBreakdown.empirical(np.mean([r.client_mse[cid] for r in rr])) for rr in runs],
            S,
            "empirical",
            cid,
        )
        for cid in config.client_ids
    }
    dims = [rr[0].model.retained_dim for rr in runs]
    return SweepResult(server, clients, dims, se, runs)
