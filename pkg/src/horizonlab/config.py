"""Experiment configuration: JSON schema, validation and the canonical experiment.

The file is a JSON object with ``schema_version`` 1.  ``clients`` is either a
list of explicit client objects or ``{"generator": {...}}`` describing a
random federation drawn from a seed.  Unknown keys are rejected so typos do
not silently fall back to defaults.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, HorizonLabError
from .fedsim import FedRunConfig
from .loss import LossConstants
from .sdg import DEFAULT_EPSILON, ClientSpec, SeasonalComponent

SCHEMA_VERSION = 1

_CLIENT_KEYS = {
    "client_id", "feature_count", "seasonal", "ar_coeffs", "trend_slope", "noise_mean",
    "noise_std", "skew_scale", "skew_shift", "observed_features",
}
_GENERATOR_KEYS = {
    "count", "feature_count", "periods", "amplitude", "ar_rho", "trend_slope", "noise_std",
    "noise_mean", "skew_scale", "skew_shift", "series_length",
}
_FEDRUN_KEYS = {
    "series_length", "h_grid", "s_steps", "rounds", "local_steps", "learning_rate", "ridge_lambda",
    "train_fraction", "pi_weights", "eta_energy", "train_stride", "train_sampling", "replicates",
}
_SELECTION_KEYS = {"tau", "epsilon", "delta", "trim_alpha"}
_SIMULATE_KEYS = {"smoothing_window", "tie_z"}
_OUTPUT_KEYS = {"directory", "format"}
_TOP_KEYS = {
    "schema_version", "seed", "clients", "fedrun", "selection", "constants", "simulate", "outputs",
}


@dataclass
class Selection:
    tau: float = 0.95
    epsilon: float = DEFAULT_EPSILON
    delta: float = None
    trim_alpha: float = 0.0


@dataclass
class SimulateOptions:
    smoothing_window: int = 3
    tie_z: float = 2.0


@dataclass
class ExperimentConfig:
    clients: list
    fedrun: dict
    seed: int = 0
    selection: Selection = field(default_factory=Selection)
    constants: LossConstants = field(default_factory=LossConstants)
    simulate: SimulateOptions = field(default_factory=SimulateOptions)
    output_dir: str = None
    output_format: str = "csv"
    generator: dict = None  # kept so a new seed can redraw a random federation
    schema_version: int = SCHEMA_VERSION

    def fed_config(self) -> FedRunConfig:
        try:
            return FedRunConfig(client_specs=list(self.clients), seed=self.seed, **self.fedrun)
        except HorizonLabError as exc:
            raise ConfigError(f"fedrun: {exc}") from exc

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Same experiment under another top-level seed (random federations are redrawn)."""
        clients = self.clients
        if self.generator is not None:
            clients = random_federation(self.generator, seed)
        return ExperimentConfig(
            clients, dict(self.fedrun), int(seed), self.selection, self.constants, self.simulate,
            self.output_dir, self.output_format, self.generator, self.schema_version,
        )


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(obj) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")


def _components(raw, where):
    out = []
    for c in raw:
        if isinstance(c, dict):
            _check_keys(c, {"amplitude", "period", "phase"}, where)
            out.append(SeasonalComponent(float(c["amplitude"]), float(c["period"]), float(c.get("phase", 0.0))))
        else:
            out.append(SeasonalComponent(*[float(v) for v in c]))
    return tuple(out)


def client_from_dict(obj: dict) -> ClientSpec:
    _check_keys(obj, _CLIENT_KEYS, "client")
    if "client_id" not in obj or "feature_count" not in obj:
        raise ConfigError("client needs client_id and feature_count")
    cid = str(obj["client_id"])
    F = int(obj["feature_count"])
    raw = obj.get("seasonal", [])
    # a flat component list applies to every feature
    if raw and all(isinstance(c, dict) for c in raw):
        seasonal = (_components(raw, f"client {cid} seasonal"),) * F
    else:
        seasonal = tuple(_components(r, f"client {cid} seasonal") for r in raw) if raw else ((),) * F

    def vec(name, default):
        v = obj.get(name, default)
        return tuple(np.broadcast_to(np.asarray(v, dtype=float), (F,)).tolist())

    try:
        return ClientSpec(
            client_id=cid,
            feature_count=F,
            seasonal=seasonal,
            ar_coeffs=tuple(float(a) for a in obj.get("ar_coeffs", ())),
            trend_slope=vec("trend_slope", 0.0),
            noise_mean=vec("noise_mean", 0.0),
            noise_std=vec("noise_std", 1.0),
            skew_scale=vec("skew_scale", 1.0),
            skew_shift=vec("skew_shift", 0.0),
            observed_features=tuple(bool(o) for o in np.broadcast_to(obj.get("observed_features", True), (F,))),
        )
    except (HorizonLabError, ValueError, TypeError) as exc:
        raise ConfigError(f"client {cid}: {exc}") from exc


def client_to_dict(spec: ClientSpec) -> dict:
    return {
        "client_id": spec.client_id,
        "feature_count": spec.feature_count,
        "seasonal": [
            [{"amplitude": c.amplitude, "period": c.period, "phase": c.phase} for c in comps]
            for comps in spec.seasonal
        ],
        "ar_coeffs": list(spec.ar_coeffs),
        "trend_slope": list(spec.trend_slope),
        "noise_mean": list(spec.noise_mean),
        "noise_std": list(spec.noise_std),
        "skew_scale": list(spec.skew_scale),
        "skew_shift": list(spec.skew_shift),
        "observed_features": list(spec.observed_features),
    }


def _range(gen, name, default):
    v = gen.get(name, default)
    lo, hi = (float(v), float(v)) if np.isscalar(v) else (float(v[0]), float(v[1]))
    if hi < lo:
        raise ConfigError(f"generator {name}: empty range [{lo}, {hi}]")
    return lo, hi


def random_federation(gen: dict, seed: int) -> list:
    """Draw a federation from ranges.

    Periods are assigned round-robin from ``periods``; AR(1) coefficients,
    amplitudes, trends and skews are uniform in their ranges; phases are
    uniform on ``[0, 2 pi)`` per feature.
    """
    _check_keys(gen, _GENERATOR_KEYS, "clients.generator")
    K = int(gen.get("count", 0))
    F = int(gen.get("feature_count", 1))
    if K < 1 or F < 1:
        raise ConfigError("generator needs positive count and feature_count")
    periods = [float(p) for p in gen.get("periods", [])]
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(b"federation"),))
    rng = np.random.Generator(np.random.Philox(ss))
    draw = lambda name, default, size=None: rng.uniform(*_range(gen, name, default), size=size)
    out = []
    for k in range(K):
        rho = float(draw("ar_rho", 0.0))
        amp = draw("amplitude", 1.0, F)
        phase = rng.uniform(0.0, 2.0 * np.pi, F)
        seasonal = (
            tuple((SeasonalComponent(float(amp[f]), periods[k % len(periods)], float(phase[f])),) for f in range(F))
            if periods
            else ((),) * F
        )
        try:
            out.append(
                ClientSpec(
                    client_id=f"client_{k}",
                    feature_count=F,
                    seasonal=seasonal,
                    ar_coeffs=(rho,) if rho != 0.0 else (),
                    trend_slope=tuple(draw("trend_slope", 0.0, F)),
                    noise_mean=tuple(draw("noise_mean", 0.0, F)),
                    noise_std=tuple(draw("noise_std", 1.0, F)),
                    skew_scale=tuple(draw("skew_scale", 1.0, F)),
                    skew_shift=tuple(draw("skew_shift", 0.0, F)),
                ).validate()
            )
        except HorizonLabError as exc:
            raise ConfigError(f"generator client_{k}: {exc}") from exc
    return out


def _grid(v):
    if isinstance(v, dict):
        _check_keys(v, {"start", "stop", "step"}, "h_grid")
        return list(range(int(v["start"]), int(v["stop"]) + 1, int(v.get("step", 1))))
    return [int(h) for h in v]


def config_from_dict(obj: dict) -> ExperimentConfig:
    _check_keys(obj, _TOP_KEYS, "config")
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    seed = int(obj.get("seed", 0))
    if seed < 0:
        raise ConfigError("seed must be nonnegative")

    raw_clients = obj.get("clients")
    generator = None
    fedrun = dict(obj.get("fedrun", {}))
    _check_keys(fedrun, _FEDRUN_KEYS, "fedrun")
    if isinstance(raw_clients, dict) and "generator" in raw_clients:
        _check_keys(raw_clients, {"generator"}, "clients")
        generator = dict(raw_clients["generator"])
        clients = random_federation(generator, seed)
        if "series_length" in generator and "series_length" not in fedrun:
            fedrun["series_length"] = generator["series_length"]
    elif isinstance(raw_clients, list) and raw_clients:
        clients = [client_from_dict(c) for c in raw_clients]
    else:
        raise ConfigError("clients must be a non-empty list or a generator block")
    ids = [c.client_id for c in clients]
    if len(set(ids)) != len(ids):
        raise ConfigError("client ids must be unique")
    for c in clients:
        try:
            c.validate()
        except HorizonLabError as exc:
            raise ConfigError(f"client {c.client_id}: {exc}") from exc

    if "series_length" not in fedrun or "h_grid" not in fedrun:
        raise ConfigError("fedrun needs series_length and h_grid")
    fedrun["h_grid"] = _grid(fedrun["h_grid"])

    sel = obj.get("selection", {})
    _check_keys(sel, _SELECTION_KEYS, "selection")
    selection = Selection(**sel)
    if not 0.0 < selection.tau <= 1.0 or not 0.0 < selection.epsilon < 1.0:
        raise ConfigError("selection: tau must lie in (0, 1] and epsilon in (0, 1)")
    if not 0.0 <= selection.trim_alpha < 0.5:
        raise ConfigError("selection: trim_alpha must lie in [0, 0.5)")

    cons = obj.get("constants", {})
    _check_keys(cons, {f.name for f in fields(LossConstants)}, "constants")
    constants = LossConstants(**{k: float(v) for k, v in cons.items()})

    sim = obj.get("simulate", {})
    _check_keys(sim, _SIMULATE_KEYS, "simulate")
    simulate = SimulateOptions(**sim)

    outs = obj.get("outputs", {})
    _check_keys(outs, _OUTPUT_KEYS, "outputs")
    fmt = outs.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError("outputs.format must be csv or json")

    cfg = ExperimentConfig(
        clients, fedrun, seed, selection, constants, simulate, outs.get("directory"), fmt, generator
    )
    cfg.fed_config()  # surfaces fedrun errors at load time
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(obj)


def canonical_dict(seed: int = 0) -> dict:
    """The reference experiment: four skewed two-feature clients with periods 20 and 24."""
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "clients": {
            "generator": {
                "count": 4,
                "feature_count": 2,
                "periods": [20, 24],
                "amplitude": 1.0,
                "ar_rho": [0.6, 0.8],
                "trend_slope": 1e-4,
                "noise_std": 0.3,
                "skew_scale": [0.5, 2.0],
                "skew_shift": [-2.0, 2.0],
            }
        },
        "fedrun": {
            "series_length": 6000,
            "h_grid": {"start": 2, "stop": 64, "step": 2},
            "s_steps": 4,
            "rounds": 100,
            "local_steps": 1,
            "learning_rate": 1.0,
            "ridge_lambda": 1e-3,
            "train_fraction": 0.7,
            "eta_energy": 0.99,
            "train_sampling": "effective",
            "replicates": 8,
        },
        "selection": {"tau": 0.95, "trim_alpha": 0.0},
        "simulate": {"smoothing_window": 3, "tie_z": 2.0},
    }


def canonical_config(seed: int = 0) -> ExperimentConfig:
    return config_from_dict(canonical_dict(seed))
