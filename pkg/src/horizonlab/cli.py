"""Command-line front end: ``horizonlab {generate,analyze,simulate,validate}``.

Exit status: 0 when every output was written and every consistency gate
passed, 2 for configuration or input errors, 3 for a failed gate, 1 for any
other library error.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .csvio import dump_json, read_series_csv, write_curves_csv, write_series_csv
from .errors import ConfigError, HorizonLabError, ParseError
from .fedsim import sweep_horizons
from .fit import fit_sdg
from .horizon import check_unimodality, decide_horizons
from .loss import server_aggregate_curve, total_loss_curve
from .metrics import fidelity_report
from .sdg import generate_client, generate_client_series


class GateError(HorizonLabError):
    """An output failed a self-consistency check."""


def resolve_threads(flag) -> int:
    if flag is not None:
        n = int(flag)
    else:
        env = os.environ.get("HORIZONLAB_THREADS", "").strip()
        try:
            n = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"HORIZONLAB_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("thread count must be positive")
    return n


def _experiment(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args, cfg=None) -> Path:
    d = args.out or (cfg.output_dir if cfg is not None else None)
    if not d:
        raise ConfigError("--out is required (or outputs.directory in the config)")
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _format(args, cfg=None) -> str:
    return args.format or (cfg.output_format if cfg is not None else "csv")


def _write_curves(curves, out: Path, stem: str, fmt: str) -> Path:
    if fmt == "json":
        path = out / f"{stem}.json"
        dump_json(
            [
                {
                    "owner": cv.owner,
                    "provenance": cv.provenance,
                    "S": cv.s_steps,
                    "H": cv.horizons,
                    "rows": [b.as_dict() for b in cv.values],
                }
                for cv in curves
            ],
            path,
        )
    else:
        path = out / f"{stem}.csv"
        write_curves_csv(curves, path)
    return path


def analysis(cfg: ExperimentConfig):
    """Analytic client and server curves plus the horizon decision."""
    fed = cfg.fed_config()
    S = fed.s_steps
    curves = [
        total_loss_curve(spec, fed.h_grid, S, L, cfg.constants, True, cfg.selection.epsilon)
        for spec, L in zip(fed.client_specs, fed.series_length)
    ]
    server = server_aggregate_curve(curves, fed.pi_weights)
    decision = decide_horizons(
        fed.client_specs,
        fed.series_length,
        cfg.selection.tau,
        cfg.selection.epsilon,
        cfg.selection.trim_alpha,
        cfg.selection.delta,
    )
    return curves, server, decision


def cmd_generate(args) -> int:
    cfg = _experiment(args)
    out = _out_dir(args, cfg)
    fmt = _format(args, cfg)
    fed = cfg.fed_config()
    threads = resolve_threads(args.threads)

    def one(k):
        spec, L = fed.client_specs[k], fed.series_length[k]
        try:
            return generate_client(spec, L, cfg.seed)
        except HorizonLabError as exc:
            raise ConfigError(f"client {spec.client_id}: {exc}") from exc

    idx = range(len(fed.client_specs))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            panels = list(pool.map(one, idx))
    else:
        panels = [one(k) for k in idx]
    for panel, L in zip(panels, fed.series_length):
        if panel.length != L:
            raise GateError(f"client {panel.client_id}: {panel.length} rows, expected {L}")
        if fmt == "json":
            dump_json(
                {"client_id": panel.client_id, "t": panel.times, "values": panel.values, "observed": list(panel.observed)},
                out / f"series_{panel.client_id}.json",
            )
        else:
            write_series_csv(panel, out / f"series_{panel.client_id}.csv")
    print(f"wrote {len(panels)} series to {out}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _experiment(args)
    out = _out_dir(args, cfg)
    curves, server, decision = analysis(cfg)
    for cv in curves + [server]:
        resum = np.sum([cv.column(c) for c in ("bayes_ar", "bayes_seasonal", "bayes_trend", "approx_curvature", "approx_variance")], axis=0)
        if np.max(np.abs(resum - cv.totals)) > 1e-10 * max(1.0, float(np.max(np.abs(cv.totals)))):
            raise GateError(f"curve {cv.owner}: totals differ from component sums")
    _write_curves(curves + [server], out, "analytic_curves", _format(args, cfg))
    verdict = check_unimodality(server, smoothing_window=1)
    payload = decision.as_dict()
    payload["analytic_server_unimodal"] = verdict.unimodal
    payload["analytic_server_argmin"] = verdict.argmin_horizon
    dump_json(payload, out / "decision.json")
    print(f"server horizon {decision.server_horizon}; wrote {out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _experiment(args)
    out = _out_dir(args, cfg)
    fed = cfg.fed_config()
    threads = resolve_threads(args.threads)
    t0 = time.perf_counter()
    res = sweep_horizons(fed, threads=threads)
    elapsed = time.perf_counter() - t0
    if not np.all(np.isfinite(res.server.totals)):
        raise GateError("empirical server curve has non-finite entries")
    w = cfg.simulate.smoothing_window
    grid = res.server.horizons
    tol = res.tie_tolerance(w, cfg.simulate.tie_z) if grid.size >= 3 else 0.0
    _, _, decision = analysis(cfg)
    h_star = decision.server_horizon
    payload = {
        "seed": cfg.seed,
        "smoothing_window": w,
        "tie_tolerance": tol,
        "replicates": fed.replicates,
        "server_mse": res.server.totals,
        "server_se": res.server_se,
        "retained_dims": res.retained_dims,
        "h_star": h_star,
        "band": [h_star - 4, h_star + 12],
    }
    if grid.size >= 3:
        v = check_unimodality(res.server, w, tol=tol)
        payload.update(
            verdict="unimodal" if v.unimodal else "not unimodal",
            unimodal=v.unimodal,
            argmin_horizon=v.argmin_horizon,
            violations=[int(grid[i]) for i in v.violations],
            plateau=v.plateau,
            argmin_in_band=h_star - 4 <= v.argmin_horizon <= h_star + 12,
        )
    else:
        k = int(np.argmin(res.server.totals))
        payload.update(verdict="undetermined", unimodal=None, argmin_horizon=int(grid[k]), violations=[])
    _write_curves([res.server] + list(res.clients.values()), out, "empirical_curves", _format(args, cfg))
    dump_json(payload, out / "verdict.json")
    print(f"{payload['verdict']}, argmin H={payload['argmin_horizon']} ({elapsed:.1f}s); wrote {out}")
    return 0


def cmd_validate(args) -> int:
    if not args.input:
        raise ConfigError("--input is required")
    out = _out_dir(args)
    panel = read_series_csv(args.input)
    report = fit_sdg(panel, max_peaks=args.max_peaks, p_max=args.p_max, criterion=args.criterion)
    seed = 0 if args.seed is None else args.seed
    synth = generate_client_series(report.spec, panel.length, seed, t_origin=panel.t_origin)
    fidelity = {}
    for f in range(panel.feature_count):
        if panel.observed[f]:
            fidelity[f"feature_{f}"] = fidelity_report(panel.values[f], synth.values[f], args.acf_lags).as_dict()
    dump_json(report.as_dict(), out / "fit.json")
    dump_json(fidelity, out / "fidelity.json")
    ks = max(v["ks"] for v in fidelity.values())
    print(f"order {report.selected_order}, max KS {ks:.4f}; wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="horizonlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="experiment JSON file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
        p.add_argument("--threads", type=int, help="worker threads (default: $HORIZONLAB_THREADS or 1)")
        p.add_argument("--format", choices=("csv", "json"), help="tabular output format")

    common(sub.add_parser("generate", help="write one series file per client"))
    common(sub.add_parser("analyze", help="analytic loss curves and horizon decision"))
    common(sub.add_parser("simulate", help="empirical loss curves and unimodality verdict"))
    v = sub.add_parser("validate", help="fit, re-synthesize and score a series CSV")
    common(v, config=False)
    v.add_argument("--input", help="series CSV to fit")
    v.add_argument("--max-peaks", type=int, default=3)
    v.add_argument("--p-max", type=int, default=10)
    v.add_argument("--criterion", choices=("aic", "bic"), default="bic")
    v.add_argument("--acf-lags", type=int, default=30)
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        return COMMANDS[args.command](args)
    except (ConfigError, ParseError) as exc:
        print(f"horizonlab: error: {exc}", file=sys.stderr)
        return 2
    except GateError as exc:
        print(f"horizonlab: gate failed: {exc}", file=sys.stderr)
        return 3
    except HorizonLabError as exc:
        print(f"horizonlab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
