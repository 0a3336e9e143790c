"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 estimation-stage failure,
4 benchmark abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    DESK_SETTINGS,
    BenchScenario,
    calibrate_h0_constant,
    ingest_csv,
    run_benchmark,
    write_bench_results,
    write_curve_csv,
    write_matrix_csv,
    write_summary,
)
from .covariance import PipelineConfig, emit_grid, fit_pipeline
from .exceptions import BenchmarkAbort, DatasetError, StageError
from .simulate import SimConfig, sample_dataset, write_dataset_csv

EXIT_OK, EXIT_INPUT, EXIT_STAGE, EXIT_ABORT = 0, 2, 3, 4

log = logging.getLogger("snippetcov")


class InputError(Exception):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object")
    return cfg


def _known(cls, d: dict, what: str) -> dict:
    names = {f.name for f in fields(cls)}
    bad = set(d) - names
    if bad:
        raise InputError(f"unknown {what} keys: {sorted(bad)}")
    return d


def _sim_config(args, cfg: dict) -> SimConfig:
    d = dict(cfg.get("sim", {}))
    for key in ("setting", "n", "m", "design", "delta", "mean", "sigma0_sq", "snr"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    if d.get("sigma0_sq") is not None:
        d.setdefault("snr", None)
    if "domain" in d:
        d["domain"] = tuple(d["domain"])
    d["seed"] = args.seed
    return SimConfig(**_known(SimConfig, d, "sim"))


def _pipeline_config(args, cfg: dict) -> PipelineConfig:
    d = dict(cfg.get("pipeline", {}))
    for key in ("correlation", "dn_method", "bandwidth_mean", "bandwidth_var", "h0", "grid_size", "kernel", "weights"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    if getattr(args, "dn_candidates", None):
        d["dn_candidates"] = args.dn_candidates
    if "dn_candidates" in d:
        d["dn_candidates"] = tuple(int(v) for v in d["dn_candidates"])
    d["seed"] = args.seed
    return PipelineConfig(**_known(PipelineConfig, d, "pipeline"))


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_data(args):
    lo, hi = (args.domain if args.domain else (None, None))
    ing = ingest_csv(args.data, lo, hi, args.min_m)
    return ing


def _write_model(out: Path, model, grid=None, extra=None):
    res = emit_grid(model, grid)
    write_matrix_csv(out / "cov_grid.csv", res.grid, res.cov)
    write_curve_csv(out / "mean_grid.csv", res.grid, res.mean, "mean")
    write_curve_csv(out / "var_grid.csv", res.grid, res.sigma_x_sq, "sigma_x_sq")
    summary = model.summary()
    summary["undefined_correlation_cells"] = res.n_undefined
    if extra:
        summary.update(extra)
    write_summary(out / "summary.txt", summary)


def cmd_simulate(args, cfg):
    sim = _sim_config(args, cfg)
    ds, truth = sample_dataset(sim)
    out = _out(args)
    write_dataset_csv(ds, out / "data.csv")
    g, mu, var, cov = truth.on_grid(args.grid_size or 51)
    write_matrix_csv(out / "truth_cov_grid.csv", g, cov)
    write_curve_csv(out / "truth_mean_grid.csv", g, mu, "mean")
    write_curve_csv(out / "truth_var_grid.csv", g, var, "sigma_x_sq")
    write_summary(out / "summary.txt", {"sim": sim.to_dict(), "sigma0_sq": truth.sigma0_sq, "n_obs": ds.n_obs})
    return EXIT_OK


def cmd_estimate(args, cfg):
    ing = _read_data(args)
    pcfg = _pipeline_config(args, cfg)
    model = fit_pipeline(ing.dataset, pcfg)
    _write_model(_out(args), model, extra={"n_subjects": ing.dataset.n, "dropped_subjects": ing.dropped})
    return EXIT_OK


def cmd_predict_grid(args, cfg):
    """Refit at the tuning parameters recorded in an earlier summary, on a new grid."""
    ing = _read_data(args)
    try:
        prior = json.loads(Path(args.summary).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read summary {args.summary}: {exc}") from exc
    pcfg = dict(prior.get("config", {}))
    pcfg.update(
        bandwidth_mean=prior["mean"]["bandwidth"],
        bandwidth_var=prior["varsigma_sq"]["bandwidth"],
        h0=prior["noise"]["h0"],
    )
    corr = prior.get("correlation", {})
    if prior.get("dn") is not None:
        pcfg["correlation"] = f"fourier:{prior['dn']}"
    if corr.get("theta") is not None:
        pcfg["theta_start"] = tuple(corr["theta"])
    pcfg["dn_candidates"] = tuple(pcfg.get("dn_candidates", (1,)))
    pcfg["seed"] = args.seed
    model = fit_pipeline(ing.dataset, PipelineConfig(**_known(PipelineConfig, pcfg, "pipeline")))
    lo, hi = model.domain
    grid = np.linspace(args.lo if args.lo is not None else lo, args.hi if args.hi is not None else hi, args.grid_size or 51)
    _write_model(_out(args), model, grid)
    return EXIT_OK


def cmd_benchmark(args, cfg):
    sim = _sim_config(args, cfg)
    bcfg = dict(cfg.get("benchmark", {}))
    if args.replicates is not None:
        bcfg["replicates"] = args.replicates
    if args.methods:
        bcfg["methods"] = args.methods
    bcfg["methods"] = tuple(bcfg.get("methods", ("noise", "snptm")))
    if args.grid_size is not None:
        bcfg["grid_size"] = args.grid_size
    pcfg = _pipeline_config(args, cfg).to_dict()
    pcfg["dn_candidates"] = tuple(pcfg["dn_candidates"])
    scenario = BenchScenario(sim=sim, pipeline=pcfg, **bcfg)
    out = _out(args)
    try:
        result = run_benchmark(scenario, threads=args.threads)
    except BenchmarkAbort as exc:
        write_bench_results(exc.result, out / "bench_results.csv")
        write_summary(out / "summary.txt", exc.result.summary())
        raise
    write_bench_results(result, out / "bench_results.csv")
    write_summary(out / "summary.txt", result.summary())
    return EXIT_OK


def cmd_calibrate(args, cfg):
    settings = cfg.get("settings")
    if settings:
        sims = []
        for d in settings:
            d = dict(d)
            if d.get("sigma0_sq") is not None:
                d.setdefault("snr", None)
            sims.append(SimConfig(**_known(SimConfig, d, "settings")))
    else:
        sims = list(DESK_SETTINGS)
    G = args.G if args.G is not None else int(cfg.get("G", 20))
    res = calibrate_h0_constant(sims, G=G, seed=args.seed, threads=args.threads)
    write_summary(_out(args) / "summary.txt", {**res.to_dict(), "G": G, "seed": args.seed})
    print(f"{res.constant:.6g}")
    return EXIT_OK


def _add_global(p, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=default if suppress else 0, help="master random seed")
    p.add_argument("--config", default=default, help="JSON config file")
    p.add_argument("--out", default=default if suppress else ".", help="output directory")
    p.add_argument("--threads", type=int, default=default if suppress else 1, help="worker threads")


def _add_sim(p):
    p.add_argument("--setting", choices=["I", "II", "III"])
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int, help="mean (sparse) or exact (dense) points per subject")
    p.add_argument("--design", choices=["sparse", "dense"])
    p.add_argument("--delta", type=float)
    p.add_argument("--mean", choices=["mu1", "mu2", "zero"])
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--sigma0-sq", dest="sigma0_sq", type=float)
    noise.add_argument("--snr", type=float)


def _add_pipeline(p):
    p.add_argument("--correlation", help="matern, powerexp, rationalquad, fourier or fourier:<d>")
    p.add_argument("--dn-candidates", dest="dn_candidates", type=int, nargs="+")
    p.add_argument("--dn-method", dest="dn_method", choices=["cv5", "aic"])
    p.add_argument("--bandwidth-mean", dest="bandwidth_mean", type=float)
    p.add_argument("--bandwidth-var", dest="bandwidth_var", type=float)
    p.add_argument("--h0", type=float)
    p.add_argument("--kernel", choices=["epanechnikov", "quartic", "triangular"])
    p.add_argument("--weights", choices=["obs", "subj"])


def _add_data(p):
    p.add_argument("--data", required=True, help="CSV with header subject_id,t,y")
    p.add_argument("--domain", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--min-m", dest="min_m", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snippetcov", description="Covariance estimation for functional snippets")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    _add_global(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic dataset")
    _add_global(p, suppress=True)
    _add_sim(p)
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit the covariance model to a CSV dataset")
    _add_global(p, suppress=True)
    _add_data(p)
    _add_pipeline(p)
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("predict-grid", help="re-emit grids at the tuning parameters of a previous run")
    _add_global(p, suppress=True)
    _add_data(p)
    p.add_argument("--summary", required=True, help="summary.txt from an estimate run")
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.set_defaults(func=cmd_predict_grid)

    p = sub.add_parser("benchmark", help="Monte-Carlo benchmark of one simulation cell")
    _add_global(p, suppress=True)
    _add_sim(p)
    _add_pipeline(p)
    p.add_argument("--replicates", type=int)
    p.add_argument("--methods", nargs="+", choices=["noise", "snptm", "snptf"])
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("calibrate-h0", help="calibrate the multiplier of the h0 rule")
    _add_global(p, suppress=True)
    p.add_argument("--G", type=int, help="datasets per setting")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except BenchmarkAbort as exc:
        print(f"benchmark aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except StageError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (InputError, DatasetError, OSError, ValueError, TypeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
