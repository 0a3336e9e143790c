"""Monte-Carlo benchmarks, ``h0`` constant calibration and file I/O."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .covariance import PipelineConfig, _config, emit_grid, fit_marginals, fit_pipeline
from .data import SnippetDataset, Subject, eval_grid, estimate_span, trapezoid, trapezoid_2d, validate_dataset
from .exceptions import BenchmarkAbort, ParseError
from .noise import h0_rule
from .simulate import SimConfig, sample_dataset
from .smoothing import estimate_mean
from .variance import estimate_varsigma_sq, l2_norm

log = logging.getLogger(__name__)

METHODS = ("noise", "snptm", "snptf")
MAX_FAIL_FRACTION = 0.2
BOOTSTRAP = 20
# spawn key reserved for the bootstrap stream, outside the replicate range
_BOOT_KEY = 2**32 - 1


def replicate_seed(master: int, r: int) -> int:
    """Seed of replicate ``r``; identical across scenarios sharing ``master``."""
    return int(np.random.SeedSequence(int(master), spawn_key=(int(r),)).generate_state(1)[0])


@dataclass(frozen=True)
class BenchScenario:
    """One benchmark cell.

    ``methods``: ``"noise"`` scores the noise variance only; ``"snptm"`` adds
    the latent variance and a Matern covariance fit; ``"snptf"`` a Fourier-basis
    covariance fit (sharing the marginal estimates with ``"snptm"``).
    """

    sim: SimConfig
    replicates: int = 100
    methods: tuple = ("noise", "snptm")
    pipeline: dict = field(default_factory=dict)
    grid_size: int = 51
    bootstrap: int = BOOTSTRAP

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValueError(f"methods must be a nonempty subset of {METHODS}, got {self.methods}")
        object.__setattr__(self, "methods", tuple(m for m in METHODS if m in self.methods))

    @property
    def metrics(self) -> tuple:
        out = ["rmse_sigma0"]
        if "snptm" in self.methods or "snptf" in self.methods:
            out.append("rmise_var")
        out += [f"rmise_cov_{m}" for m in ("snptm", "snptf") if m in self.methods]
        return tuple(out)

    def to_dict(self) -> dict:
        return {
            "sim": self.sim.to_dict(),
            "replicates": self.replicates,
            "methods": list(self.methods),
            "pipeline": dict(self.pipeline),
            "grid_size": self.grid_size,
            "bootstrap": self.bootstrap,
        }


@dataclass(frozen=True)
class ReplicateRecord:
    replicate: int
    seed: int
    squared_errors: dict
    estimates: dict
    fit_optimal: dict
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass(frozen=True)
class MetricSummary:
    value: float
    se: float
    n_used: int


@dataclass
class BenchResult:
    scenario: BenchScenario
    metrics: dict
    replicates: list
    wall_time: float

    @property
    def failures(self) -> list:
        return [r for r in self.replicates if r.failed]

    def per_replicate(self, metric: str) -> np.ndarray:
        """Squared errors by replicate id; ``nan`` for failed replicates."""
        return np.array([r.squared_errors.get(metric, np.nan) for r in self.replicates])

    def summary(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "metrics": {k: asdict(v) for k, v in self.metrics.items()},
            "failed_replicates": [[r.replicate, r.error] for r in self.failures],
            "all_fits_improve_on_starts": all(all(r.fit_optimal.values()) for r in self.replicates if not r.failed),
            "wall_time_s": self.wall_time,
        }


def _score_replicate(scenario: BenchScenario, r: int, master: int) -> ReplicateRecord:
    seed = replicate_seed(master, r)
    cfg = scenario.sim.with_seed(seed)
    sq, est, opt = {}, {}, {}
    try:
        ds, truth = sample_dataset(cfg)
        pcfg = _config(scenario.pipeline, {"grid_size": scenario.grid_size})
        marg = fit_marginals(ds, pcfg)
        est["sigma0_sq"] = marg.noise.sigma0_sq
        est["h0"] = marg.noise.h0_used
        sq["rmse_sigma0"] = (marg.noise.sigma0_sq - truth.sigma0_sq) ** 2
        g, _, var, cov = truth.on_grid(scenario.grid_size)
        if "rmise_var" in scenario.metrics:
            sq["rmise_var"] = float(trapezoid((marg.variance.sigma_x_sq(g) - var) ** 2, g))
        for method, family in (("snptm", "matern"), ("snptf", "fourier")):
            if method not in scenario.methods:
                continue
            model = fit_pipeline(ds, replace(pcfg, correlation=family), marginals=marg)
            c_hat = emit_grid(model, g).cov
            sq[f"rmise_cov_{method}"] = float(trapezoid_2d((c_hat - cov) ** 2, g))
            est[f"theta_{method}"] = [float(v) for v in model.correlation.theta]
            if model.dn is not None:
                est["dn"] = model.dn
            opt[method] = model.fit.improves_on_starts
    except Exception as exc:  # recorded, excluded from aggregates
        return ReplicateRecord(r, seed, {}, {}, {}, f"{type(exc).__name__}: {exc}")
    return ReplicateRecord(r, seed, sq, est, opt)


def bootstrap_se(squared_errors, n_boot: int, rng: np.random.Generator) -> float:
    """Standard deviation of the root-mean over bootstrap resamples; ``nan`` if fewer than 2 values."""
    x = np.asarray(squared_errors, dtype=float)
    if x.size < 2:
        return float("nan")
    idx = rng.integers(0, x.size, size=(n_boot, x.size))
    return float(np.std(np.sqrt(x[idx].mean(axis=1)), ddof=1))


def aggregate(records: Sequence[ReplicateRecord], metrics: Sequence[str], master: int, n_boot: int = BOOTSTRAP) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence(int(master), spawn_key=(_BOOT_KEY,)))
    out = {}
    for name in metrics:
        x = np.array([r.squared_errors[name] for r in records if not r.failed and name in r.squared_errors])
        value = float(np.sqrt(x.mean())) if x.size else float("nan")
        out[name] = MetricSummary(value, bootstrap_se(x, n_boot, rng), int(x.size))
    return out


def run_benchmark(scenario: BenchScenario, threads: int = 1, allow_failures: bool = False) -> BenchResult:
    """Simulate, fit and score ``scenario.replicates`` datasets.

    The master seed is ``scenario.sim.seed``. Replicates are independent and
    collected by id, so ``threads`` does not change the result. Raises
    :class:`BenchmarkAbort` when more than 20% of replicates fail unless
    ``allow_failures``.
    """
    master = scenario.sim.seed
    start = time.perf_counter()
    ids = range(scenario.replicates)
    if threads > 1:
        records = Parallel(n_jobs=threads, prefer="threads")(delayed(_score_replicate)(scenario, r, master) for r in ids)
    else:
        records = [_score_replicate(scenario, r, master) for r in ids]
    records = sorted(records, key=lambda rec: rec.replicate)
    result = BenchResult(scenario, aggregate(records, scenario.metrics, master, scenario.bootstrap), records, time.perf_counter() - start)
    n_fail = len(result.failures)
    if n_fail:
        log.warning("%d of %d replicates failed", n_fail, scenario.replicates)
    if n_fail > MAX_FAIL_FRACTION * scenario.replicates and not allow_failures:
        err = BenchmarkAbort(f"{n_fail} of {scenario.replicates} replicates failed")
        err.result = result
        raise err
    return result


def write_bench_results(result: BenchResult, path) -> None:
    """One row per replicate per metric. Contains no timings, so it is reproducible byte for byte."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "seed", "metric", "squared_error", "status"])
        for rec in result.replicates:
            for name in result.scenario.metrics:
                if rec.failed:
                    w.writerow([rec.replicate, rec.seed, name, "nan", f"failed: {rec.error}"])
                else:
                    w.writerow([rec.replicate, rec.seed, name, repr(float(rec.squared_errors[name])), "ok"])


# ---------------------------------------------------------------- h0 constant


def fit_h0_constant(h_opt, x) -> float:
    """Least-squares slope through the origin, ``sum(h x) / sum(x**2)``."""
    h_opt = np.asarray(h_opt, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(np.sum(h_opt * x) / np.sum(x * x))


def golden_section(f, a: float, b: float, tol: float = 1e-6, maxiter: int = 200) -> float:
    """Minimiser of a unimodal ``f`` on ``[a, b]``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return c if fc <= fd else d


class _NoiseCurve:
    """Noise-variance estimate as a function of ``h0`` for one dataset, by cumulative sums."""

    def __init__(self, ds: SnippetDataset):
        pairs = ds.pairs
        gap = np.abs(ds.times[pairs.first] - ds.times[pairs.second])
        yj, yl = ds.values[pairs.first], ds.values[pairs.second]
        order = np.argsort(gap, kind="stable")
        self.gaps = gap[order]
        self.num = np.concatenate([[0.0], np.cumsum((pairs.weight * (yj * yj - yj * yl))[order])])
        self.den = np.concatenate([[0.0], np.cumsum(pairs.weight[order])])

    def __call__(self, h: float) -> float:
        k = int(np.searchsorted(self.gaps, h, side="left"))
        if self.den[k] == 0:
            return float("nan")
        return max(self.num[k] / self.den[k], 0.0)


@dataclass(frozen=True)
class CalibrationRow:
    setting: str
    n: float
    m: float
    delta_hat: float
    varsigma_norm: float
    h_opt: float
    x: float


@dataclass(frozen=True)
class CalibrationResult:
    constant: float
    rows: tuple

    def to_dict(self) -> dict:
        return {"constant": self.constant, "rows": [asdict(r) for r in self.rows]}


def _setting_label(cfg: SimConfig) -> str:
    s = cfg.setting if isinstance(cfg.setting, str) else "custom"
    noise = f"sigma0_sq={cfg.sigma0_sq}" if cfg.sigma0_sq is not None else f"snr={cfg.snr}"
    return f"{s}/n={cfg.n}/{noise}"


def _optimal_h(curves, target: float, lo: float, hi: float, n_scan: int = 200) -> float:
    def loss(h):
        v = np.array([c(h) for c in curves])
        return float(np.sum((v - target) ** 2))

    scan = np.geomspace(lo, hi, n_scan)
    values = np.array([loss(h) for h in scan])
    k = int(np.argmin(values))
    a, b = scan[max(k - 1, 0)], scan[min(k + 1, n_scan - 1)]
    return golden_section(loss, a, b)


def calibrate_h0_constant(
    settings: Sequence[SimConfig],
    G: int = 20,
    seed: int = 0,
    pipeline: Optional[dict] = None,
    threads: int = 1,
) -> CalibrationResult:
    """Regress per-setting optimal ``h0`` values on the rule's design term.

    For each setting, ``G`` datasets are drawn; the ``h0`` minimising the
    summed squared error of the noise variance estimates is found by a scan
    followed by golden-section refinement, and paired with
    ``x = delta_hat * |varsigma|_2 * (n m**2)**(-1/5)`` built from per-setting
    averages. Returns the through-origin slope.
    """
    if not settings:
        raise ValueError("settings must be nonempty")
    if G < 2:
        raise ValueError("G must be at least 2")
    pcfg = _config(pipeline, {})
    rows = []
    for k, base in enumerate(settings):
        def one(r, base=base):
            ds, truth = sample_dataset(base.with_seed(replicate_seed(seed + k, r)))
            mu = estimate_mean(ds, **pcfg.smoothing_kwargs(pcfg.bandwidth_mean))
            vs = estimate_varsigma_sq(ds, mu, **pcfg.smoothing_kwargs(pcfg.bandwidth_var))
            g = eval_grid(ds.domain_lo, ds.domain_hi, pcfg.grid_size)
            return _NoiseCurve(ds), estimate_span(ds).delta_hat, l2_norm(vs(g), g), float(np.mean(ds.m)), truth.sigma0_sq

        if threads > 1:
            parts = Parallel(n_jobs=threads, prefer="threads")(delayed(one)(r) for r in range(G))
        else:
            parts = [one(r) for r in range(G)]
        curves = [p[0] for p in parts]
        delta = float(np.mean([p[1] for p in parts]))
        norm = float(np.mean([p[2] for p in parts]))
        m_bar = float(np.mean([p[3] for p in parts]))
        target = parts[0][4]
        lo = float(np.nextafter(max(c.gaps[0] for c in curves), np.inf))
        h_opt = _optimal_h(curves, target, lo, delta)
        x = h0_rule(base.n, m_bar, delta, norm, constant=1.0)
        rows.append(CalibrationRow(_setting_label(base), base.n, m_bar, delta, norm, h_opt, x))
    c = fit_h0_constant([r.h_opt for r in rows], [r.x for r in rows])
    return CalibrationResult(c, tuple(rows))


DESK_SETTINGS = tuple(SimConfig(setting=s, n=n, snr=2.0) for s in ("I", "II", "III") for n in (50, 200))


# ---------------------------------------------------------------- file I/O


class Ingested(NamedTuple):
    dataset: SnippetDataset
    dropped: int


def ingest_csv(path, domain_lo: Optional[float] = None, domain_hi: Optional[float] = None, min_m: Optional[int] = None) -> Ingested:
    """Read ``subject_id,t,y`` rows (with header) into a validated dataset.

    Subjects keep their order of first appearance. With ``min_m`` subjects
    having fewer rows are dropped and counted. The domain defaults to the
    observed time range.
    """
    subjects: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, "empty file") from None
        if [h.strip().lower() for h in header] != ["subject_id", "t", "y"]:
            raise ParseError(1, "header must be subject_id,t,y")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(line, f"expected 3 fields, got {len(row)}")
            sid = row[0].strip()
            try:
                t, y = float(row[1]), float(row[2])
            except ValueError:
                raise ParseError(line, "malformed numeric field") from None
            if not (math.isfinite(t) and math.isfinite(y)):
                raise ParseError(line, "non-finite value")
            ts, ys = subjects.setdefault(sid, ([], []))
            ts.append(t)
            ys.append(y)
    dropped = 0
    if min_m is not None:
        kept = {k: v for k, v in subjects.items() if len(v[0]) >= min_m}
        dropped = len(subjects) - len(kept)
        subjects = kept
        if dropped:
            log.info("dropped %d subjects with fewer than %d observations", dropped, min_m)
    all_t = [t for ts, _ in subjects.values() for t in ts]
    lo = domain_lo if domain_lo is not None else (min(all_t) if all_t else 0.0)
    hi = domain_hi if domain_hi is not None else (max(all_t) if all_t else 1.0)
    raw = SnippetDataset(
        float(lo), float(hi), tuple(Subject(k, np.array(ts), np.array(ys)) for k, (ts, ys) in subjects.items())
    )
    return Ingested(validate_dataset(raw), dropped)


def write_matrix_csv(path, grid, matrix) -> None:
    """Square matrix with grid abscissae as header row and first column."""
    grid = np.asarray(grid, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [repr(float(g)) for g in grid])
        for g, row in zip(grid, np.asarray(matrix, dtype=float)):
            w.writerow([repr(float(g))] + [repr(float(v)) for v in row])


def write_curve_csv(path, grid, values, name: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", name])
        for g, v in zip(np.asarray(grid, dtype=float), np.asarray(values, dtype=float)):
            w.writerow([repr(float(g)), repr(float(v))])


def write_summary(path, summary: dict) -> None:
    """Nested key-value summary as indented JSON."""
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if callable(obj):
        return getattr(obj, "__name__", "custom")
    raise TypeError(f"cannot serialise {type(obj).__name__}")
