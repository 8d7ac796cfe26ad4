"""Synthetic regression task, lambda sweep, learning-rate stress test, invariance study."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core_math import RNG_ALGORITHM, gaussian, seeded_rng
from .dynamics import (
    MARGINAL,
    STABLE,
    TRACE_COLUMNS,
    UNSTABLE,
    FlowTrace,
    TrainConfig,
    TrainTrace,
    scale_drift,
    train,
    worst_label,
)
from .gauge import GaugeScales, invariance_error, random_scales
from .network import Dataset, Params, init_params

SWEEP_HEADER = (
    "lambda,train_mse_mean,train_mse_std,val_mse_mean,val_mse_std,drift_v_mean,"
    "n_stable,n_marginal,n_unstable"
)
STRESS_HEADER = "method,lr,val_mse_mean,label"
INVARIANCE_HEADER = "transform_index,delta_inv"
TRACE_HEADER = ",".join(TRACE_COLUMNS)
RUNS_HEADER = "lambda,lr,seed,train_mse,val_mse,drift_v,drift_u,label"
FLOW_HEADER = "t,G,mean_abs_v,max_abs_v,mean_u,mean_kappa"

# sub-stream keys under a run seed
DATA_STREAM, INIT_STREAM = 0, 1


def target_function(x):
    return np.sin(2.5 * x) + 0.2 * np.cos(6.0 * x) + 0.1 * x


@dataclass(frozen=True)
class DatasetConfig:
    n_train: int = 256
    train_lo: float = -2.0
    train_hi: float = 2.0
    val_lo: float = -3.0
    val_hi: float = 3.0
    n_val: int = 512
    noise_std: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not (self.train_lo < self.train_hi and self.val_lo < self.val_hi):
            raise ValueError("interval bounds must satisfy lo < hi")
        if self.n_train < 1 or self.n_val < 1:
            raise ValueError("sample counts must be >= 1")


def make_dataset(cfg: DatasetConfig) -> tuple[Dataset, Dataset]:
    """Noisy uniform training sample and a noiseless validation grid."""
    rng = seeded_rng(cfg.seed, DATA_STREAM)
    x = rng.uniform(cfg.train_lo, cfg.train_hi, size=cfg.n_train)
    y = target_function(x) + gaussian(rng, cfg.n_train, cfg.noise_std)
    xv = np.linspace(cfg.val_lo, cfg.val_hi, cfg.n_val)
    return Dataset(x[:, None], y[:, None], "train"), Dataset(xv[:, None], target_function(xv)[:, None], "validation")


def initial_params(seed: int, width: int, d: int = 1, m: int = 1) -> Params:
    return init_params(d, width, m, seeded_rng(seed, INIT_STREAM))


@dataclass(frozen=True)
class RunSummary:
    lam: float
    lr: float
    seed: int
    train_mse: float
    val_mse: float
    drift_v: float
    drift_u: float
    label: str


def run_one(seed: int, cfg: TrainConfig, dcfg: DatasetConfig) -> RunSummary:
    """Train one paired run: dataset and init depend only on ``seed``."""
    tr, va = make_dataset(replace(dcfg, seed=seed))
    trace = train(initial_params(seed, cfg.width), tr, va, replace(cfg, seed=seed))
    rec = final_record(trace)
    dv, du = scale_drift(trace)
    return RunSummary(
        cfg.lam, cfg.lr, seed,
        float(rec[TRACE_COLUMNS.index("train_mse")]),
        float(rec[TRACE_COLUMNS.index("val_mse")]),
        dv, du, trace.stability.label,
    )


def final_record(trace: TrainTrace) -> np.ndarray:
    """Metrics of the last iterate before divergence (or the last step)."""
    if trace.truncated_at is not None and len(trace) > 1:
        return trace.records[-2]
    return trace.records[-1]


def _run_star(args):
    return run_one(*args)


def run_many(tasks, jobs: int = 1) -> list[RunSummary]:
    """Evaluate ``(seed, cfg, dcfg)`` tasks, returning results in task order."""
    tasks = list(tasks)
    if jobs <= 1 or len(tasks) <= 1:
        return [run_one(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_run_star, tasks))


def _std(x) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


@dataclass(frozen=True)
class SweepRow:
    lam: float
    train_mse_mean: float
    train_mse_std: float
    val_mse_mean: float
    val_mse_std: float
    drift_v_mean: float
    n_stable: int
    n_marginal: int
    n_unstable: int


@dataclass
class SweepResult:
    rows: list[SweepRow]
    runs: list[RunSummary]
    seeds: tuple
    config: TrainConfig
    dataset: DatasetConfig


def lambda_sweep(lambdas, seeds, base: TrainConfig, dcfg: DatasetConfig, jobs: int = 1) -> SweepResult:
    seeds = tuple(int(s) for s in seeds)
    if len(seeds) < 2:
        raise ValueError("a sweep needs at least two seeds for a standard deviation")
    lambdas = [float(lam) for lam in lambdas]
    runs = run_many(((s, replace(base, lam=lam), dcfg) for lam in lambdas for s in seeds), jobs)
    rows = []
    for lam in lambdas:
        rs = [r for r in runs if r.lam == lam]
        tr = [r.train_mse for r in rs]
        va = [r.val_mse for r in rs]
        labels = [r.label for r in rs]
        rows.append(SweepRow(
            lam, float(np.mean(tr)), _std(tr), float(np.mean(va)), _std(va),
            float(np.mean([r.drift_v for r in rs])),
            labels.count(STABLE), labels.count(MARGINAL), labels.count(UNSTABLE),
        ))
    return SweepResult(rows, runs, seeds, base, dcfg)


@dataclass(frozen=True)
class StressRow:
    method: str
    lr: float
    val_mse_mean: float
    labels: tuple
    label: str


@dataclass
class StressResult:
    rows: list[StressRow]
    runs: list[RunSummary]
    seeds: tuple
    lambda_fixed: float
    config: TrainConfig
    dataset: DatasetConfig

    def row(self, method: str, lr: float) -> StressRow:
        return next(r for r in self.rows if r.method == method and r.lr == lr)


def lr_stress(lrs, lambda_fixed: float, seeds, base: TrainConfig, dcfg: DatasetConfig,
              jobs: int = 1) -> StressResult:
    """Baseline (lambda=0) against gauge-fixed training at each learning rate."""
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    lrs = [float(lr) for lr in lrs]
    methods = (("baseline", 0.0), ("gauge_fixed", float(lambda_fixed)))
    tasks = [(s, replace(base, lr=lr, lam=lam), dcfg) for _, lam in methods for lr in lrs for s in seeds]
    runs = run_many(tasks, jobs)
    rows = []
    k = 0
    for method, lam in methods:
        for lr in lrs:
            rs = runs[k:k + len(seeds)]
            k += len(seeds)
            labels = tuple(r.label for r in rs)
            rows.append(StressRow(method, lr, float(np.mean([r.val_mse for r in rs])), labels,
                                  worst_label(labels)))
    return StressResult(rows, runs, seeds, float(lambda_fixed), base, dcfg)


@dataclass
class InvarianceResult:
    deltas: np.ndarray
    seed: int
    n_inputs: int
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.deltas
        self.summary = {"min": float(d.min()), "median": float(np.median(d)), "max": float(d.max())}


def invariance_experiment(p: Params, n_transforms: int, n_inputs: int = 512, seed: int = 0,
                          include_identity: bool = False, input_range=(-3.0, 3.0),
                          log_range: float = 1.0) -> InvarianceResult:
    """Invariance error of ``p`` under random log-uniform neuron-wise rescalings.

    With ``include_identity`` the first transform is the identity (control row).
    """
    if n_transforms < 1:
        raise ValueError("n_transforms must be >= 1")
    rng = seeded_rng(seed, 2)
    X = rng.uniform(*input_range, size=(n_inputs, p.in_dim))
    deltas = []
    for k in range(n_transforms):
        if include_identity and k == 0:
            s = GaugeScales(np.ones(p.width))
        else:
            s = random_scales(rng, p.width, log_range)
        deltas.append(invariance_error(p, s, X))
    return InvarianceResult(np.array(deltas), seed, n_inputs)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: str, rows) -> Path:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header.split(","))
            for row in rows:
                w.writerow([_fmt(x) for x in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _run_rows(runs):
    return [(r.lam, r.lr, r.seed, r.train_mse, r.val_mse, r.drift_v, r.drift_u, r.label) for r in runs]


def write_metadata(path: Path, meta: dict) -> Path:
    """key=value lines (UTF-8, LF). ``timestamp`` is the only non-reproducible key."""
    lines = [f"{k}={_fmt(v)}" for k, v in meta.items()]
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def base_metadata() -> dict:
    return {
        "tool": "gaugefix",
        "tool_version": __version__,
        "rng_algorithm": RNG_ALGORITHM,
        "init_scheme": "W ~ N(0, 1/fan_in), biases zero",
        "relu_derivative_at_zero": 0,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def emit_reports(results, out_dir, metadata: dict | None = None) -> list[Path]:
    """Write CSV files for each result plus ``metadata.txt``; return written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if not isinstance(results, (list, tuple)):
        results = [results]
    meta = base_metadata()
    written = []
    for res in results:
        if isinstance(res, SweepResult):
            rows = [(r.lam, r.train_mse_mean, r.train_mse_std, r.val_mse_mean, r.val_mse_std,
                     r.drift_v_mean, r.n_stable, r.n_marginal, r.n_unstable) for r in res.rows]
            written.append(_write_csv(out / "sweep.csv", SWEEP_HEADER, rows))
            written.append(_write_csv(out / "sweep_runs.csv", RUNS_HEADER, _run_rows(res.runs)))
            meta.update(_config_meta("sweep", res.config, res.dataset, res.seeds))
        elif isinstance(res, StressResult):
            rows = [(r.method, r.lr, r.val_mse_mean, r.label) for r in res.rows]
            written.append(_write_csv(out / "stress.csv", STRESS_HEADER, rows))
            written.append(_write_csv(out / "stress_runs.csv", RUNS_HEADER, _run_rows(res.runs)))
            meta.update(_config_meta("stress", res.config, res.dataset, res.seeds))
            meta["stress.lambda_fixed"] = res.lambda_fixed
        elif isinstance(res, InvarianceResult):
            written.append(_write_csv(out / "invariance.csv", INVARIANCE_HEADER, enumerate(res.deltas)))
            written.append(write_metadata(out / "invariance_summary.txt", res.summary))
            meta["invariance.seed"] = res.seed
            meta["invariance.n_inputs"] = res.n_inputs
            meta["invariance.n_transforms"] = len(res.deltas)
        elif isinstance(res, TrainTrace):
            rows = [[int(r[0]), *r[1:]] for r in res.records]
            written.append(_write_csv(out / "trace.csv", TRACE_HEADER, rows))
            meta.update({f"train.{k}": v for k, v in asdict(res.config).items()})
            meta["train.label"] = res.stability.label
            meta["train.truncated_at"] = res.truncated_at
        elif isinstance(res, FlowTrace):
            rows = zip(res.times, res.G, np.abs(res.v).mean(axis=1), np.abs(res.v).max(axis=1),
                       res.u.mean(axis=1), res.kappa.mean(axis=1))
            written.append(_write_csv(out / "flow.csv", FLOW_HEADER, rows))
            meta.update({f"flow.{k}": v for k, v in res.meta.items()})
            meta["flow.eps"] = res.eps
            meta["flow.truncated"] = res.truncated
            meta["flow.dt_stability_bound"] = res.dt_stability_bound
        else:
            raise TypeError(f"don't know how to report {type(res).__name__}")
    if metadata:
        meta.update(metadata)
    written.append(write_metadata(out / "metadata.txt", meta))
    return written


def _config_meta(prefix: str, cfg: TrainConfig, dcfg: DatasetConfig, seeds) -> dict:
    meta = {f"{prefix}.{k}": v for k, v in asdict(cfg).items() if k != "seed"}
    meta.update({f"{prefix}.data.{k}": v for k, v in asdict(dcfg).items() if k != "seed"})
    meta[f"{prefix}.seeds"] = " ".join(str(s) for s in seeds)
    return meta
