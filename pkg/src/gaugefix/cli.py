"""Command-line entry point: ``gaugefix <subcommand> [flags]``.

Values are resolved as flags > ``--config`` file > built-in defaults. The
config file is flat ``key=value`` text; keys are flag names with or without
the leading dashes (``noise-std`` and ``noise_std`` are equivalent).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import __version__, selfcheck
from .dynamics import TrainConfig, integrate_gauge_flow, train
from .experiments import (
    DatasetConfig,
    emit_reports,
    initial_params,
    invariance_experiment,
    lambda_sweep,
    lr_stress,
    make_dataset,
)

SUBCOMMANDS = ("train", "flow", "sweep-lambda", "lr-stress", "invariance", "validate")


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if x.strip()]


# key -> (type, default)
OPTIONS = {
    "seed": (int, 0),
    "lr": (float, 5e-3),
    "lambda": (float, 0.2),
    "eps": (float, 1e-8),
    "steps": (int, 5000),
    "width": (int, 20),
    "noise-std": (float, 0.3),
    "n-train": (int, 256),
    "n-val": (int, 512),
    "n-seeds": (int, 8),
    "out": (str, "results"),
    "jobs": (int, 1),
    "transforms": (int, 200),
    "inputs": (int, 512),
    "lambdas": (_floats, "0,0.05,0.1,0.2,0.5"),
    "lrs": (_floats, "5e-3,1e-2,2e-2,4e-2"),
    "t-end": (float, 1.0),
    "dt": (float, 1e-2),
    "divergence-threshold": (float, 1e4),
}
FLAGS = {"include-task": False, "identity-control": False}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    for key in OPTIONS:
        common.add_argument(f"--{key}", dest=key, default=argparse.SUPPRESS)
    for key in FLAGS:
        common.add_argument(f"--{key}", dest=key, action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--config", default=None, help="flat key=value config file")

    parser = _Parser(prog="gaugefix", description="Soft gauge fixing for ReLU networks")
    parser.add_argument("--version", action="version", version=f"gaugefix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "train": "single training run, writes trace.csv",
        "flow": "RK4 gradient-flow integration, writes flow.csv",
        "sweep-lambda": "lambda sweep over paired seeds, writes sweep.csv",
        "lr-stress": "baseline vs gauge-fixed learning-rate stress test, writes stress.csv",
        "invariance": "random gauge transforms of a trained net, writes invariance.csv",
        "validate": "run the built-in invariant checks",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def read_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}") from exc
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected key=value")
        key, value = (x.strip() for x in line.split("=", 1))
        key = key.lstrip("-").replace("_", "-")
        if key not in OPTIONS and key not in FLAGS:
            raise CliError(f"{path}:{n}: unknown key {key!r}")
        out[key] = value
    return out


def resolve(ns: argparse.Namespace) -> dict:
    raw = {k: d for k, (_, d) in OPTIONS.items()}
    raw.update(FLAGS)
    if ns.config:
        raw.update(read_config(ns.config))
    raw.update({k: v for k, v in vars(ns).items() if k in OPTIONS or k in FLAGS})
    cfg = {}
    for key, value in raw.items():
        try:
            if key in FLAGS:
                cfg[key] = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
            else:
                cfg[key] = OPTIONS[key][0](value)
        except ValueError as exc:
            raise CliError(f"bad value for {key}: {value!r}") from exc
    return cfg


def _configs(cfg: dict) -> tuple[TrainConfig, DatasetConfig]:
    try:
        tc = TrainConfig(lr=cfg["lr"], lam=cfg["lambda"], eps=cfg["eps"], steps=cfg["steps"],
                         seed=cfg["seed"], divergence_threshold=cfg["divergence-threshold"],
                         width=cfg["width"])
        dc = DatasetConfig(n_train=cfg["n-train"], n_val=cfg["n-val"], noise_std=cfg["noise-std"],
                           seed=cfg["seed"])
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    return tc, dc


def _seeds(cfg: dict) -> list[int]:
    return [cfg["seed"] + k for k in range(cfg["n-seeds"])]


def run_cli(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        ns = build_parser().parse_args(argv)
        cfg = resolve(ns)
        return _dispatch(ns.command, cfg, argv)
    except CliError as exc:
        print(f"gaugefix: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"gaugefix: error: {exc}", file=sys.stderr)
        return 1


def _dispatch(command: str, cfg: dict, argv) -> int:
    if command == "validate":
        return 0 if selfcheck.run_all(cfg["seed"]) else 1

    tc, dc = _configs(cfg)
    meta = {"command": command, "argv": " ".join(argv)}
    meta.update({f"config.{k}": ",".join(map(repr, v)) if isinstance(v, list) else v for k, v in cfg.items()})

    if command == "train":
        tr, va = make_dataset(dc)
        trace = train(initial_params(tc.seed, tc.width), tr, va, tc)
        emit_reports(trace, cfg["out"], meta)
        last = trace.records[-1]
        print(f"train: steps={len(trace) - 1} train_mse={last[1]:.6g} val_mse={last[2]:.6g} "
              f"G={last[3]:.3g} label={trace.stability.label}")
    elif command == "flow":
        data = make_dataset(dc)[0] if cfg["include-task"] else None
        flow = integrate_gauge_flow(initial_params(tc.seed, tc.width), tc.lam, tc.eps, cfg["t-end"],
                                    cfg["dt"], cfg["include-task"], data)
        emit_reports(flow, cfg["out"], meta)
        print(f"flow: t={flow.times[-1]:.6g} G={flow.G[0]:.6g}->{flow.G[-1]:.6g} truncated={flow.truncated}")
    elif command == "sweep-lambda":
        res = lambda_sweep(cfg["lambdas"], _seeds(cfg), tc, dc, jobs=cfg["jobs"])
        emit_reports(res, cfg["out"], meta)
        for r in res.rows:
            print(f"lambda={r.lam:g} val_mse={r.val_mse_mean:.6g}±{r.val_mse_std:.3g} drift_v={r.drift_v_mean:.3g}")
    elif command == "lr-stress":
        res = lr_stress(cfg["lrs"], tc.lam, _seeds(cfg), replace(tc, lam=0.0), dc, jobs=cfg["jobs"])
        emit_reports(res, cfg["out"], meta)
        for r in res.rows:
            print(f"{r.method} lr={r.lr:g} val_mse={r.val_mse_mean:.6g} label={r.label}")
    elif command == "invariance":
        tr, va = make_dataset(dc)
        p = train(initial_params(tc.seed, tc.width), tr, va, tc).final_params
        res = invariance_experiment(p, cfg["transforms"], cfg["inputs"], tc.seed,
                                    include_identity=cfg["identity-control"])
        emit_reports(res, cfg["out"], meta)
        s = res.summary
        print(f"invariance: n={len(res.deltas)} min={s['min']:.3g} median={s['median']:.3g} max={s['max']:.3g}")
    return 0


def main() -> None:
    sys.exit(run_cli())
