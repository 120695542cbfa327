"""Command-line entry point: ``qienet <subcommand> [flags]``.

Reports go to stdout as JSON (and to ``--report`` when given); a short human
summary goes to stderr. Settings may come from ``--config`` JSON, whose
top-level keys apply to every subcommand and whose ``"<subcommand>"`` section
applies to one; explicit flags override the file.

Exit codes: 0 success, 2 configuration error, 3 data or format error,
4 training divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from datetime import datetime
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import model as qm
from . import reconstruct as rc
from . import training as qt
from .channels import format_channels, parse_channels
from .errors import ConfigError, InputError, QienetError
from .gradcheck import standard_checks
from .metrics import evaluate, metrics_csv, per_station_report
from .pipeline.dataset import (
    DEFAULT_THRESHOLD,
    build_dataset,
    frame_times,
    pcc_select,
    read_dataset,
    write_dataset,
)
from .pipeline.qc import run_qc
from .pipeline.stations import parse_timestamp, read_station_csv, write_station_csv
from .pipeline.synth import synthesize
from .pipeline.tiles import read_tile_dir

log = logging.getLogger("qienet")


# -- helpers ----------------------------------------------------------------------


def _digest(path) -> str:
    h = hashlib.sha256()
    p = Path(path)
    files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
    for f in files:
        if p.is_dir():
            h.update(str(f.relative_to(p)).encode())
        with open(f, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def _snapshot(args) -> dict:
    skip = {"func", "config", "report"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def write_manifest(out, args, inputs: dict, started: float, extra=None) -> Path:
    """Write ``<out>.manifest.json`` describing how ``out`` was produced."""
    path = Path(str(out) + ".manifest.json")
    manifest = {
        "command": args.command,
        "config": _snapshot(args),
        "inputs": {k: {"path": str(v), "sha256": _digest(v)} for k, v in inputs.items() if v},
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "wall_seconds": round(time.perf_counter() - started, 3),
    }
    if extra:
        manifest.update(extra)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _emit(report: dict, args, summary: str) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, default=_json_default)
    print(text)
    if getattr(args, "report", None):
        Path(args.report).write_text(text + "\n")
    print(summary, file=sys.stderr)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, datetime):
        return o.isoformat()
    return str(o)


def _model_config(args) -> qm.ModelConfig:
    overrides = {"seed": args.seed}
    if args.channels:
        overrides["channel_subset"] = parse_channels(args.channels)
    if args.time_encoding:
        overrides["time_encoding"] = args.time_encoding
    return qm.variant(
        args.variant,
        hidden=tuple(args.hidden) if args.hidden else None,
        kernel_size=args.kernel_size,
        head_sizes=tuple(args.head) if args.head else None,
        **overrides,
    )


def _train_config(args) -> qt.TrainConfig:
    return qt.TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=args.patience,
        fold_count=getattr(args, "folds", 5),
        seed=args.seed,
        val_every=args.val_every,
    )


# -- subcommands ----------------------------------------------------------------------


def cmd_qc(args) -> int:
    started = time.perf_counter()
    records = read_station_csv(args.stations)
    kept, stages, whiskers = run_qc(records)
    report = {
        "input": len(records),
        "retained": len(kept),
        "stages": [s.to_dict() for s in stages],
        "whiskers": {str(h): vars(w) for h, w in whiskers.items()},
    }
    if args.out:
        write_station_csv(kept, args.out)
        write_manifest(args.out, args, {"stations": args.stations}, started)
    _emit(report, args, f"qc: {len(kept)}/{len(records)} records retained")
    return 0


def cmd_build_dataset(args) -> int:
    started = time.perf_counter()
    records = read_station_csv(args.stations)
    tiles = read_tile_dir(args.tiles)
    ds, rep = build_dataset(records, tiles, daylight_only=args.daylight_only)
    write_dataset(ds, args.out)
    write_manifest(args.out, args, {"stations": args.stations, "tiles": args.tiles}, started)
    report = {"shape": list(ds.shape), "out": str(args.out), **rep.to_dict()}
    _emit(report, args, f"build-dataset: {len(ds)} samples, shape {ds.shape}")
    return 0


def cmd_pcc(args) -> int:
    ds = read_dataset(args.dataset)
    res = pcc_select(ds, args.threshold, args.timestep)
    report = res.to_dict()
    _emit(report, args, "pcc: selected " + format_channels(res.selected))
    return 0


def cmd_synth(args) -> int:
    started = time.perf_counter()
    data = synthesize(args.n, args.seed, args.spatial, noise_std=args.noise_std)
    write_dataset(data.dataset, args.out)
    write_manifest(args.out, args, {}, started, {"generator": data.params.to_dict()})
    report = {"out": str(args.out), "shape": list(data.dataset.shape), "generator": data.params.to_dict()}
    _emit(report, args, f"synth: wrote {args.n} samples to {args.out}")
    return 0


def _split(ds, fraction: float, seed: int):
    if not 0 < fraction < 1:
        raise ConfigError(f"val_fraction must be in (0, 1), got {fraction}")
    n = len(ds)
    n_val = max(1, int(round(n * fraction)))
    if n_val >= n:
        raise InputError(f"dataset of {n} samples is too small to hold out {n_val}")
    perm = np.random.default_rng(seed).permutation(n)
    return ds.subset(np.sort(perm[n_val:])), ds.subset(np.sort(perm[:n_val]))


def cmd_train(args) -> int:
    started = time.perf_counter()
    ds = read_dataset(args.dataset)
    if args.val:
        train, val = ds, read_dataset(args.val)
    else:
        train, val = _split(ds, args.val_fraction, args.seed)
    mcfg = _model_config(args)
    rep = qt.fit(mcfg, train, val, _train_config(args))
    ck = rep.checkpoint
    est = qm.predict(val, ck.config, ck.params, ck.normalizer)
    metrics = evaluate(est, val.target).to_dict()
    if args.out:
        qm.save(ck, args.out)
        rep.checkpoint_path = str(args.out)
        write_manifest(args.out, args, {"dataset": args.dataset, "val": args.val}, started)
    report = {"variant": mcfg.name, "model": mcfg.to_dict(), **rep.to_dict(), "validation": metrics}
    _emit(report, args, f"train {mcfg.name}: stopped at epoch {rep.stop_epoch}, best {rep.best_epoch}, "
                        f"val RMSE {metrics['rmse']:.2f} W/m2, R2 {metrics['r2']:.3f}")
    return 0


def cmd_cross_validate(args) -> int:
    started = time.perf_counter()
    ds = read_dataset(args.dataset)
    test = read_dataset(args.test) if args.test else None
    mcfg = _model_config(args)
    results = qt.cross_validate(mcfg, ds, _train_config(args), test=test)
    rmses = np.array([r.metrics.rmse for r in results])
    report = {
        "variant": mcfg.name,
        "folds": [r.to_dict() for r in results],
        "rmse_mean": float(rmses.mean()),
        "rmse_std": float(rmses.std()),
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for r in results:
            qm.save(r.train_report.checkpoint, out / f"fold{r.k}.qien")
        write_manifest(out / "cross_validate", args, {"dataset": args.dataset, "test": args.test}, started)
    _emit(report, args, f"cross-validate {mcfg.name}: RMSE {rmses.mean():.2f} +- {rmses.std():.2f} W/m2")
    return 0


def cmd_evaluate(args) -> int:
    ck = qm.load(args.checkpoint)
    ds = read_dataset(args.dataset)
    if not ds.has_targets:
        raise InputError(f"{args.dataset}: evaluation needs target GHI for every sample")
    est = qm.predict(ds, ck.config, ck.params, ck.normalizer)
    overall = evaluate(est, ds.target)
    report = {"overall": overall.to_dict()}
    if args.per_station:
        summary = per_station_report(ds.station_id, est, ds.target)
        report["per_station"] = summary.to_dict()
        if args.csv:
            Path(args.csv).write_text(metrics_csv(summary))
    _emit(report, args, f"evaluate: RMSE {overall.rmse:.2f} MBE {overall.mbe:.2f} R2 {overall.r2:.3f} r {overall.r:.3f}")
    return 0


def cmd_predict_grid(args) -> int:
    started = time.perf_counter()
    ck = qm.load(args.checkpoint)
    tiles = read_tile_dir(args.tiles)
    hour = parse_timestamp(args.hour).replace(minute=0, second=0, microsecond=0)
    frames = [tiles.get(t) for t in frame_times(hour, ck.config.stack.T)]
    missing = [t for t, f in zip(frame_times(hour, ck.config.stack.T), frames) if f is None]
    if missing:
        raise InputError(f"missing frame {missing[0].isoformat()} in {args.tiles}")
    dem = rc.read_grid(args.dem).values if args.dem else None
    grid = rc.predict_grid(frames, ck, dem=dem)
    out = Path(args.out)
    if out.is_dir():
        out = out / rc.hourly_name(hour)
    rc.write_grid(grid, out)
    write_manifest(out, args, {"checkpoint": args.checkpoint, "tiles": args.tiles, "dem": args.dem}, started)
    valid = grid.values[grid.valid]
    report = {"out": str(out), "shape": list(grid.shape), "interior_cells": int(valid.size),
              "mean_wm2": float(valid.mean()) if valid.size else None}
    _emit(report, args, f"predict-grid: wrote {out}")
    return 0


def parse_period(text: str) -> rc.Period:
    """``month:2020-04``, ``season:spring:2020``, ``year:2020`` or ``year:2020:12``."""
    parts = text.strip().split(":")
    try:
        if parts[0] == "month" and len(parts) == 2:
            y, m = parts[1].split("-")
            return rc.Period.month(int(y), int(m))
        if parts[0] == "season" and len(parts) == 3:
            return rc.Period.season(parts[1], int(parts[2]))
        if parts[0] == "year" and len(parts) in (2, 3):
            return rc.Period.year(int(parts[1]), int(parts[2]) if len(parts) == 3 else 1)
    except ValueError:
        pass
    raise ConfigError(f"bad period {text!r}; use month:YYYY-MM, season:NAME:YYYY or year:YYYY[:START_MONTH]")


def cmd_integrate(args) -> int:
    started = time.perf_counter()
    period = parse_period(args.period)
    files = sorted(Path(args.grids).glob("*.asc"))
    used = []

    def grids():
        for f in files:
            g = rc.read_grid(f)
            if g.timestamp is None:
                continue
            if period.contains(g.timestamp):
                used.append(f.name)
            yield g

    grid, rep = rc.integrate_energy(grids(), period, max_missing_hours=args.max_missing_hours)
    rc.write_grid(grid, args.out)
    write_manifest(args.out, args, {"grids": args.grids}, started, {"period": period.label, "hourly_files": used})
    valid = grid.values[grid.valid]
    report = {"out": str(args.out), **rep.to_dict(), "mean_kwh_m2": float(valid.mean()) if valid.size else None}
    _emit(report, args, f"integrate {period.label}: {rep.used_hours}/{rep.expected_hours} hours -> {args.out}")
    return 0


def cmd_grad_check(args) -> int:
    results = standard_checks(args.coords, args.seed)
    report = {"checks": [r.to_dict() for r in results], "passed": all(r.passed for r in results)}
    worst = max(r.worst_rel for r in results)
    _emit(report, args, f"grad-check: {'pass' if report['passed'] else 'FAIL'}, worst relative error {worst:.2e}")
    return 0 if report["passed"] else 1


# -- parser -----------------------------------------------------------------------------


def _model_flags(p):
    p.add_argument("--variant", default="Conv6", help="FC1..FC8 or Conv1..Conv8")
    p.add_argument("--hidden", type=int, nargs="+", help="recurrent layer widths (default by network type)")
    p.add_argument("--kernel-size", type=int, help="ConvLSTM kernel size (odd)")
    p.add_argument("--head", type=int, nargs="+", help="dense head widths, ending in 1")
    p.add_argument("--channels", help="channel subset override, e.g. B07,B11-B15 or all")
    p.add_argument("--time-encoding", choices=("cyclic", "raw"), help="attribute encoding of hour/day/month")
    p.add_argument("--epochs", type=int, default=200, help="maximum epochs")
    p.add_argument("--patience", type=int, default=15, help="early-stopping patience in epochs")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    p.add_argument("--val-every", type=int, default=1, help="validate every N epochs")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qienet", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"qienet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--report", help="also write the JSON report to this path")
        p.add_argument("--threads", type=int, help="cap numeric library threads (env QIENET_THREADS)")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
        p.set_defaults(func=func)
        return p

    p = add("qc", cmd_qc, "quality-control hourly station observations")
    p.add_argument("--stations", required=True, help="station CSV")
    p.add_argument("--out", help="write retained records to this CSV")

    p = add("build-dataset", cmd_build_dataset, "build a sample dataset from stations and satellite frames")
    p.add_argument("--stations", required=True, help="station CSV (already quality-controlled)")
    p.add_argument("--tiles", required=True, help="directory of .qtil frames")
    p.add_argument("--out", required=True, help="output .qdst dataset")
    p.add_argument("--daylight-only", action="store_true", help="drop records with zero GHI")

    p = add("pcc", cmd_pcc, "channel/GHI Pearson correlations and channel selection")
    p.add_argument("--dataset", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="minimum |PCC_mean|")
    p.add_argument("--timestep", type=int, default=-1, help="frame used for slice statistics")

    p = add("synth", cmd_synth, "write a synthetic dataset with a known generator")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spatial", action="store_true", help="moving cloud blob instead of uniform cloud")
    p.add_argument("--noise-std", type=float, default=10.0, help="target noise in W/m2")
    p.add_argument("--out", required=True, help="output .qdst dataset")

    p = add("train", cmd_train, "train one model with early stopping")
    p.add_argument("--dataset", required=True)
    p.add_argument("--val", help="validation dataset (default: hold out --val-fraction)")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--out", help="output checkpoint (.qien)")
    _model_flags(p)

    p = add("cross-validate", cmd_cross_validate, "k-fold cross-validation")
    p.add_argument("--dataset", required=True)
    p.add_argument("--test", help="held-out test dataset scored by every fold model")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--out", help="directory for per-fold checkpoints")
    _model_flags(p)

    p = add("evaluate", cmd_evaluate, "score a checkpoint on a labeled dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--per-station", action="store_true", help="add per-station metrics with mean and std")
    p.add_argument("--csv", help="write per-station metrics CSV here")

    p = add("predict-grid", cmd_predict_grid, "estimate hourly GHI on every interior grid cell")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tiles", required=True, help="directory of .qtil frames")
    p.add_argument("--hour", required=True, help="label hour, ISO-8601 UTC")
    p.add_argument("--dem", help="altitude grid (.asc) on the frame grid; default 0 m")
    p.add_argument("--out", required=True, help="output .asc file or directory")

    p = add("integrate", cmd_integrate, "integrate hourly grids into an energy map (kWh/m2)")
    p.add_argument("--grids", required=True, help="directory of hourly .asc grids named *_YYYYMMDDTHH.asc")
    p.add_argument("--period", required=True, help="month:YYYY-MM, season:NAME:YYYY or year:YYYY[:START_MONTH]")
    p.add_argument("--max-missing-hours", type=int, default=0, help="hours allowed missing (counted as zero)")
    p.add_argument("--out", required=True, help="output .asc file")

    p = add("grad-check", cmd_grad_check, "finite-difference check of the analytic gradients")
    p.add_argument("--coords", type=int, default=200, help="random coordinates per check")
    p.add_argument("--seed", type=int, default=0)
    return parser


def load_schema() -> dict:
    return json.loads(resources.files("qienet").joinpath("config.schema.json").read_text())


def load_config(path, command: str, known: set) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {path}: {where}: {exc.message}") from None
    flat = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    flat.update(cfg.get(command, {}))
    unknown = sorted(set(flat) - known)
    if unknown:
        raise ConfigError(f"config {path}: keys not accepted by '{command}': {', '.join(unknown)}")
    return flat


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions} - {"help", "config", "func"}
        values = load_config(args.config, args.command, known)
        for a in sub._actions:
            if a.dest in values:
                a.required = False
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
        missing = [a.dest for a in sub._actions if a.dest in values and values[a.dest] is None]
        if missing:
            raise ConfigError(f"config sets required options to null: {', '.join(missing)}")
    return args


def _threads(args):
    n = args.threads
    if n is None and os.environ.get("QIENET_THREADS"):
        try:
            n = int(os.environ["QIENET_THREADS"])
        except ValueError:
            raise ConfigError(f"QIENET_THREADS must be an integer, got {os.environ['QIENET_THREADS']!r}") from None
    if n is None:
        return nullcontext()
    if n < 1:
        raise ConfigError(f"thread count must be >= 1, got {n}")
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        with _threads(args):
            return args.func(args)
    except QienetError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        if getattr(exc, "epoch", None) is not None:
            err["epoch"] = exc.epoch
        print(json.dumps(err), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": "OSError", "message": str(exc), "exit_code": 3}), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
