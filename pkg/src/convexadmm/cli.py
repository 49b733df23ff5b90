"""Command-line driver.

Exit codes: 0 success, 2 usage or input error (including dimension
mismatches), 3 numerical failure (divergence, singular system).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .convex_fit import DivergenceError, EarlyStop, FitConfig
from .data import (
    DataError, benchmark, ingest_csv, read_points, scaling_exponents, synth, write_benchmark, write_csv,
)
from .model import BregmanModel, ModelError, load, predict_knn_batch, save
from .numerics import SingularSystemError
from .tuner import DEFAULT_GRID, TUNING_RHO, TuneConfig, fit_task, tune

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


# -- argument parsing ----------------------------------------------------------

def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _grid(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty grid")
    return sorted(set(vals))


def _add_data_args(p):
    p.add_argument("--data", required=True, help="CSV file with features and a target column")
    p.add_argument("--target", default="-1", help="target column name or index (default: last)")
    p.add_argument("--no-header", action="store_true", help="CSV has no header row")


def _add_solver_args(p, default_rho):
    p.add_argument("--task", choices=("convex", "dc", "bregman"), default="convex")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--rho", type=_positive, default=None, help=f"ADMM penalty (default {default_rho})")
    g.add_argument("--rho-auto", action="store_true", help="use rho = sqrt(d) lambda^2 / n")
    p.add_argument("--iters", type=int, default=None, help="maximum ADMM iterations")
    p.add_argument("--averaged", action="store_true", help="return averaged iterates")
    p.add_argument("--monotone", choices=("increasing", "decreasing"), default=None)
    p.add_argument("--k", type=int, default=5, help="neighbours for k-NN prediction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convexadmm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model")
    _add_data_args(p)
    _add_solver_args(p, "auto")
    p.add_argument("--lambda", dest="lam", type=_positive, default=1.0)
    p.add_argument("--early-stop", action="store_true",
                   help="stop when the objective improves by < 1e-3 over n iterations")

    p = sub.add_parser("predict", help="evaluate a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--points", required=True, help="CSV of raw-unit points (features only)")
    p.add_argument("--no-header", action="store_true")
    p.add_argument("--k", type=int, default=None, help="neighbours for Bregman models")
    p.add_argument("--out", required=True, help="output predictions CSV")

    p = sub.add_parser("divergences", help="export the divergence matrix of a Bregman model")
    p.add_argument("--model", required=True)
    p.add_argument("--points", default=None, help="CSV of raw points (default: the training anchors)")
    p.add_argument("--no-header", action="store_true")
    p.add_argument("--out", required=True, help="output CSV; row m, column j holds D(x_m, anchor_j)")

    p = sub.add_parser("tune", help="cross-validated lambda search followed by a full refit")
    _add_data_args(p)
    _add_solver_args(p, TUNING_RHO)
    p.add_argument("--grid", type=_grid, default=list(DEFAULT_GRID))
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--refine-rounds", type=int, choices=(0, 1, 2), default=2)
    es = p.add_mutually_exclusive_group()
    es.add_argument("--early-stop", dest="early_stop", action="store_true", default=True)
    es.add_argument("--no-early-stop", dest="early_stop", action="store_false")
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--task", choices=("convex", "dc", "bregman"), default="convex")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("benchmark", help="per-iteration timing over an (n, d) grid")
    p.add_argument("--n", type=lambda s: [int(v) for v in s.split(",")], default=[250, 500, 1000])
    p.add_argument("--d", type=lambda s: [int(v) for v in s.split(",")], default=[2, 8, 32])
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=None, help="write outputs here instead of the original directory")
    return parser


# -- helpers --------------------------------------------------------------------

def _target(arg):
    try:
        return int(arg)
    except ValueError:
        return arg


def _load_dataset(args):
    return ingest_csv(args.data, _target(args.target), not args.no_header, classification=args.task == "bregman")


def _fit_config(args, lam, default_rho, default_iters):
    rho = "auto" if args.rho_auto else (args.rho if args.rho is not None else default_rho)
    return FitConfig(
        lam=lam, rho=rho, max_iters=args.iters if args.iters is not None else default_iters,
        early_stop=EarlyStop() if args.early_stop else None,
        averaged_output=args.averaged, monotone=args.monotone,
    )


def _materialize(args) -> dict:
    """Resolved arguments with absolute paths, as stored in the manifest."""
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("data", "model", "points", "out", "out_dir") and v is not None:
            v = str(Path(v).resolve())
        out[k] = v
    return out


def _write_manifest(out_dir: Path, args, resolved: dict, outputs: list, name: str = MANIFEST) -> None:
    doc = {
        "command": args.command,
        "args": _materialize(args),
        "resolved": resolved,
        "seed": getattr(args, "seed", 0),
        "version": __version__,
        "outputs": outputs,
    }
    with open(out_dir / name, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _config_dict(cfg: FitConfig) -> dict:
    return {"lambda": cfg.lam, "rho": cfg.rho, "max_iters": cfg.max_iters,
            "early_stop": None if cfg.early_stop is None else vars(cfg.early_stop),
            "averaged_output": cfg.averaged_output, "monotone": cfg.monotone}


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ---------------------------------------------------------------------

def cmd_fit(args) -> int:
    ds = _load_dataset(args)
    cfg = _fit_config(args, args.lam, "auto", 1000)
    out = _out_dir(args)
    resolved = _config_dict(cfg) | {"rho_value": cfg.resolve_rho(ds.n, ds.d), "task": args.task, "k": args.k}
    try:
        model, report = fit_task(args.task, ds, cfg, None, args.k)
    except DivergenceError as exc:
        _write_manifest(out, args, resolved | {"error": str(exc)}, [])
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    save(model, out / "model.json")
    report.to_csv(out / "report.csv")
    _write_manifest(out, args, resolved, ["model.json", "report.csv"])
    last = report.iterations - 1
    print(f"fit {args.task}: n={ds.n} d={ds.d} lambda={cfg.lam:g} rho={report.rho:g} "
          f"iters={report.iterations} objective={report.objective[last]:.6g} "
          f"max_residual={report.max_residual(last):.3g}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load(args.model)
    pts = read_points(args.points, not args.no_header)
    if isinstance(model, BregmanModel):
        k = args.k if args.k is not None else 5
        pred = predict_knn_batch(model, pts, k)
        fmt = str
    else:
        pred = model.predict(pts)
        fmt = repr
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["prediction"])
        for v in pred.tolist():
            w.writerow([fmt(v)])
    out = Path(args.out)
    _write_manifest(out.parent, args, {"kind": type(model).__name__}, [out.name], out.name + ".manifest.json")
    print(f"wrote {len(pred)} predictions to {args.out}")
    return EXIT_OK


def cmd_divergences(args) -> int:
    model = load(args.model, kind="bregman")
    g = model.generator
    pts = read_points(args.points, not args.no_header) if args.points else g.norm.inverse_x(g.anchors)
    div = model.divergences(pts)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"anchor{j}" for j in range(model.n)])
        for row in div.tolist():
            w.writerow([repr(v) for v in row])
    out = Path(args.out)
    _write_manifest(out.parent, args, {"shape": list(div.shape)}, [out.name], out.name + ".manifest.json")
    print(f"wrote {div.shape[0]}x{div.shape[1]} divergences to {args.out}")
    return EXIT_OK


def cmd_tune(args) -> int:
    ds = _load_dataset(args)
    tc = TuneConfig(grid=tuple(args.grid), folds=args.folds, refine_rounds=args.refine_rounds,
                    task=args.task, seed=args.seed, k=args.k, workers=args.workers)
    template = _fit_config(args, 1.0, TUNING_RHO, 2000)
    out = _out_dir(args)
    try:
        best, report, model = tune(ds, tc, template)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    save(model, out / "model.json")
    report.to_csv(out / "tune_report.csv")
    report.summary_csv(out / "tune_summary.csv")
    resolved = _config_dict(template) | {
        "task": args.task, "grid": list(tc.grid), "folds": tc.folds, "refine_rounds": tc.refine_rounds,
        "metric": tc.metric, "chosen_lambda": best, "history": report.history,
    }
    _write_manifest(out, args, resolved, ["model.json", "tune_report.csv", "tune_summary.csv"])
    mean, sd = report.summary()[best]
    print(f"tune {args.task}: chosen lambda={best:g} {tc.metric}={mean:.6g} (std {sd:.3g})")
    return EXIT_OK


def cmd_synth(args) -> int:
    ds = synth(args.task, args.n, args.d, args.noise, args.seed)
    out = _out_dir(args)
    write_csv(out / "data.csv", ds)
    _write_manifest(out, args, {"task": args.task}, ["data.csv"])
    print(f"wrote {ds.n} rows to {out / 'data.csv'}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    rows = benchmark([(n, d) for n in args.n for d in args.d], args.iters, args.seed)
    out = _out_dir(args)
    write_benchmark(out / "benchmark.csv", rows)
    resolved = {}
    if len(set(args.n)) > 1 and len(set(args.d)) > 1:
        p, q = scaling_exponents(rows)
        resolved = {"exponent_n": p, "exponent_d": q}
        print(f"per-iteration time ~ n^{p:.2f} d^{q:.2f}")
    _write_manifest(out, args, resolved, ["benchmark.csv"])
    return EXIT_OK


def cmd_rerun(args) -> int:
    with open(args.manifest, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("command") not in COMMANDS or doc["command"] == "rerun":
        raise UsageError(f"manifest {args.manifest} has no runnable command")
    stored = argparse.Namespace(**doc["args"])
    if args.out_dir is not None:
        if stored.command in ("predict", "divergences"):
            stored.out = str(Path(args.out_dir) / Path(stored.out).name)
            Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        else:
            stored.out_dir = args.out_dir
    return COMMANDS[doc["command"]](stored)


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "divergences": cmd_divergences, "tune": cmd_tune, "synth": cmd_synth,
            "benchmark": cmd_benchmark, "rerun": cmd_rerun}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "iters", None) is not None and args.iters < 1:
        parser.error("--iters must be at least 1")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, DataError, ModelError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, SingularSystemError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
