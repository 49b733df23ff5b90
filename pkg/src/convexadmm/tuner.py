"""Cross-validated selection of the penalty weight ``lam``.

Round 0 scans a log grid.  Each refinement round lays a 5-point log grid
between the two evaluated neighbors of the incumbent; values that were
already evaluated are reused.  Fold fits use validation early stopping and
``rho = 0.01`` unless the template says otherwise.
"""
from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .bregman_fit import fit_bregman
from .convex_fit import DivergenceError, EarlyStop, FitConfig, fit_convex
from .dc_fit import fit_dc
from .model import predict_knn_batch
from .numerics import Dataset, NumericsError

TASKS = ("convex", "dc", "bregman")
WORKERS_ENV = "CONVEXADMM_WORKERS"
DEFAULT_GRID = tuple(10.0**k for k in range(-3, 4))
TUNING_RHO = 0.01


@dataclass(frozen=True)
class TuneConfig:
    grid: tuple = DEFAULT_GRID
    folds: int = 5
    refine_rounds: int = 2
    task: str = "convex"
    metric: str | None = None  # mse for regression, accuracy for bregman
    seed: int = 0
    k: int = 5
    workers: int | None = None

    def __post_init__(self):
        grid = tuple(float(g) for g in self.grid)
        if not grid or any(not (g > 0 and math.isfinite(g)) for g in grid):
            raise ValueError("grid values must be positive and finite")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        metric = self.metric or ("accuracy" if self.task == "bregman" else "mse")
        if metric not in ("mse", "accuracy"):
            raise ValueError(f"metric must be 'mse' or 'accuracy', got {metric!r}")
        if (metric == "accuracy") != (self.task == "bregman"):
            raise ValueError(f"metric {metric!r} does not fit task {self.task!r}")
        object.__setattr__(self, "metric", metric)
        if int(self.folds) < 2:
            raise ValueError("folds must be at least 2")
        if not 0 <= int(self.refine_rounds) <= 2:
            raise ValueError("refine_rounds must be 0, 1 or 2")

    @property
    def higher_is_better(self) -> bool:
        return self.metric == "accuracy"


@dataclass
class TuneReport:
    task: str
    metric: str
    rows: list = field(default_factory=list)  # dicts: lambda, fold, metric, iters_run, seconds
    history: list = field(default_factory=list)  # dicts: round, grid, incumbent, mean
    chosen_lam: float | None = None

    def lambdas(self) -> list:
        return sorted({r["lambda"] for r in self.rows})

    def fold_metrics(self, lam) -> np.ndarray:
        return np.array([r["metric"] for r in self.rows if r["lambda"] == lam])

    def summary(self) -> dict:
        """``{lam: (mean, std)}`` of the fold metrics."""
        out = {}
        for lam in self.lambdas():
            m = self.fold_metrics(lam)
            if np.all(np.isfinite(m)):
                out[lam] = (float(m.mean()), float(m.std()))
            else:
                out[lam] = (math.nan if self.metric == "accuracy" else math.inf, math.nan)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "fold", "metric", "iters_run", "seconds"])
            for r in self.rows:
                w.writerow([repr(r["lambda"]), r["fold"], repr(r["metric"]), r["iters_run"],
                            f"{r['seconds']:.4f}"])

    def summary_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "mean", "std", "chosen"])
            for lam, (mu, sd) in self.summary().items():
                w.writerow([repr(lam), repr(mu), repr(sd), int(lam == self.chosen_lam)])


def kfold_split(n: int, folds: int, seed: int = 0) -> np.ndarray:
    """Fold index per sample: a seeded permutation dealt round-robin."""
    if folds < 2:
        raise ValueError("folds must be at least 2")
    if folds > n:
        raise ValueError(f"cannot split {n} samples into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assign = np.empty(n, dtype=np.int64)
    assign[perm] = np.arange(n) % folds
    return assign


def fit_task(task: str, dataset: Dataset, config: FitConfig, validation: Dataset | None = None, k: int = 5):
    if task == "convex":
        return fit_convex(dataset, config, validation)
    if task == "dc":
        return fit_dc(dataset, config, validation)
    return fit_bregman(dataset, config, validation, k=k)


def evaluate_metric(task: str, model, data: Dataset, metric: str, k: int = 5) -> float:
    """Validation MSE in raw units, or k-NN accuracy."""
    if metric == "accuracy":
        return float(np.mean(predict_knn_batch(model, data.X, k) == data.y))
    r = model.predict(data.X) - data.y
    return float(np.mean(r * r))


def _fold_job(task, metric, k, cfg, train: Dataset, valid: Dataset):
    t0 = time.perf_counter()
    try:
        model, rep = fit_task(task, train, cfg, valid, k)
        value = evaluate_metric(task, model, valid, metric, k)
        iters = rep.iterations
    except (DivergenceError, NumericsError, np.linalg.LinAlgError):
        value, iters = (math.nan if metric == "accuracy" else math.inf), 0
    return value, iters, time.perf_counter() - t0


def _loss(value: float, higher_is_better: bool) -> float:
    """Map a metric to lower-is-better; failures become ``inf``."""
    if not math.isfinite(value):
        return math.inf
    return -value if higher_is_better else value


def _resolve_workers(workers):
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def default_fit_template(task: str) -> FitConfig:
    return FitConfig(lam=1.0, rho=TUNING_RHO, max_iters=2000, early_stop=EarlyStop())


def refinement_grid(incumbent: float, evaluated) -> list:
    """Five log-spaced points between the incumbent's evaluated neighbors."""
    ev = sorted(evaluated)
    i = ev.index(incumbent)
    lo = ev[i - 1] if i > 0 else incumbent
    hi = ev[i + 1] if i + 1 < len(ev) else incumbent
    if lo == hi:
        return [incumbent]
    return [float(v) for v in np.logspace(math.log10(lo), math.log10(hi), 5)]


def tune(dataset: Dataset, tune_config: TuneConfig = TuneConfig(), fit_config_template: FitConfig | None = None):
    """Grid search with k-fold CV; returns ``(best_lam, report, final_model)``.

    The final model is refit on the full data at the chosen ``lam`` with the
    same ``rho`` used during tuning.
    """
    tc = tune_config
    if tc.task == "bregman" and not dataset.classification:
        dataset = Dataset(dataset.X, dataset.y, classification=True)
    n = dataset.n
    if tc.folds > n:
        raise ValueError(f"cannot split {n} samples into {tc.folds} folds")
    template = fit_config_template or default_fit_template(tc.task)
    assign = kfold_split(n, tc.folds, tc.seed)
    splits = [(dataset.subset(np.flatnonzero(assign != f)), dataset.subset(np.flatnonzero(assign == f)))
              for f in range(tc.folds)]
    report = TuneReport(task=tc.task, metric=tc.metric)
    losses: dict[float, float] = {}
    workers = _resolve_workers(tc.workers)

    def evaluate(lams):
        new = [lam for lam in lams if not any(math.isclose(lam, e, rel_tol=1e-12) for e in losses)]
        jobs = [(lam, f) for lam in new for f in range(tc.folds)]
        args = [(tc.task, tc.metric, tc.k, replace(template, lam=lam), *splits[f]) for lam, f in jobs]
        if workers > 1 and len(args) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_fold_job, *zip(*args)))
        else:
            results = [_fold_job(*a) for a in args]
        for (lam, f), (value, iters, secs) in zip(jobs, results):
            report.rows.append({"lambda": lam, "fold": f, "metric": value, "iters_run": iters, "seconds": secs})
        for lam in new:
            vals = [_loss(r["metric"], tc.higher_is_better) for r in report.rows if r["lambda"] == lam]
            losses[lam] = math.inf if any(math.isinf(v) for v in vals) else float(np.mean(vals))

    def incumbent():
        # ties go to the smallest lam
        return min(sorted(losses), key=lambda lam: losses[lam])

    evaluate(list(tc.grid))
    best = incumbent()
    report.history.append({"round": 0, "grid": list(tc.grid), "incumbent": best, "loss": losses[best]})
    for rnd in range(1, int(tc.refine_rounds) + 1):
        grid = refinement_grid(best, losses)
        evaluate(grid)
        best = incumbent()
        report.history.append({"round": rnd, "grid": grid, "incumbent": best, "loss": losses[best]})

    report.chosen_lam = best
    final_cfg = replace(template, lam=best, early_stop=None)
    model, _ = fit_task(tc.task, dataset, final_cfg, None, tc.k)
    return best, report, model
