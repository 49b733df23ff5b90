"""CSV ingestion, synthetic datasets and the per-iteration timing benchmark."""
from __future__ import annotations

import csv
import math
import time

import numpy as np

from .convex_fit import FitConfig, fit_convex
from .numerics import Dataset


BENCH_RHO = 0.01


class DataError(ValueError):
    pass


def _parse(cell: str, row: int, col: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"non-numeric cell {cell!r} at row {row}, column {col}") from None


def ingest_csv(path, target_column=-1, has_header: bool = True, classification: bool = False) -> Dataset:
    """Read a rectangular numeric CSV into a :class:`Dataset`.

    ``target_column`` is a header name or a (possibly negative) column index.
    Row numbers in errors count data rows from 1; columns count from 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if has_header:
        if not rows:
            raise DataError(f"{path}: empty file")
        header, rows = [h.strip() for h in rows[0]], rows[1:]
    else:
        header = None
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(header) if header else len(rows[0])
    for i, r in enumerate(rows, start=1):
        if len(r) != width:
            raise DataError(f"{path}: row {i} has {len(r)} fields, expected {width}")
    if width < 2:
        raise DataError(f"{path}: need at least one feature column and a target column")
    if isinstance(target_column, str) and not _is_int(target_column):
        if header is None or target_column not in header:
            raise DataError(f"{path}: missing target column {target_column!r}")
        tcol = header.index(target_column)
    else:
        tcol = int(target_column)
        if not -width <= tcol < width:
            raise DataError(f"{path}: target column {tcol} out of range for {width} columns")
        tcol %= width
    M = np.array([[_parse(c.strip(), i, j + 1) for j, c in enumerate(r)] for i, r in enumerate(rows, 1)])
    y = M[:, tcol]
    X = np.delete(M, tcol, axis=1)
    if classification:
        bad = np.flatnonzero((y != np.round(y)) | (y < 0))
        if bad.size:
            raise DataError(f"{path}: label at row {bad[0] + 1} is not a non-negative integer")
    return Dataset(X, y, classification)


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False


def read_points(path, has_header: bool = True) -> np.ndarray:
    """Feature-only CSV (no target) as an (m, d) array."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if has_header:
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows, start=1):
        if len(r) != width:
            raise DataError(f"{path}: row {i} has {len(r)} fields, expected {width}")
    return np.array([[_parse(c.strip(), i, j + 1) for j, c in enumerate(r)] for i, r in enumerate(rows, 1)])


def write_csv(path, dataset: Dataset) -> None:
    d = dataset.d
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(d)] + ["y"])
        for x, y in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in x] + [int(y) if dataset.classification else repr(float(y))])


def synth(task: str, n: int, d: int, noise: float = 0.0, seed: int = 0) -> Dataset:
    """Synthetic data.

    convex: ``y = ||x||^2 + eps``; dc: ``y = ||x||_1 - ||x||^2 + eps``, with
    ``x`` uniform on ``[-1, 1]^d`` and ``eps ~ N(0, noise^2)``.  bregman: two
    unit-variance Gaussian blobs whose means are 4 apart along the first axis,
    labels 0 and 1 alternating.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    rng = np.random.default_rng(seed)
    if task == "bregman":
        labels = np.arange(n) % 2
        centers = np.zeros((n, d))
        centers[:, 0] = np.where(labels == 1, 2.0, -2.0)
        return Dataset(centers + rng.standard_normal((n, d)), labels, classification=True)
    X = rng.uniform(-1.0, 1.0, size=(n, d))
    if task == "convex":
        f = np.sum(X * X, axis=1)
    elif task == "dc":
        f = np.sum(np.abs(X), axis=1) - np.sum(X * X, axis=1)
    else:
        raise ValueError(f"unknown task {task!r}")
    eps = noise * rng.standard_normal(n) if noise > 0 else np.zeros(n)
    return Dataset(X, f + eps)


def benchmark(grid, iters: int = 50, seed: int = 0, lam: float = 1.0) -> list:
    """Time ``fit_convex`` over ``(n, d)`` cells.

    Per-iteration cost is the median of the per-iteration wall times, so the
    one-off factorization is excluded.
    """
    rows = []
    for n, d in grid:
        ds = synth("convex", int(n), int(d), noise=0.1, seed=seed)
        cfg = FitConfig(lam=lam, rho=BENCH_RHO, max_iters=iters)
        t0 = time.perf_counter()
        _, rep = fit_convex(ds, cfg)
        total = time.perf_counter() - t0
        rows.append({"n": int(n), "d": int(d), "iters": rep.iterations, "seconds": total,
                     "per_iter_ms": float(np.median(rep.millis))})
    return rows


def scaling_exponents(rows) -> tuple[float, float]:
    """Least-squares fit of ``log t = c + p log n + q log d``; returns ``(p, q)``."""
    A = np.array([[1.0, math.log(r["n"]), math.log(r["d"])] for r in rows])
    b = np.array([math.log(r["per_iter_ms"]) for r in rows])
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    return float(coef[1]), float(coef[2])


def write_benchmark(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "d", "iters", "seconds", "per_iter_ms"])
        for r in rows:
            w.writerow([r["n"], r["d"], r["iters"], f"{r['seconds']:.6f}", f"{r['per_iter_ms']:.6f}"])
