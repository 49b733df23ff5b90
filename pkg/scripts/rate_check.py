"""Objective gap of averaged ADMM iterates against the 6 n sqrt(d) / (T + 1) bound.

    python scripts/rate_check.py --n 30 --d 2 --multiples 1 2 4 8
"""
import argparse
import math

import numpy as np

from convexadmm import Dataset, FitConfig, fit_convex, normalize
from convexadmm.convex_fit import model_objective, objective


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=30)
    ap.add_argument("--d", type=int, default=2)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--multiples", type=int, nargs="+", default=[1, 2, 4])
    ap.add_argument("--reference-factor", type=int, default=50)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    X = rng.uniform(-1, 1, (args.n, args.d))
    ds = Dataset(X, (X**2).sum(1) + 0.1 * rng.standard_normal(args.n))
    data, _ = normalize(ds)
    lam = max(0.1, 3 / math.sqrt(2 * args.n * args.d))
    base = math.ceil(args.n * math.sqrt(args.d))
    longest = base * max(args.multiples)
    ref, _ = fit_convex(ds, FitConfig(lam=lam, max_iters=args.reference_factor * longest))
    f_star = model_objective(ref, data.X, data.y, lam)
    print(f"lambda={lam:.4f} rho={math.sqrt(args.d) * lam**2 / args.n:.3e} F_ref={f_star:.6f}")
    print(f"{'T':>6} {'gap':>12} {'bound':>12}")
    for m in args.multiples:
        T = m * base
        _, rep = fit_convex(ds, FitConfig(lam=lam, max_iters=T, averaged_output=True))
        st = rep.extra["final_state"]
        gap = objective(data.y, st.sum_y / T, st.sum_a / T, lam) - f_star
        print(f"{T:>6} {gap:>12.4e} {6 * args.n * math.sqrt(args.d) / (T + 1):>12.4e}")


if __name__ == "__main__":
    main()
