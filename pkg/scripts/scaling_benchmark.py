"""Per-iteration timing over an (n, d) grid with fitted scaling exponents."""
import argparse
from pathlib import Path

from convexadmm.data import benchmark, scaling_exponents, write_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, nargs="+", default=[250, 500, 1000])
    ap.add_argument("--d", type=int, nargs="+", default=[2, 8, 32])
    ap.add_argument("--iters", type=int, default=50)
    ap.add_argument("--out", type=Path, default=None, help="optional CSV destination")
    args = ap.parse_args()
    rows = benchmark([(n, d) for n in args.n for d in args.d], iters=args.iters)
    for r in rows:
        print(f"n={r['n']:>5} d={r['d']:>3} {r['per_iter_ms']:9.2f} ms/iter")
    p, q = scaling_exponents(rows)
    print(f"time per iteration ~ n^{p:.2f} d^{q:.2f}")
    if args.out:
        write_benchmark(args.out, rows)


if __name__ == "__main__":
    main()
