"""Leave-one-out k-NN accuracy under a learned Bregman divergence on two Gaussian blobs."""
import argparse

import numpy as np

from convexadmm import Dataset, FitConfig, fit_bregman
from convexadmm.model import predict_knn


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--per-class", type=int, default=10)
    ap.add_argument("--separation", type=float, default=4.0, help="distance between means, in sigmas")
    ap.add_argument("--lam", type=float, default=0.1)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    m = args.per_class
    X = np.vstack([rng.normal(0, 1, (m, 2)), rng.normal(0, 1, (m, 2)) + [args.separation, 0]])
    y = np.r_[np.zeros(m, int), np.ones(m, int)]
    hits = 0
    for i in range(2 * m):
        keep = np.arange(2 * m) != i
        model, _ = fit_bregman(Dataset(X[keep], y[keep], True), FitConfig(lam=args.lam, rho=0.01, max_iters=1000))
        hits += predict_knn(model, X[i], args.k) == y[i]
    print(f"leave-one-out accuracy {hits / (2 * m):.3f}")


if __name__ == "__main__":
    main()
