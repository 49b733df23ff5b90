"""Recover y = x^2 (tuned convex fit) and y = |x| - x^2 (DC fit) and report R^2."""
import numpy as np

from convexadmm import Dataset, FitConfig, fit_dc
from convexadmm.tuner import TuneConfig, tune


def r2(pred, y):
    return 1 - np.sum((pred - y) ** 2) / np.sum((y - y.mean()) ** 2)


def main():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, 50)
    lam, report, model = tune(Dataset(x[:, None], x**2), TuneConfig(task="convex"))
    grid = np.linspace(-1, 1, 201)
    print(f"convex: lambda={lam:.4g} train R2={r2(model.predict(x[:, None]), x**2):.4f} "
          f"grid R2={r2(model.predict(grid[:, None]), grid**2):.4f}")
    for lam_, (mu, sd) in report.summary().items():
        print(f"    lambda={lam_:<10.4g} cv mse={mu:.3e} +- {sd:.1e}")

    x = rng.uniform(-1, 1, 40)
    y = np.abs(x) - x**2
    dc, _ = fit_dc(Dataset(x[:, None], y), FitConfig(lam=1e-3, rho=0.01, max_iters=3000))
    print(f"dc: train R2={r2(dc.predict(x[:, None]), y):.4f}")


if __name__ == "__main__":
    main()
