"""
Extrapolating truncated learning curves
=======================================

Each row is a training run, each column an epoch. Most runs were stopped
early, so the grid is observed as a prefix per row. The model fills in the
rest of every curve jointly, borrowing strength from similar configurations.
"""

# %%
import numpy as np

from lkgp import (
    LkgpModel,
    PartialGrid,
    SEKernel,
    Truncation,
    fit,
    generate_mask,
    metrics,
    pathwise_posterior_samples,
    predict,
    standardize,
)

rng = np.random.default_rng(0)
p, q = 100, 52
configs = rng.uniform(size=(p, 3))
epochs = (np.arange(1, q + 1) / q)[:, None]
final = 0.6 + 0.25 * np.sin(3 * configs[:, 0]) + 0.1 * configs[:, 1]
curves = final[:, None] - (0.3 + 0.2 * configs[:, 2:3]) * np.exp(-(2 + 4 * configs[:, :1]) * epochs.T)
curves += 0.01 * rng.standard_normal(curves.shape)

mask = generate_mask(p, q, Truncation(0.1), seed=0)
print(f"observed {mask.count} of {mask.pq} cells ({mask.missing_ratio:.0%} missing)")

# %%
data = PartialGrid(configs, epochs, mask, curves.ravel()[mask.observed])
y, st = standardize(data.y)
model = LkgpModel(data.with_y(y), SEKernel(dims=3), SEKernel())
fitted, report = fit(model, n_steps=100, seed=0)
print(f"fit took {report.wall_time:.1f}s, mean CG iterations {np.mean(report.solver_iterations):.1f}")

# %%
# Predict the final epoch of every run that stopped early.
last = np.arange(p) * q + q - 1
unfinished = np.setdiff1d(last, mask.observed)
pred = predict(fitted, pathwise_posterior_samples(fitted, 64, seed=0), unfinished).destandardize(st)
rmse, nll = metrics(pred, curves.ravel()[unfinished])
print(f"{unfinished.size} unfinished runs: final-value rmse {rmse:.4f}, nll {nll:.2f}")
