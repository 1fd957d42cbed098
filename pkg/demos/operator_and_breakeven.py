"""
Latent Kronecker operator and the dense/latent break-even point
===============================================================

The covariance of the observed cells of a partial grid is a projected
Kronecker product. It never has to be built: one MVM scatters onto the
full grid, does two small matrix products and gathers back.
"""

# %%
import numpy as np

from lkgp import LatentKroneckerOperator, SEKernel, Uniform, breakeven_points, dense_materialize, generate_mask

rng = np.random.default_rng(0)
p, q = 40, 12
S = rng.uniform(size=(p, 2))
T = np.linspace(0, 1, q)[:, None]
mask = generate_mask(p, q, Uniform(0.4), seed=0)
op = LatentKroneckerOperator.from_kernels(SEKernel(dims=2), S, SEKernel(), T, mask, noise=0.1)
print(f"grid {p}x{q}, observed n={mask.count}, missing ratio {mask.missing_ratio:.2f}")

# %%
# Same answer as the dense matrix, to rounding.
x = rng.standard_normal(mask.count)
print("max |latent - dense|:", np.max(np.abs(op @ x - dense_materialize(op) @ x)))

# %%
# Counters say what one apply costs: pq(p+q) multiplications plus n for the noise.
op.counters.reset()
op @ x
print(f"mults {op.counters.mults}, peak elements {op.counters.peak_elements}, dense n^2 = {mask.count**2}")

# %%
# Below these missing ratios the latent form is cheaper in time and memory.
for pq in [(100, 100), (512, 512), (5000, 7)]:
    t, m = breakeven_points(*pq)
    print(f"p, q = {pq}: time break-even {t:.3f}, memory break-even {m:.4f}")
