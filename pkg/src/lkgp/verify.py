"""Small-instance oracle checks, run by ``lkgp verify``.

Every check compares a structured computation against an independent dense
one and returns ``(name, passed, detail)``.
"""
from __future__ import annotations

import numpy as np

from .errors import EmptyMask
from .grid import ObservationMask, PartialGrid, Uniform, generate_mask
from .kernels import ICMKernel, PeriodicKernel, ProductKernel, SEKernel
from .linops import LatentKroneckerOperator, breakeven_points, dense_materialize
from .model import (
    LkgpModel,
    exact_posterior_reference,
    log_marginal_likelihood_exact,
    mll_grad_estimate,
    pathwise_posterior_samples,
    predict,
)
from .solvers import SolverConfig, WoodburyPreconditioner, cg_solve, pivoted_cholesky


def random_psd(rng, m, rank=None):
    G = rng.standard_normal((m, rank or m))
    return G @ G.T / (rank or m)


def random_model(rng, p, q, gamma, temporal="se", noise=None):
    """A random small model with SE spatial kernel and a chosen temporal family."""
    S = rng.uniform(0, 3, size=(p, 2))
    mask = generate_mask(p, q, Uniform(gamma), seed=rng.integers(2**31))
    ks = SEKernel(rng.uniform(0.5, 2.0, size=2), rng.uniform(0.5, 2.0))
    if temporal == "icm":
        T = np.arange(q, dtype=float)[:, None]
        L = np.tril(rng.normal(0, 0.5, size=(q, q)))
        np.fill_diagonal(L, rng.uniform(0.5, 1.5, size=q))
        kt = ICMKernel(factor=L)
    else:
        T = np.sort(rng.uniform(0, 5, size=q))[:, None]
        if temporal == "se":
            kt = SEKernel([rng.uniform(0.5, 2.0)], rng.uniform(0.5, 2.0))
        elif temporal == "periodic":
            kt = PeriodicKernel(rng.uniform(0.5, 2.0), rng.uniform(1.0, 3.0), rng.uniform(0.5, 2.0))
        elif temporal == "product":
            kt = ProductKernel(SEKernel([rng.uniform(1.0, 3.0)], rng.uniform(0.5, 2.0)),
                               PeriodicKernel(rng.uniform(0.5, 2.0), rng.uniform(1.0, 3.0), 1.0))
        else:
            raise ValueError(temporal)
    y = rng.standard_normal(mask.count)
    noise = rng.uniform(0.05, 0.5) if noise is None else noise
    return LkgpModel(PartialGrid(S, T, mask, y), ks, kt, noise)


def finite_difference_grad(model, step=1e-5):
    theta = model.params
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        out[i] = (log_marginal_likelihood_exact(model.with_params(theta + e))
                  - log_marginal_likelihood_exact(model.with_params(theta - e))) / (2 * step)
    return out


def check_operator(rng, trials=50):
    worst = 0.0
    for _ in range(trials):
        p, q = rng.integers(1, 17, size=2)
        gamma = rng.choice([0.0, 0.25, 0.5, 0.8])
        try:
            mask = generate_mask(p, q, Uniform(gamma), seed=rng.integers(2**31))
        except EmptyMask:
            mask = ObservationMask.full(p, q)
        op = LatentKroneckerOperator(random_psd(rng, p), random_psd(rng, q), mask, rng.uniform(0, 1))
        x = rng.standard_normal(mask.count)
        err = np.max(np.abs(op.matvec(x) - dense_materialize(op) @ x)) / (1 + np.max(np.abs(x)))
        worst = max(worst, err)
    return "operator matches dense oracle", worst <= 1e-12, f"max scaled error {worst:.2e}"


def check_cg(rng, trials=10):
    worst = 0.0
    for _ in range(trials):
        model = random_model(rng, int(rng.integers(3, 10)), int(rng.integers(2, 6)), 0.3)
        op = model.operator()
        A = dense_materialize(op)
        x_star = np.linalg.solve(A, model.data.y)
        x, rep = cg_solve(op, model.data.y, SolverConfig(rel_tol=1e-10))
        worst = max(worst, np.linalg.norm(x - x_star) / np.linalg.norm(x_star))
    return "CG matches direct solve", worst <= 1e-6, f"max relative error {worst:.2e}"


def check_preconditioner(rng):
    n, r = 60, 8
    K = random_psd(rng, n, rank=r)
    fac = pivoted_cholesky(np.diag(K), lambda i: K[:, i], n)
    exact = np.max(np.abs(fac.L @ fac.L.T - K))
    noise = 0.1
    M = WoodburyPreconditioner(pivoted_cholesky(np.diag(K), lambda i: K[:, i], r), noise)
    err = np.max(np.abs(M(K + noise * np.eye(n)) - np.eye(n)))
    ok = exact <= 1e-10 and err <= 1e-8
    return "pivoted Cholesky preconditioner", ok, f"factor error {exact:.2e}, inverse error {err:.2e}"


def check_gradients(rng):
    worst = 0.0
    for family in ("se", "periodic", "product", "icm"):
        model = random_model(rng, 5, 4, 0.25, temporal=family)
        g = mll_grad_estimate(model, SolverConfig(rel_tol=1e-12, max_iters=5000), exact_trace=True)
        fd = finite_difference_grad(model)
        worst = max(worst, np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6)))
    return "gradients match finite differences", worst <= 1e-4, f"max relative error {worst:.2e}"


def check_pathwise(rng, n_samples=4000, tol_stderr=4.0):
    model = random_model(rng, 6, 4, 0.3)
    samples = pathwise_posterior_samples(model, n_samples, SolverConfig(rel_tol=1e-10), seed=int(rng.integers(2**31)))
    pred = predict(model, samples)
    ref = exact_posterior_reference(model, pred.cells)
    z = np.abs(pred.mean - ref.mean) / np.sqrt(ref.latent_variance / n_samples)
    worst = float(np.max(z))
    return "pathwise samples match exact posterior", worst <= tol_stderr, f"max |z| {worst:.2f}"


def check_breakeven(rng, trials=100):
    worst = 0.0
    for _ in range(trials):
        p, q = (int(v) for v in rng.integers(2, 5000, size=2))
        gt, gm = breakeven_points(p, q)
        lhs_t = ((1 - gt) * p * q) ** 2
        lhs_m = ((1 - gm) * p * q) ** 2
        worst = max(worst, abs(lhs_t / (p * p * q + p * q * q) - 1), abs(lhs_m / (p * p + q * q) - 1))
    return "break-even points solve their defining equations", worst <= 1e-9, f"max relative error {worst:.2e}"


def check_counters(rng):
    p, q = 7, 5
    mask = generate_mask(p, q, Uniform(0.4), seed=1)
    op = LatentKroneckerOperator(random_psd(rng, p), random_psd(rng, q), mask, 0.1)
    op.matvec(np.ones(mask.count))
    c = op.counters
    ok = c.mults == p * q * (p + q) + mask.count and c.peak_elements == p * p + q * q + p * q
    return "cost counters", ok, f"mults {c.mults}, peak elements {c.peak_elements}"


CHECKS = (check_operator, check_cg, check_preconditioner, check_gradients, check_pathwise,
          check_breakeven, check_counters)


def run_all(seed=0):
    results = []
    for i, check in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        try:
            results.append(check(rng))
        except Exception as exc:  # a crashing check is a failed check
            results.append((check.__name__, False, f"{type(exc).__name__}: {exc}"))
    return results


def format_table(results):
    width = max(len(name) for name, _, _ in results)
    lines = [f"{'check':<{width}}  result  detail"]
    for name, ok, detail in results:
        lines.append(f"{name:<{width}}  {'PASS' if ok else 'FAIL':<6}  {detail}")
    return "\n".join(lines)


__all__ = ["run_all", "format_table", "random_model", "random_psd", "finite_difference_grad"]
