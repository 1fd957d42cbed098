"""Latent Kronecker GP: likelihood, gradients, fitting and pathwise sampling.

The model is ``y = P vec(F) + noise`` where ``F`` is a GP on the full
``p x q`` grid with covariance ``K_SS ⊗ K_TT``. Everything that scales with
``n`` goes through :class:`~lkgp.linops.LatentKroneckerOperator` and
conjugate gradients; the dense routines here (``*_exact``,
:func:`exact_posterior_reference`) exist as small-scale references.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import ConvergenceError, NotPSD, NumericalError, OracleTooLarge, ShapeMismatch
from .grid import ObservationMask, PartialGrid, Standardization
from .kernels import Kernel, inv_softplus, kernel_from_dict, softplus, softplus_grad
from .linops import DENSE_ORACLE_LIMIT, LatentKroneckerOperator, kron_mvm, observed_kernel_matrix, unproject
from .solvers import SolveReport, SolverConfig, build_preconditioner, cg_solve, make_probes

log = logging.getLogger(__name__)

JITTER_LEVELS = (0.0, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class LkgpModel:
    data: PartialGrid
    spatial_kernel: Kernel
    temporal_kernel: Kernel
    noise: float = softplus(0.0)

    def __post_init__(self):
        if self.spatial_kernel.input_dim != self.data.s_points.shape[1]:
            raise ShapeMismatch(
                f"spatial kernel expects {self.spatial_kernel.input_dim} dims, "
                f"S has {self.data.s_points.shape[1]}"
            )
        if self.temporal_kernel.input_dim != self.data.t_points.shape[1]:
            raise ShapeMismatch(
                f"temporal kernel expects {self.temporal_kernel.input_dim} dims, "
                f"T has {self.data.t_points.shape[1]}"
            )
        if not self.noise > 0:
            raise ValueError("noise variance must be positive")

    @property
    def mask(self):
        return self.data.mask

    @property
    def n_params(self):
        return self.spatial_kernel.n_params + self.temporal_kernel.n_params + 1

    @property
    def params(self):
        """Unconstrained parameter vector: spatial, temporal, then noise."""
        return np.concatenate([self.spatial_kernel.raw(), self.temporal_kernel.raw(),
                               [inv_softplus(self.noise)]])

    def param_names(self):
        return ([f"spatial.{n}" for n in self.spatial_kernel.param_names()]
                + [f"temporal.{n}" for n in self.temporal_kernel.param_names()] + ["noise"])

    def with_params(self, raw):
        raw = np.asarray(raw, dtype=float)
        if raw.size != self.n_params:
            raise ShapeMismatch(f"expected {self.n_params} parameters, got {raw.size}")
        a = self.spatial_kernel.n_params
        b = a + self.temporal_kernel.n_params
        return LkgpModel(self.data, self.spatial_kernel.with_raw(raw[:a]),
                         self.temporal_kernel.with_raw(raw[a:b]), softplus(raw[b]))

    def with_data(self, data):
        return LkgpModel(data, self.spatial_kernel, self.temporal_kernel, self.noise)

    def factors(self):
        return (self.spatial_kernel.matrix(self.data.s_points),
                self.temporal_kernel.matrix(self.data.t_points))

    def operator(self, lazy=False):
        return LatentKroneckerOperator.from_kernels(
            self.spatial_kernel, self.data.s_points, self.temporal_kernel, self.data.t_points,
            self.mask, self.noise, lazy=lazy)

    def dense_covariance(self):
        """Explicit ``P (K_SS ⊗ K_TT) P^T + noise I`` (reference use only)."""
        _guard(self.data.n)
        K_SS, K_TT = self.factors()
        return observed_kernel_matrix(K_SS, K_TT, self.mask) + self.noise * np.eye(self.data.n)


def _guard(n):
    if n > DENSE_ORACLE_LIMIT:
        raise OracleTooLarge(f"n={n} exceeds the dense reference limit {DENSE_ORACLE_LIMIT}")


def cholesky_with_jitter(K):
    """Lower Cholesky factor, escalating jitter relative to the mean diagonal.

    Returns ``(L, jitter)``. Raises :class:`NotPSD` when every level fails.
    """
    K = np.asarray(K, dtype=float)
    scale = float(np.mean(np.diag(K))) if K.size else 1.0
    for level in JITTER_LEVELS:
        jitter = level * scale
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(K.shape[0]) if jitter else K)
        except np.linalg.LinAlgError:
            continue
        if jitter:
            log.debug("cholesky needed jitter %.3g", jitter)
        return L, jitter
    raise NotPSD(f"cholesky failed with jitter up to {JITTER_LEVELS[-1]:g} x mean diagonal")


def log_marginal_likelihood_exact(model: LkgpModel):
    """``log N(y | 0, P (K_SS ⊗ K_TT) P^T + noise I)`` by dense Cholesky."""
    A = model.dense_covariance()
    L, _ = cholesky_with_jitter(A)
    y = model.data.y
    alpha = solve_triangular(L, y, lower=True)
    n = y.size
    return float(-0.5 * alpha @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi))


@dataclass
class MllGradient:
    """Gradient estimate plus the by-products a training loop wants."""

    grad: np.ndarray
    quadratic: np.ndarray
    trace: np.ndarray
    trace_stderr: np.ndarray
    v: np.ndarray
    data_fit: float
    reports: list


def _derivative_factors(model: LkgpModel, K_SS, K_TT):
    """Yield ``(dA, dB)`` per kernel parameter: the Kronecker factors of ``dK``."""
    for dA in model.spatial_kernel.grads(model.data.s_points):
        yield dA, K_TT
    for dB in model.temporal_kernel.grads(model.data.t_points):
        yield K_SS, dB


def mll_grad_estimate(model: LkgpModel, solver_config: SolverConfig = SolverConfig(), probe_count=16,
                      exact_trace=False, seed=None, full_output=False):
    """Gradient of the log marginal likelihood in unconstrained coordinates.

    Uses ``dL/du = 0.5 v^T dK v - 0.5 tr(A^{-1} dK)`` with ``A = K + noise I``
    and ``v = A^{-1} y``. Every ``dK`` is itself a projected Kronecker product
    (one factor differentiated). ``v`` and the probe solves ``A^{-1} z`` share
    one batched CG call. The trace is a Rademacher (Hutchinson) average of
    ``(A^{-1} z)^T dK z`` unless ``exact_trace`` is set, in which case a dense
    inverse is used (small ``n`` only).
    """
    data = model.data
    n, mask = data.n, data.mask
    if not exact_trace and probe_count < 1:
        raise ValueError("probe_count must be >= 1 unless exact_trace is set")
    op = model.operator()
    K_SS, K_TT = op.K_SS, op.K_TT
    rank = min(solver_config.precond_rank, n)
    precond = build_preconditioner(op, rank)

    probes = None if exact_trace else make_probes(n, probe_count, seed)
    rhs = data.y[:, None] if exact_trace else np.column_stack([data.y, probes])
    sol, reports = cg_solve(op, rhs, solver_config, precond)
    failed = [i for i, r in enumerate(reports) if not r.converged]
    if failed:
        raise ConvergenceError(
            f"CG did not reach rel_tol={solver_config.rel_tol} for {len(failed)} of {len(reports)} "
            f"systems (worst residual {max(reports[i].final_rel_residual for i in failed):.3g})",
            reports)
    v = sol[:, 0]
    W = None if exact_trace else sol[:, 1:]

    if exact_trace:
        _guard(n)
        L, _ = cholesky_with_jitter(observed_kernel_matrix(K_SS, K_TT, mask) + model.noise * np.eye(n))
        A_inv = cho_solve((L, True), np.eye(n))

    n_kernel = model.n_params - 1
    quad = np.empty(model.n_params)
    trace = np.empty(model.n_params)
    stderr = np.zeros(model.n_params)
    v_full = unproject(mask, v)
    for i, (dA, dB) in enumerate(_derivative_factors(model, K_SS, K_TT)):
        quad[i] = v @ kron_mvm(dA, dB, v_full)[mask.observed]
        if exact_trace:
            trace[i] = np.sum(A_inv * observed_kernel_matrix(dA, dB, mask))
        else:
            dKZ = kron_mvm(dA, dB, unproject(mask, probes))[mask.observed]
            per_probe = np.einsum("ij,ij->j", W, dKZ)
            trace[i] = per_probe.mean()
            if probe_count > 1:
                stderr[i] = per_probe.std(ddof=1) / math.sqrt(probe_count)

    dnoise = softplus_grad(inv_softplus(model.noise))
    quad[n_kernel] = dnoise * (v @ v)
    if exact_trace:
        trace[n_kernel] = dnoise * np.trace(A_inv)
    else:
        per_probe = dnoise * np.einsum("ij,ij->j", W, probes)
        trace[n_kernel] = per_probe.mean()
        if probe_count > 1:
            stderr[n_kernel] = per_probe.std(ddof=1) / math.sqrt(probe_count)

    grad = 0.5 * quad - 0.5 * trace
    if not full_output:
        return grad
    return MllGradient(grad, quad, trace, stderr, v, float(-0.5 * data.y @ v), reports)


@dataclass
class FitReport:
    param_names: list
    losses: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)
    solver_iterations: list = field(default_factory=list)
    wall_time: float = 0.0
    steps_completed: int = 0
    aborted: str | None = None

    def to_dict(self):
        return {
            "param_names": self.param_names,
            "losses": [float(x) for x in self.losses],
            "trajectory": [np.asarray(t).tolist() for t in self.trajectory],
            "solver_iterations": self.solver_iterations,
            "wall_time": self.wall_time,
            "steps_completed": self.steps_completed,
            "aborted": self.aborted,
        }


def fit(model: LkgpModel, n_steps=100, learning_rate=0.1, solver_config: SolverConfig = SolverConfig(),
        probe_count=16, seed=None, betas=(0.9, 0.999), eps=1e-8, exact_trace=False):
    """Maximise the marginal likelihood with Adam in unconstrained space.

    ``losses`` records the data-fit proxy ``-0.5 y^T v`` per step (the
    log-determinant is never formed). Probe vectors are redrawn every step
    from ``(seed, step)``. A non-finite gradient or a failed solve stops the
    loop and returns the last parameters that produced a finite gradient.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    seed = solver_config.seed if seed is None else seed
    b1, b2 = betas
    theta = model.params.copy()
    m = np.zeros_like(theta)
    s = np.zeros_like(theta)
    report = FitReport(model.param_names(), trajectory=[theta.copy()])
    t0 = time.perf_counter()
    good = theta.copy()
    for step in range(n_steps):
        current = model.with_params(theta)
        try:
            out = mll_grad_estimate(current, solver_config, probe_count, exact_trace=exact_trace,
                                    seed=np.random.SeedSequence(seed, spawn_key=(step,)), full_output=True)
        except NumericalError as exc:
            report.aborted = f"step {step}: {exc}"
            log.warning("fit aborted: %s", report.aborted)
            break
        g = out.grad
        if not np.all(np.isfinite(g)):
            report.aborted = f"step {step}: non-finite gradient for {np.array(report.param_names)[~np.isfinite(g)].tolist()}"
            log.warning("fit aborted: %s", report.aborted)
            break
        good = theta.copy()
        report.losses.append(out.data_fit)
        report.solver_iterations.append([r.iterations for r in out.reports])
        m = b1 * m + (1 - b1) * g
        s = b2 * s + (1 - b2) * g * g
        mhat = m / (1 - b1 ** (step + 1))
        shat = s / (1 - b2 ** (step + 1))
        theta = theta + learning_rate * mhat / (np.sqrt(shat) + eps)
        report.trajectory.append(theta.copy())
        report.steps_completed = step + 1
    else:
        good = theta
    report.wall_time = time.perf_counter() - t0
    return model.with_params(good), report


def _sample_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _factor_roots(model: LkgpModel):
    K_SS, K_TT = model.factors()
    L_S, _ = cholesky_with_jitter(K_SS)
    L_T, _ = cholesky_with_jitter(K_TT)
    return K_SS, K_TT, L_S, L_T


def prior_grid_sample(model: LkgpModel, seed=None):
    """One draw of ``vec(F)`` on the full grid, ``F ~ N(0, K_SS ⊗ K_TT)``.

    Computed as ``(L_S ⊗ L_T) z`` with the two Cholesky factors, so the
    ``pq x pq`` covariance is never formed.
    """
    _, _, L_S, L_T = _factor_roots(model)
    z = np.random.default_rng(seed).standard_normal(model.mask.pq)
    return kron_mvm(L_S, L_T, z)


@dataclass
class PosteriorSamples:
    """Posterior function draws on every grid cell (rows are samples)."""

    samples: np.ndarray
    seed: int | None
    converged: np.ndarray
    reports: list

    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def failed(self):
        return np.flatnonzero(~self.converged)

    def usable(self):
        return self.samples[self.converged]


def pathwise_posterior_samples(model: LkgpModel, n_samples=64, solver_config: SolverConfig = SolverConfig(),
                               seed=None, batch_size=1024):
    """Exact posterior draws on the grid by pathwise conditioning.

    Each sample is ``f + (K_SS ⊗ K_TT) P^T A^{-1} (y - P f - e)`` with a prior
    grid draw ``f``, noise ``e ~ N(0, noise I)`` and ``A`` the projected
    operator. Sample ``i`` depends only on ``(seed, i)``.
    """
    data, mask = model.data, model.mask
    pq, n = mask.pq, data.n
    K_SS, K_TT, L_S, L_T = _factor_roots(model)
    op = LatentKroneckerOperator(K_SS, K_TT, mask, model.noise)
    precond = build_preconditioner(op, min(solver_config.precond_rank, n))
    sd = math.sqrt(model.noise)

    out = np.empty((n_samples, pq))
    converged = np.ones(n_samples, dtype=bool)
    reports = []
    for lo in range(0, n_samples, batch_size):
        idx = range(lo, min(lo + batch_size, n_samples))
        Z = np.empty((pq, len(idx)))
        E = np.empty((n, len(idx)))
        for c, i in enumerate(idx):
            rng = _sample_rng(seed, i)
            Z[:, c] = rng.standard_normal(pq)
            E[:, c] = sd * rng.standard_normal(n)
        F = kron_mvm(L_S, L_T, Z)
        rhs = data.y[:, None] - F[mask.observed] - E
        R, reps = cg_solve(op, rhs, solver_config, precond)
        out[lo:lo + len(idx)] = (F + kron_mvm(K_SS, K_TT, unproject(mask, R))).T
        reports.extend(reps)
        converged[lo:lo + len(idx)] = [r.converged for r in reps]
    if not converged.all():
        log.warning("%d of %d posterior samples did not converge and are excluded",
                    (~converged).sum(), n_samples)
    return PosteriorSamples(out, seed, converged, reports)


@dataclass
class Prediction:
    """Per-cell predictive moments.

    ``variance`` is in observation space (latent variance plus noise).
    """

    cells: np.ndarray
    mean: np.ndarray
    latent_variance: np.ndarray
    noise: float

    @property
    def variance(self):
        return self.latent_variance + self.noise

    def destandardize(self, st: Standardization):
        return Prediction(self.cells, st.invert(self.mean), st.invert_variance(self.latent_variance),
                          float(st.invert_variance(self.noise)))


def _targets(model, target_cells):
    if target_cells is None:
        return model.mask.missing()
    cells = np.asarray(target_cells, dtype=np.int64).ravel()
    if cells.size and (cells.min() < 0 or cells.max() >= model.mask.pq):
        raise ShapeMismatch("target cells must be linear grid indices in [0, pq)")
    return cells


def predict(model: LkgpModel, samples: PosteriorSamples, target_cells=None):
    """Sample mean and (``ddof=1``) variance of the posterior draws per cell."""
    cells = _targets(model, target_cells)
    draws = samples.usable()[:, cells]
    if draws.shape[0] == 0:
        raise ConvergenceError("no converged posterior samples", samples.reports)
    mean = draws.mean(axis=0)
    var = draws.var(axis=0, ddof=1) if draws.shape[0] > 1 else np.zeros(cells.size)
    return Prediction(cells, mean, var, model.noise)


def exact_posterior_reference(model: LkgpModel, target_cells=None):
    """Closed-form posterior mean and variance at grid cells by dense Cholesky."""
    cells = _targets(model, target_cells)
    mask = model.mask
    K_SS, K_TT = model.factors()
    A = model.dense_covariance()
    L, _ = cholesky_with_jitter(A)
    Kxo = observed_kernel_matrix(K_SS, K_TT, mask, rows=cells)
    mean = Kxo @ cho_solve((L, True), model.data.y)
    V = solve_triangular(L, Kxo.T, lower=True)
    prior = np.diag(K_SS)[cells // mask.q] * np.diag(K_TT)[cells % mask.q]
    var = np.maximum(prior - np.einsum("ij,ij->j", V, V), 0.0)
    return Prediction(cells, mean, var, model.noise)


def metrics(prediction: Prediction, truth, space="observation"):
    """``(rmse, mean negative log predictive density)`` against ``truth``."""
    truth = np.asarray(truth, dtype=float)
    if truth.shape != prediction.mean.shape:
        raise ShapeMismatch(f"truth has shape {truth.shape}, prediction {prediction.mean.shape}")
    if truth.size == 0:
        return float("nan"), float("nan")
    if space == "observation":
        var = prediction.variance
    elif space == "latent":
        var = prediction.latent_variance
    else:
        raise ValueError(f"unknown space {space!r}")
    resid = truth - prediction.mean
    rmse = float(np.sqrt(np.mean(resid**2)))
    nll = float(np.mean(0.5 * np.log(2 * math.pi * var) + resid**2 / (2 * var)))
    return rmse, nll


CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: LkgpModel, standardization: Standardization | None = None, data_path=None):
    doc = {
        "schema_version": CHECKPOINT_VERSION,
        "spatial_kernel": model.spatial_kernel.to_dict(),
        "temporal_kernel": model.temporal_kernel.to_dict(),
        "params": model.params.tolist(),
        "param_names": model.param_names(),
        "noise": model.noise,
        "standardization": None if standardization is None
        else {"mean": standardization.mean, "scale": standardization.scale},
        "mask": json.loads(model.mask.to_json()),
        "data": None if data_path is None else str(data_path),
    }
    Path(path).write_text(json.dumps(doc, indent=2))
    return doc


def load_checkpoint(path):
    """Read a checkpoint; returns ``(spatial_kernel, temporal_kernel, noise, standardization, doc)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('schema_version')}")
    ks = kernel_from_dict(doc["spatial_kernel"])
    kt = kernel_from_dict(doc["temporal_kernel"])
    st = doc.get("standardization")
    st = None if st is None else Standardization(st["mean"], st["scale"])
    return ks, kt, float(doc["noise"]), st, doc


def mask_from_checkpoint(doc):
    return ObservationMask.from_json(doc["mask"])
