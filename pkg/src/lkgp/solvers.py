"""Preconditioned conjugate gradients, pivoted Cholesky and trace probes."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NotPSD, NumericalBreakdown, ShapeMismatch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 0.01
    max_iters: int = 1000
    precond_rank: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.rel_tol < 1.0:
            raise ValueError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.precond_rank < 0:
            raise ValueError("precond_rank must be nonnegative")


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_rel_residual: float
    converged: bool


def cg_solve(apply, b, config: SolverConfig = SolverConfig(), precond=None, x0=None):
    """Solve ``A x = b`` for symmetric positive-definite ``A``.

    ``apply`` maps an ``(n,)`` or ``(n, k)`` array to ``A`` times it. A 2-D
    ``b`` is treated as ``k`` independent systems: each column runs its own
    CG recurrence and stops on its own residual, the columns are only batched
    through ``apply``. ``precond`` (if given) applies ``M^{-1}``.

    Returns ``(x, report)`` for 1-D ``b`` and ``(x, [reports])`` otherwise.
    Stopping rule: ``|b - A x| / |b| <= config.rel_tol`` on the recursive
    residual.
    """
    b = np.asarray(b, dtype=float)
    single = b.ndim == 1
    B = b[:, None] if single else b
    if B.ndim != 2:
        raise ShapeMismatch(f"right-hand side must be 1-D or 2-D, got shape {b.shape}")
    if not np.all(np.isfinite(B)):
        raise NumericalBreakdown("right-hand side is not finite", iteration=0)
    n, k = B.shape
    tol = config.rel_tol

    X = np.zeros_like(B) if x0 is None else np.array(x0, dtype=float).reshape(n, k)
    R = B - apply(X) if x0 is not None else B.copy()
    bnorm = np.linalg.norm(B, axis=0)
    safe = np.where(bnorm > 0, bnorm, 1.0)
    iters = np.zeros(k, dtype=np.int64)
    res = np.where(bnorm > 0, np.linalg.norm(R, axis=0) / safe, 0.0)
    X[:, bnorm == 0] = 0.0

    active = np.flatnonzero(res > tol)
    Z = precond(R[:, active]) if precond is not None else R[:, active].copy()
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R[:, active], Z)

    for it in range(1, config.max_iters + 1):
        if active.size == 0:
            break
        AP = apply(P)
        pap = np.einsum("ij,ij->j", P, AP)
        if not np.all(np.isfinite(AP)) or not np.all(np.isfinite(pap)):
            raise NumericalBreakdown("non-finite value in operator product", iteration=it)
        if np.any(pap <= 0):
            raise NumericalBreakdown("operator is not positive definite along a search direction", iteration=it)
        alpha = rz / pap
        X[:, active] += alpha * P
        Ra = R[:, active] - alpha * AP
        R[:, active] = Ra
        iters[active] = it
        res[active] = np.linalg.norm(Ra, axis=0) / safe[active]
        if not np.all(np.isfinite(res[active])):
            raise NumericalBreakdown("non-finite residual", iteration=it)

        keep = res[active] > tol
        if not np.any(keep):
            active = active[keep]
            break
        active, P, Ra, rz = active[keep], P[:, keep], Ra[:, keep], rz[keep]
        Za = precond(Ra) if precond is not None else Ra
        rz_new = np.einsum("ij,ij->j", Ra, Za)
        P = Za + (rz_new / rz) * P
        rz = rz_new

    reports = [SolveReport(int(iters[j]), float(res[j]), bool(res[j] <= tol)) for j in range(k)]
    if single:
        return X[:, 0], reports[0]
    return X, reports


@dataclass(frozen=True)
class PivotedCholeskyFactor:
    L: np.ndarray
    pivots: np.ndarray

    @property
    def rank(self):
        return self.L.shape[1]

    @property
    def n(self):
        return self.L.shape[0]


def pivoted_cholesky(diag, column, rank, n=None, rel_stop=1e-12, psd_tol=1e-8):
    """Greedy partial Cholesky ``A ≈ L L^T`` of a PSD matrix.

    Parameters
    ----------
    diag : ndarray, shape (n,)
        Diagonal of ``A``.
    column : callable
        ``column(i)`` returns column ``i`` of ``A`` as a length-``n`` array.
    rank : int
        Maximum number of pivots.

    The pivot is always the largest remaining residual diagonal entry.
    Stops early once that entry drops below ``rel_stop`` times the initial
    maximum.
    """
    d = np.array(diag, dtype=float)
    n = d.size if n is None else n
    if d.size != n:
        raise ShapeMismatch(f"diagonal has {d.size} entries, expected {n}")
    rank = min(int(rank), n)
    L = np.zeros((n, rank))
    pivots = []
    dmax0 = float(d.max()) if n else 0.0
    if dmax0 <= 0:
        return PivotedCholeskyFactor(L[:, :0], np.array([], dtype=np.int64))
    if d.min() < -psd_tol * dmax0:
        raise NotPSD(f"negative diagonal entry {d.min():.3e}")
    for m in range(rank):
        i = int(np.argmax(d))
        piv = d[i]
        if piv < rel_stop * dmax0:
            break
        col = np.asarray(column(i), dtype=float) - L[:, :m] @ L[i, :m]
        l = col / np.sqrt(piv)
        L[:, m] = l
        d -= l * l
        if d.min() < -psd_tol * dmax0:
            raise NotPSD(f"residual diagonal {d.min():.3e} after {m + 1} pivots")
        d[i] = 0.0
        np.maximum(d, 0.0, out=d)
        pivots.append(i)
    r = len(pivots)
    return PivotedCholeskyFactor(L[:, :r].copy(), np.array(pivots, dtype=np.int64))


class WoodburyPreconditioner:
    """Applies ``(L L^T + noise I)^{-1}`` through an ``r x r`` capacitance solve."""

    def __init__(self, factor: PivotedCholeskyFactor, noise):
        if noise <= 0:
            raise ValueError("preconditioner needs positive noise")
        self.factor = factor
        self.noise = float(noise)
        L = factor.L
        if factor.rank:
            cap = np.eye(factor.rank) + (L.T @ L) / self.noise
            self._cho = cho_factor(cap, lower=True)
        else:
            self._cho = None

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self._cho is None:
            return z / self.noise
        L = self.factor.L
        w = cho_solve(self._cho, L.T @ z)
        return (z - L @ w / self.noise) / self.noise


def precond_apply(factor: PivotedCholeskyFactor, noise, z):
    return WoodburyPreconditioner(factor, noise)(z)


def build_preconditioner(op, rank, noise=None):
    """Pivoted-Cholesky preconditioner for an operator with ``diagonal``/``column``.

    The factor is built on the noiseless part; ``noise`` defaults to the
    operator's own noise level. Returns ``None`` when ``rank`` is 0.
    """
    if rank <= 0:
        return None
    noise = op.noise if noise is None else noise
    factor = pivoted_cholesky(op.diagonal(include_noise=False), op.column, rank, op.n)
    return WoodburyPreconditioner(factor, noise)


def make_probes(n, count, seed=None):
    """``count`` Rademacher probe vectors as the columns of an ``(n, count)`` array."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=(n, count)).astype(float) * 2.0 - 1.0
