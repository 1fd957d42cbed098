"""Matrix-free operators with latent Kronecker structure.

The covariance of the observed cells is ``P (K_SS ⊗ K_TT) P^T`` where ``P``
gathers the observed entries of a full-grid vector. Applying it to ``x``
zero-pads ``x`` to the grid, reshapes to ``p x q``, multiplies
``K_SS @ X @ K_TT^T`` and gathers the observed entries again. ``P`` is never
formed; scatter and gather use the mask's index array.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OracleTooLarge, ShapeMismatch
from .grid import ObservationMask

DENSE_ORACLE_LIMIT = 4096


@dataclass
class CostCounters:
    """Instrumented work and storage counts.

    ``mults`` counts scalar multiply-adds, ``kernel_evals`` counts kernel
    function evaluations and ``peak_elements`` is the largest number of
    simultaneously stored matrix/vector elements seen so far.
    """

    mults: int = 0
    kernel_evals: int = 0
    peak_elements: int = 0

    def reset(self):
        self.mults = self.kernel_evals = self.peak_elements = 0

    def observe_storage(self, elements):
        self.peak_elements = max(self.peak_elements, int(elements))

    def as_dict(self):
        return {"mults": self.mults, "kernel_evals": self.kernel_evals, "peak_elements": self.peak_elements}


def _columns(x, n, what="x"):
    x = np.asarray(x, dtype=float)
    if x.shape[0] != n or x.ndim > 2:
        raise ShapeMismatch(f"{what} must have leading dimension {n}, got shape {x.shape}")
    return x


def kron_mvm(A, B, x, counters: CostCounters | None = None):
    """``(A ⊗ B) x`` for ``p x p`` ``A`` and ``q x q`` ``B``.

    ``x`` has length ``p*q`` (or shape ``(p*q, k)`` for ``k`` right-hand
    sides). Entry ``j*q + k`` of ``x`` belongs to row ``j`` of ``A`` and row
    ``k`` of ``B``, so the product is ``A @ X @ B^T`` with ``X = x`` reshaped
    to ``p x q``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    p, q = A.shape[0], B.shape[0]
    if A.shape != (p, p) or B.shape != (q, q):
        raise ShapeMismatch(f"factors must be square, got {A.shape} and {B.shape}")
    x = _columns(x, p * q)
    k = 1 if x.ndim == 1 else x.shape[1]
    Y = (A @ x.reshape(p, q * k)).reshape(p, q, k)
    out = np.matmul(B, Y).reshape(x.shape)
    if counters is not None:
        counters.mults += k * p * q * (p + q)
    return out


def project(mask: ObservationMask, v_full):
    """Gather the observed entries of a full-grid vector (``P v``)."""
    v_full = _columns(v_full, mask.pq, "v_full")
    return v_full[mask.observed]


def unproject(mask: ObservationMask, v_obs, out=None):
    """Scatter observed values into a zero full-grid vector (``P^T v``)."""
    v_obs = _columns(v_obs, mask.count, "v_obs")
    if out is None:
        out = np.zeros((mask.pq,) + v_obs.shape[1:])
    else:
        out[...] = 0.0
    out[mask.observed] = v_obs
    return out


class LatentKroneckerOperator:
    """``P (K_SS ⊗ K_TT) P^T + noise * I`` acting on length-``n`` vectors.

    By default the two factors are held as dense matrices (``p**2 + q**2``
    elements). With :meth:`from_kernels` and ``lazy=True`` only the inputs
    are stored and factor blocks are re-evaluated on every apply, bounding
    kernel storage by ``block * (p + q)``.
    """

    def __init__(self, K_SS, K_TT, mask: ObservationMask, noise=0.0):
        K_SS = np.asarray(K_SS, dtype=float)
        K_TT = np.asarray(K_TT, dtype=float)
        if K_SS.shape != (mask.p, mask.p) or K_TT.shape != (mask.q, mask.q):
            raise ShapeMismatch(
                f"factor shapes {K_SS.shape}, {K_TT.shape} do not match a {mask.p}x{mask.q} grid"
            )
        if noise < 0:
            raise ValueError("noise must be nonnegative")
        self.K_SS, self.K_TT = K_SS, K_TT
        self.mask = mask
        self.noise = float(noise)
        self.counters = CostCounters()
        self._lazy = None
        self._buffer = None

    @classmethod
    def from_kernels(cls, spatial_kernel, s_points, temporal_kernel, t_points, mask, noise=0.0,
                     lazy=False, block=256):
        if not lazy:
            op = cls(spatial_kernel.matrix(s_points), temporal_kernel.matrix(t_points), mask, noise)
            op.counters.kernel_evals += mask.p**2 + mask.q**2
            return op
        op = cls.__new__(cls)
        op.K_SS = op.K_TT = None
        op.mask = mask
        op.noise = float(noise)
        op.counters = CostCounters()
        op._buffer = None
        op._lazy = (spatial_kernel, np.asarray(s_points, float), temporal_kernel,
                    np.asarray(t_points, float), int(block))
        return op

    @property
    def lazy(self):
        return self._lazy is not None

    @property
    def n(self):
        return self.mask.count

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def dtype(self):
        return np.dtype(float)

    def _scatter(self, x):
        shape = (self.mask.pq,) + x.shape[1:]
        if self._buffer is None or self._buffer.shape != shape:
            self._buffer = np.zeros(shape)
        return unproject(self.mask, x, out=self._buffer)

    def kron(self, v_full):
        """Unprojected ``(K_SS ⊗ K_TT) v`` on the full grid."""
        if self._lazy is None:
            return kron_mvm(self.K_SS, self.K_TT, v_full, self.counters)
        return self._lazy_kron(_columns(v_full, self.mask.pq, "v_full"))

    def _lazy_kron(self, v):
        ks, S, kt, T, block = self._lazy
        p, q = self.mask.p, self.mask.q
        k = 1 if v.ndim == 1 else v.shape[1]
        V = v.reshape(p, q * k)
        Y = np.empty_like(V)
        for lo in range(0, p, block):
            rows = ks.matrix(S[lo:lo + block], S)
            Y[lo:lo + block] = rows @ V
        Y = Y.reshape(p, q, k)
        Z = np.empty_like(Y)
        for lo in range(0, q, block):
            rows = kt.matrix(T[lo:lo + block], T)
            Z[:, lo:lo + block, :] = np.matmul(rows, Y)
        c = self.counters
        c.kernel_evals += p * p + q * q
        c.mults += k * p * q * (p + q)
        c.observe_storage(min(block, p) * p + min(block, q) * q + 2 * p * q * k)
        return Z.reshape(v.shape)

    def matvec(self, x):
        x = _columns(x, self.n)
        k = 1 if x.ndim == 1 else x.shape[1]
        full = self.kron(self._scatter(x))
        out = full[self.mask.observed] + self.noise * x
        self.counters.mults += k * self.n
        if self._lazy is None:
            self.counters.observe_storage(self.mask.p**2 + self.mask.q**2 + self.mask.pq * k)
        return out

    __call__ = matvec

    def __matmul__(self, x):
        return self.matvec(x)

    def diagonal(self, include_noise=True):
        rows, cols = self.mask.rows, self.mask.cols
        if self._lazy is None:
            d = np.diag(self.K_SS)[rows] * np.diag(self.K_TT)[cols]
        else:
            ks, S, kt, T, _ = self._lazy
            d = ks.diag(S)[rows] * kt.diag(T)[cols]
        return d + self.noise if include_noise else d

    def column(self, i):
        """Column ``i`` of the noiseless part ``P (K_SS ⊗ K_TT) P^T``.

        The grid column ``j*q + k`` of ``K_SS ⊗ K_TT`` is
        ``K_SS[:, j] ⊗ K_TT[:, k]``; only its observed entries are formed.
        """
        rows, cols = self.mask.rows, self.mask.cols
        j, k = rows[i], cols[i]
        if self._lazy is None:
            return self.K_SS[rows, j] * self.K_TT[cols, k]
        ks, S, kt, T, _ = self._lazy
        return ks.matrix(S, S[j:j + 1])[rows, 0] * kt.matrix(T, T[k:k + 1])[cols, 0]

    def factors(self):
        """Dense ``(K_SS, K_TT)``, evaluating them if the operator is lazy."""
        if self._lazy is None:
            return self.K_SS, self.K_TT
        ks, S, kt, T, _ = self._lazy
        return ks.matrix(S), kt.matrix(T)


def projected_kron_apply(op: LatentKroneckerOperator, x):
    return op.matvec(x)


def observed_kernel_matrix(K_SS, K_TT, mask: ObservationMask, rows=None, cols=None):
    """Explicit entries of ``P (K_SS ⊗ K_TT) P^T`` for selected grid cells.

    ``rows`` and ``cols`` are linear grid indices (default: observed cells).
    """
    rows = mask.observed if rows is None else np.asarray(rows)
    cols = mask.observed if cols is None else np.asarray(cols)
    q = mask.q
    return K_SS[np.ix_(rows // q, cols // q)] * K_TT[np.ix_(rows % q, cols % q)]


def dense_materialize(op: LatentKroneckerOperator, limit=DENSE_ORACLE_LIMIT):
    """Explicit ``n x n`` matrix of ``op``; a test oracle for small grids."""
    if op.mask.pq > limit:
        raise OracleTooLarge(f"grid of {op.mask.pq} cells exceeds the dense oracle limit {limit}")
    K_SS, K_TT = op.factors()
    full = np.kron(K_SS, K_TT)
    obs = op.mask.observed
    return full[np.ix_(obs, obs)] + op.noise * np.eye(op.n)


class DenseOperator:
    """Plain ``K + noise * I`` with the same counters as the latent operator."""

    def __init__(self, K, noise=0.0):
        self.K = np.asarray(K, dtype=float)
        self.noise = float(noise)
        self.counters = CostCounters()

    @property
    def n(self):
        return self.K.shape[0]

    @property
    def shape(self):
        return self.K.shape

    def matvec(self, x):
        x = _columns(x, self.n)
        k = 1 if x.ndim == 1 else x.shape[1]
        self.counters.observe_storage(self.n * self.n + self.n * k)
        self.counters.mults += k * self.n * self.n
        if self.noise == 0.0:
            return self.K @ x
        self.counters.mults += k * self.n
        return self.K @ x + self.noise * x

    __call__ = matvec

    def __matmul__(self, x):
        return self.matvec(x)

    def diagonal(self, include_noise=True):
        d = np.diag(self.K).copy()
        return d + self.noise if include_noise else d

    def column(self, i):
        return self.K[:, i]


def breakeven_points(p, q):
    """Missing ratios at which latent Kronecker MVM matches dense MVM.

    Solves ``((1-γ) p q)**2 = p**2 q + p q**2`` for time and
    ``((1-γ) p q)**2 = p**2 + q**2`` for memory. Both are clamped to
    ``[0, 1)``; a value of 0 means the latent form never pays off.
    """
    if p < 1 or q < 1:
        raise ValueError("p and q must be positive")
    t = 1.0 - math.sqrt(1.0 / p + 1.0 / q)
    m = 1.0 - math.sqrt(1.0 / p**2 + 1.0 / q**2)
    return max(t, 0.0), max(m, 0.0)
