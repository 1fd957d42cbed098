"""Kernel families, analytic hyperparameter derivatives and the softplus map.

Every positive hyperparameter ``θ`` is stored through an unconstrained value
``u`` with ``θ = softplus(u)``. Derivatives returned by :meth:`Kernel.grad`
are taken with respect to ``u``; the chain-rule factor ``sigmoid(u)`` is
already applied.

Forms used here (``r`` is the input difference):

* SE:        ``s * exp(-0.5 * sum_d r_d**2 / l_d**2)``
* Periodic:  ``s * exp(-2 * sum_d sin(pi * r_d / rho)**2 / l**2)``
* Product:   elementwise product of one SE and one Periodic kernel
* ICM:       ``B[t, t']`` with ``B = L @ L.T`` for lower-triangular ``L``
"""
from __future__ import annotations

import json
import math

import numpy as np
from scipy.special import expit

from .errors import ShapeMismatch

_SOFTPLUS_LINEAR = 30.0


def softplus(x):
    x = np.asarray(x, dtype=float)
    out = np.where(x > _SOFTPLUS_LINEAR, x, np.log1p(np.exp(np.minimum(x, _SOFTPLUS_LINEAR))))
    return out if out.ndim else float(out)


def inv_softplus(y):
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("inv_softplus requires positive values")
    # expm1 keeps precision for small y; large y is the identity to double precision
    out = np.where(y > _SOFTPLUS_LINEAR, y + np.log(-np.expm1(-np.minimum(y, 700.0))),
                   np.log(np.expm1(np.minimum(y, _SOFTPLUS_LINEAR))))
    return out if out.ndim else float(out)


def softplus_grad(x):
    return expit(x)


to_constrained = softplus
to_unconstrained = inv_softplus


def _check_inputs(X, dim, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] != dim:
        raise ShapeMismatch(f"{name} must have {dim} column(s), got shape {X.shape}")
    return X


class Kernel:
    """Base class. Subclasses are immutable; use :meth:`with_raw` to update."""

    family = ""
    input_dim = 1

    @property
    def n_params(self):
        return self.raw().size

    def raw(self):
        raise NotImplementedError

    def with_raw(self, raw):
        raise NotImplementedError

    def param_names(self):
        raise NotImplementedError

    def matrix(self, X1, X2=None):
        raise NotImplementedError

    def diag(self, X):
        X = _check_inputs(X, self.input_dim)
        return np.array([self.matrix(x[None], x[None])[0, 0] for x in X])

    def grad(self, X, index):
        """``dK(X, X) / du_index`` for the unconstrained parameter ``index``."""
        return self.grads(X)[index]

    def grads(self, X):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    def to_json(self):
        return json.dumps(self.to_dict())

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"


class SEKernel(Kernel):
    """Squared exponential kernel with one lengthscale per input dimension."""

    family = "se"

    def __init__(self, lengthscales=None, outputscale=None, dims=1):
        default = softplus(0.0)
        if lengthscales is None:
            lengthscales = np.full(dims, default)
        self.lengthscales = np.atleast_1d(np.asarray(lengthscales, dtype=float)).copy()
        self.outputscale = float(default if outputscale is None else outputscale)
        if np.any(self.lengthscales <= 0) or self.outputscale <= 0:
            raise ValueError("SE lengthscales and outputscale must be positive")
        self.input_dim = self.lengthscales.size

    def raw(self):
        return np.append(inv_softplus(self.lengthscales), inv_softplus(self.outputscale))

    def with_raw(self, raw):
        raw = np.asarray(raw, dtype=float)
        return SEKernel(softplus(raw[:-1]), softplus(raw[-1]))

    def param_names(self):
        return [f"lengthscale[{i}]" for i in range(self.input_dim)] + ["outputscale"]

    def _scaled_sqdist(self, X1, X2):
        A = X1 / self.lengthscales
        B = X2 / self.lengthscales
        d2 = np.zeros((A.shape[0], B.shape[0]))
        for d in range(A.shape[1]):
            d2 += (A[:, d, None] - B[None, :, d]) ** 2
        return d2

    def matrix(self, X1, X2=None):
        X1 = _check_inputs(X1, self.input_dim, "X1")
        X2 = X1 if X2 is None else _check_inputs(X2, self.input_dim, "X2")
        return self.outputscale * np.exp(-0.5 * self._scaled_sqdist(X1, X2))

    def diag(self, X):
        X = _check_inputs(X, self.input_dim)
        return np.full(X.shape[0], self.outputscale)

    def grads(self, X):
        X = _check_inputs(X, self.input_dim)
        K = self.matrix(X)
        raw = self.raw()
        out = []
        for d, ell in enumerate(self.lengthscales):
            r2 = (X[:, d, None] - X[None, :, d]) ** 2
            out.append(K * r2 / ell**3 * softplus_grad(raw[d]))
        out.append(K / self.outputscale * softplus_grad(raw[-1]))
        return out

    def to_dict(self):
        return {"family": "se", "lengthscales": self.lengthscales.tolist(), "outputscale": self.outputscale}


class PeriodicKernel(Kernel):
    """Exponentiated sine-squared kernel, summed over input dimensions."""

    family = "periodic"

    def __init__(self, lengthscale=None, period=None, outputscale=None, dims=1):
        default = softplus(0.0)
        self.lengthscale = float(default if lengthscale is None else lengthscale)
        self.period = float(default if period is None else period)
        self.outputscale = float(default if outputscale is None else outputscale)
        if min(self.lengthscale, self.period, self.outputscale) <= 0:
            raise ValueError("periodic kernel parameters must be positive")
        self.input_dim = int(dims)

    def raw(self):
        return inv_softplus(np.array([self.lengthscale, self.period, self.outputscale]))

    def with_raw(self, raw):
        ell, rho, s = softplus(np.asarray(raw, dtype=float))
        return PeriodicKernel(ell, rho, s, dims=self.input_dim)

    def param_names(self):
        return ["lengthscale", "period", "outputscale"]

    def _diffs(self, X1, X2):
        return X1[:, None, :] - X2[None, :, :]

    def matrix(self, X1, X2=None):
        X1 = _check_inputs(X1, self.input_dim, "X1")
        X2 = X1 if X2 is None else _check_inputs(X2, self.input_dim, "X2")
        u = (np.sin(math.pi * self._diffs(X1, X2) / self.period) ** 2).sum(-1)
        return self.outputscale * np.exp(-2.0 * u / self.lengthscale**2)

    def diag(self, X):
        X = _check_inputs(X, self.input_dim)
        return np.full(X.shape[0], self.outputscale)

    def grads(self, X):
        X = _check_inputs(X, self.input_dim)
        r = self._diffs(X, X)
        arg = math.pi * r / self.period
        u = (np.sin(arg) ** 2).sum(-1)
        ell, rho, s = self.lengthscale, self.period, self.outputscale
        K = s * np.exp(-2.0 * u / ell**2)
        sig = softplus_grad(self.raw())
        d_ell = K * 4.0 * u / ell**3
        # d/drho sin^2(pi r / rho) = -sin(2 pi r / rho) * pi r / rho^2
        du_drho = -(np.sin(2.0 * arg) * math.pi * r / rho**2).sum(-1)
        d_rho = K * (-2.0 / ell**2) * du_drho
        return [d_ell * sig[0], d_rho * sig[1], K / s * sig[2]]

    def to_dict(self):
        return {"family": "periodic", "lengthscale": self.lengthscale, "period": self.period,
                "outputscale": self.outputscale, "dims": self.input_dim}


class ProductKernel(Kernel):
    """SE x Periodic on the same inputs (e.g. a trend times a season)."""

    family = "product"

    def __init__(self, se: SEKernel | None = None, periodic: PeriodicKernel | None = None, dims=1):
        self.se = se or SEKernel(dims=dims)
        self.periodic = periodic or PeriodicKernel(dims=self.se.input_dim)
        if self.se.input_dim != self.periodic.input_dim:
            raise ShapeMismatch("product factors must share their input dimension")
        self.input_dim = self.se.input_dim

    def raw(self):
        return np.concatenate([self.se.raw(), self.periodic.raw()])

    def with_raw(self, raw):
        m = self.se.n_params
        return ProductKernel(self.se.with_raw(raw[:m]), self.periodic.with_raw(raw[m:]))

    def param_names(self):
        return [f"se.{n}" for n in self.se.param_names()] + [f"periodic.{n}" for n in self.periodic.param_names()]

    def matrix(self, X1, X2=None):
        return self.se.matrix(X1, X2) * self.periodic.matrix(X1, X2)

    def diag(self, X):
        return self.se.diag(X) * self.periodic.diag(X)

    def grads(self, X):
        Ks, Kp = self.se.matrix(X), self.periodic.matrix(X)
        return [g * Kp for g in self.se.grads(X)] + [Ks * g for g in self.periodic.grads(X)]

    def to_dict(self):
        return {"family": "product", "se": self.se.to_dict(), "periodic": self.periodic.to_dict()}


class ICMKernel(Kernel):
    """Intrinsic coregionalization over ``num_tasks`` discrete tasks.

    Inputs are integer task indices (one column). ``factor`` is the
    lower-triangular ``L`` of ``B = L L^T``; its diagonal is kept positive
    through softplus and the strictly lower entries are unconstrained.
    """

    family = "icm"

    def __init__(self, num_tasks=None, factor=None):
        if factor is None:
            if num_tasks is None:
                raise ValueError("ICMKernel needs num_tasks or factor")
            factor = np.eye(num_tasks)
        L = np.tril(np.asarray(factor, dtype=float))
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise ShapeMismatch("ICM factor must be square")
        if np.any(np.diag(L) <= 0):
            raise ValueError("ICM factor needs a positive diagonal")
        self.factor = L
        self.num_tasks = L.shape[0]
        self._tril = np.tril_indices(self.num_tasks)

    @property
    def coregionalization(self):
        return self.factor @ self.factor.T

    def raw(self):
        L = self.factor.copy()
        idx = np.arange(self.num_tasks)
        L[idx, idx] = inv_softplus(L[idx, idx])
        return L[self._tril]

    def with_raw(self, raw):
        L = np.zeros((self.num_tasks, self.num_tasks))
        L[self._tril] = raw
        idx = np.arange(self.num_tasks)
        L[idx, idx] = softplus(L[idx, idx])
        return ICMKernel(factor=L)

    def param_names(self):
        return [f"factor[{a},{b}]" for a, b in zip(*self._tril)]

    def _tasks(self, X, name="X"):
        X = _check_inputs(X, 1, name)[:, 0]
        t = np.rint(X).astype(np.int64)
        if np.any(t != X) or np.any(t < 0) or np.any(t >= self.num_tasks):
            raise ShapeMismatch(f"{name} must hold integer task indices in [0, {self.num_tasks})")
        return t

    def matrix(self, X1, X2=None):
        t1 = self._tasks(X1, "X1")
        t2 = t1 if X2 is None else self._tasks(X2, "X2")
        return self.coregionalization[np.ix_(t1, t2)]

    def diag(self, X):
        t = self._tasks(X)
        return np.einsum("ij,ij->i", self.factor, self.factor)[t]

    def grads(self, X):
        t = self._tasks(X)
        raw = self.raw()
        out = []
        for i, (a, b) in enumerate(zip(*self._tril)):
            E = np.zeros_like(self.factor)
            E[a, b] = 1.0
            dB = E @ self.factor.T + self.factor @ E.T
            if a == b:
                dB = dB * softplus_grad(raw[i])
            out.append(dB[np.ix_(t, t)])
        return out

    def to_dict(self):
        return {"family": "icm", "num_tasks": self.num_tasks, "factor": self.factor.tolist()}


def kernel_from_dict(d, dims=None):
    """Build a kernel from its JSON form.

    Missing hyperparameters take the neutral default ``softplus(0)``; ``dims``
    fills in the input dimension when the dict does not give one.
    """
    d = dict(d)
    family = d.get("family", "").lower()
    if family == "se":
        ls = d.get("lengthscales", d.get("lengthscale"))
        return SEKernel(None if ls is None else np.atleast_1d(ls), d.get("outputscale"),
                        dims=d.get("dims", dims or 1))
    if family == "periodic":
        return PeriodicKernel(d.get("lengthscale"), d.get("period"), d.get("outputscale"),
                              dims=d.get("dims", dims or 1))
    if family == "product":
        se = kernel_from_dict({"family": "se", **d.get("se", {})}, dims=d.get("dims", dims))
        per = kernel_from_dict({"family": "periodic", **d.get("periodic", {})}, dims=se.input_dim)
        return ProductKernel(se, per)
    if family == "icm":
        return ICMKernel(d.get("num_tasks"), d.get("factor"))
    raise ValueError(f"unknown kernel family {family!r}")


def eval_matrix(kernel: Kernel, X1, X2=None):
    return kernel.matrix(X1, X2)


def eval_diag(kernel: Kernel, X):
    return kernel.diag(X)


def grad_matrix(kernel: Kernel, X, param_index):
    if not 0 <= param_index < kernel.n_params:
        raise IndexError(f"parameter index {param_index} out of range for {kernel.n_params} parameters")
    return kernel.grads(X)[param_index]
