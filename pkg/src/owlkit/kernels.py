"""Matérn, Gaussian and linear kernels.

The Matérn family uses the argument ``u = sqrt(2 alpha) d / rho`` so that
``alpha = 0.5`` is the exponential kernel ``exp(-d/rho)`` and
``alpha -> inf`` tends to ``exp(-d^2 / (2 rho^2))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import gammaln, kve

FAMILIES = ("matern", "gaussian", "linear")


@dataclass(frozen=True)
class KernelSpec:
    family: str
    bandwidth: float = 1.0
    smoothness: float = 1.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.family == "matern" and not self.smoothness > 0:
            raise ValueError("matern smoothness must be positive")

    def with_bandwidth(self, rho: float) -> "KernelSpec":
        return KernelSpec(self.family, float(rho), self.smoothness)

    def to_dict(self) -> dict:
        return {"family": self.family, "bandwidth": self.bandwidth, "smoothness": self.smoothness}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["family"], float(d.get("bandwidth", 1.0)), float(d.get("smoothness", 1.5)))


def exponential_kernel(d, rho):
    return np.exp(-np.asarray(d, dtype=float) / rho)


def matern32_kernel(d, rho):
    u = math.sqrt(3.0) * np.asarray(d, dtype=float) / rho
    return (1.0 + u) * np.exp(-u)


def matern52_kernel(d, rho):
    u = math.sqrt(5.0) * np.asarray(d, dtype=float) / rho
    return (1.0 + u + u * u / 3.0) * np.exp(-u)


def matern_bessel(d, rho, alpha):
    """General Matérn via the modified Bessel function, any ``alpha > 0``."""
    d = np.asarray(d, dtype=float)
    u = math.sqrt(2.0 * alpha) * d / rho
    out = np.ones_like(u)
    pos = u > 0
    up = u[pos]
    # log-space; kve(a, u) = K_a(u) exp(u)
    with np.errstate(divide="ignore"):
        logk = ((1.0 - alpha) * math.log(2.0) - gammaln(alpha) + alpha * np.log(up)
                + np.log(kve(alpha, up)) - up)
    out[pos] = np.exp(logk)
    return out


_CLOSED_FORMS = {0.5: exponential_kernel, 1.5: matern32_kernel, 2.5: matern52_kernel}


def kernel_from_distance(spec: KernelSpec, d):
    if spec.family == "gaussian":
        d = np.asarray(d, dtype=float)
        return np.exp(-(d * d) / (2.0 * spec.bandwidth**2))
    if spec.family == "matern":
        closed = _CLOSED_FORMS.get(spec.smoothness)
        if closed is not None:
            return closed(d, spec.bandwidth)
        return matern_bessel(d, spec.bandwidth, spec.smoothness)
    raise ValueError("linear kernel is not distance based")


def _as_rows(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("covariates must be a vector or a 2-D array")
    return X


def cross_kernel(spec: KernelSpec, X_train, X_new) -> np.ndarray:
    """``K[i, j] = k(x_new_i, x_train_j)``, shape ``(m, n)``."""
    A, B = _as_rows(X_new), _as_rows(X_train)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if spec.family == "linear":
        return A @ B.T
    if spec.family == "gaussian":
        return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * spec.bandwidth**2))
    return kernel_from_distance(spec, cdist(A, B))


def gram_matrix(spec: KernelSpec, X) -> np.ndarray:
    X = _as_rows(X)
    if X.shape[0] < 1:
        raise ValueError("need at least one point")
    K = cross_kernel(spec, X, X)
    K = 0.5 * (K + K.T)
    if spec.family != "linear":
        np.fill_diagonal(K, 1.0)
    return K


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(cross_kernel(spec, y[None, :], x[None, :])[0, 0])
