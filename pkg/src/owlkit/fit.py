"""Regularised weighted-surrogate objective in representer coordinates.

With ``f(x) = sum_j v_j k(x, x_j)`` the OWL problem becomes

    (1/n) sum_i w_i r_i / pi_i * T(a_i (K_i v + delta)) + (lam/2) v' K v

which is minimised over ``(v, delta)`` by L-BFGS.  ``delta`` is not penalised.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import TrialDataset, sign
from .kernels import KernelSpec, cross_kernel, gram_matrix
from .lbfgs import LbfgsResult, minimize_lbfgs
from .losses import LossSpec


@dataclass(frozen=True, eq=False)
class FittedRule:
    support: np.ndarray
    coefficients: np.ndarray
    bias: float
    kernel: KernelSpec
    info: dict = field(default_factory=dict, compare=False)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :] if self.support.shape[1] == X.shape[0] else X[:, None]
        return cross_kernel(self.kernel, self.support, X) @ self.coefficients + self.bias

    def predict(self, X) -> np.ndarray:
        return sign(self.decision_function(X))

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "support": self.support.tolist(),
            "coefficients": self.coefficients.tolist(),
            "bias": float(self.bias),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedRule":
        return cls(
            np.asarray(d["support"], dtype=float),
            np.asarray(d["coefficients"], dtype=float),
            float(d["bias"]),
            KernelSpec.from_dict(d["kernel"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FittedRule":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def decide(rule: FittedRule, x) -> tuple[float, int]:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[0] != rule.support.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {rule.support.shape[1]}")
    score = float(rule.decision_function(x[None, :])[0])
    return score, 1 if score >= 0 else -1


# ---------------------------------------------------------------------------
# objective


def _check_lam(lam):
    if not lam > 0:
        raise ValueError("lambda must be positive")


def owl_weights(data: TrialDataset, case_weights=None, *, allow_negative: bool = False) -> np.ndarray:
    """Per-observation weights ``w_i r_i / pi_i``."""
    if not allow_negative and np.any(data.rewards < 0):
        raise ValueError("negative rewards on the OWL path; use the residual (RWL) path instead")
    c = data.rewards / data.propensities
    if case_weights is not None:
        w = np.asarray(case_weights, dtype=float)
        if w.shape != c.shape or np.any(w < 0):
            raise ValueError("case_weights must be nonnegative with one entry per row")
        c = w * c
    return c


def objective_and_gradient(v, delta, c, labels, loss: LossSpec, K, lam):
    """Value and gradient of the weighted objective with labels ``a_i``."""
    n = len(c)
    Kv = K @ v
    margin = labels * (Kv + delta)
    f = float(c @ loss(margin)) / n + 0.5 * lam * float(v @ Kv)
    u = c * loss.derivative(margin) * labels / n
    return f, K @ u + lam * Kv, float(u.sum())


def owl_objective(v, delta, data: TrialDataset, loss: LossSpec, gram, lam, case_weights=None) -> float:
    _check_lam(lam)
    c = owl_weights(data, case_weights)
    return objective_and_gradient(np.asarray(v, float), float(delta), c, data.treatments, loss,
                                  np.asarray(gram), lam)[0]


def owl_gradient(v, delta, data: TrialDataset, loss: LossSpec, gram, lam, case_weights=None):
    """``(d/dv, d/ddelta)`` of :func:`owl_objective`."""
    _check_lam(lam)
    c = owl_weights(data, case_weights)
    _, gv, gd = objective_and_gradient(np.asarray(v, float), float(delta), c, data.treatments,
                                       loss, np.asarray(gram), lam)
    return gv, gd


def solve_weighted(c, labels, loss: LossSpec, K, lam, init=None, *, tol_g=None,
                   max_iter: int = 500) -> tuple[np.ndarray, float, LbfgsResult]:
    """L-BFGS on ``(v, delta)``; ``c`` already contains ``w r / pi``."""
    _check_lam(lam)
    n = len(c)
    if tol_g is None:
        tol_g = 1e-6 * n
    if init is None:
        x0 = np.zeros(n + 1)
    else:
        x0 = np.append(np.asarray(init[0], dtype=float), float(init[1]))

    def fg(x):
        f, gv, gd = objective_and_gradient(x[:-1], x[-1], c, labels, loss, K, lam)
        return f, np.append(gv, gd)

    res = minimize_lbfgs(fg, x0, memory=10, gtol=tol_g, max_iter=max_iter, c1=1e-4, c2=0.9)
    return res.x[:-1].copy(), float(res.x[-1]), res


def fit_convex_owl(
    data: TrialDataset,
    loss: LossSpec,
    kernel: KernelSpec,
    lam: float,
    init=None,
    case_weights=None,
    *,
    gram=None,
    tol_g=None,
    max_iter: int = 500,
) -> FittedRule:
    """Fit an OWL rule for a convex surrogate loss."""
    if not loss.is_convex:
        raise ValueError(f"{loss.name} is not convex; use the IRCO fitter")
    c = owl_weights(data, case_weights)
    K = gram_matrix(kernel, data.covariates) if gram is None else gram
    v, delta, res = solve_weighted(c, data.treatments, loss, K, lam, init, tol_g=tol_g,
                                   max_iter=max_iter)
    return FittedRule(data.covariates, v, delta, kernel,
                      {"converged": res.converged, "n_iter": res.n_iter, "objective": res.fun,
                       "message": res.message})
