"""Residual-weighted learning.

Rewards are replaced by residuals of a weighted linear fit.  A negative
residual flips the label, so the problem is OWL on ``(|r_hat|, t a)`` with
``t = +1`` when ``r_hat >= 0`` and ``-1`` otherwise.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import TrialDataset
from .fit import FittedRule, fit_convex_owl, owl_gradient, owl_objective
from .kernels import KernelSpec
from .losses import LossSpec


@dataclass(frozen=True, eq=False)
class ResidualModel:
    intercept: float
    slopes: np.ndarray

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != len(self.slopes):
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {len(self.slopes)}")
        return self.intercept + X @ self.slopes

    def to_dict(self) -> dict:
        return {"intercept": float(self.intercept), "slopes": self.slopes.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ResidualModel":
        return cls(float(d["intercept"]), np.asarray(d["slopes"], dtype=float))


def fit_residual_model(data: TrialDataset) -> ResidualModel:
    """Weighted least squares with weights ``1 / (2 pi_i)``."""
    D = np.column_stack([np.ones(data.n), data.covariates])
    sw = np.sqrt(0.5 / data.propensities)
    beta, _, rank, _ = np.linalg.lstsq(D * sw[:, None], data.rewards * sw, rcond=None)
    if rank < D.shape[1]:
        warnings.warn(f"rank-deficient design (rank {rank} < {D.shape[1]}); "
                      "using the minimum-norm solution", stacklevel=2)
    return ResidualModel(float(beta[0]), beta[1:].copy())


def compute_residuals(model: ResidualModel, data: TrialDataset) -> np.ndarray:
    return data.rewards - model.predict(data.covariates)


def residual_transform(data: TrialDataset, residuals) -> TrialDataset:
    """Map ``(r, a)`` to ``(|r_hat|, t a)``; the OWL path then applies unchanged."""
    res = np.asarray(residuals, dtype=float)
    if res.shape != (data.n,):
        raise ValueError("one residual per row required")
    t = np.where(res >= 0, 1, -1)
    return data.replace(rewards=np.abs(res), treatments=t * data.treatments)


def rwl_objective(v, delta, data: TrialDataset, residuals, loss: LossSpec, gram, lam,
                  case_weights=None) -> float:
    return owl_objective(v, delta, residual_transform(data, residuals), loss, gram, lam, case_weights)


def rwl_gradient(v, delta, data: TrialDataset, residuals, loss: LossSpec, gram, lam,
                 case_weights=None):
    return owl_gradient(v, delta, residual_transform(data, residuals), loss, gram, lam, case_weights)


def fit_convex_rwl(
    data: TrialDataset,
    loss: LossSpec,
    kernel: KernelSpec,
    lam: float,
    init=None,
    *,
    residuals=None,
    gram=None,
    **kw,
) -> FittedRule:
    """Residuals default to those of a model fit on ``data`` itself."""
    if residuals is None:
        residuals = compute_residuals(fit_residual_model(data), data)
    return fit_convex_owl(residual_transform(data, residuals), loss, kernel, lam, init, gram=gram, **kw)
