"""Iteratively reweighted convex optimisation for ``T = g o s`` losses.

Concavity of ``g`` gives ``g(z) <= g(z0) + g'(z0) (z - z0)``, so each
weighted convex fit with loss ``s`` and weights ``w_i = g'(z_i)`` minimises a
majoriser of the true objective.  The true objective therefore never
increases as long as every inner fit does not increase its own objective,
which holds because the inner solver is warm-started and monotone.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import TrialDataset
from .fit import FittedRule, objective_and_gradient, owl_weights, solve_weighted
from .kernels import KernelSpec, gram_matrix
from .lbfgs import NonFiniteObjective
from .losses import ConcaveComponent, binomial, compose_cc, make_builtin_loss
from .rwl import compute_residuals, fit_residual_model, residual_transform


class IrcoError(RuntimeError):
    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"inner solve failed at IRCO iteration {iteration}: {cause}")
        self.iteration = iteration


@dataclass
class IrcoState:
    """``iteration`` counts convex solves; iteration 1 is the plain ``s`` fit."""

    v: np.ndarray
    delta: float
    weights: np.ndarray
    objective_trace: list = field(default_factory=list)
    weight_quantiles: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    iteration: int = 0
    converged: bool = False

    def dump_trace(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "w_min", "w_q25", "w_median", "w_q75", "w_max",
                        "inner_iterations"])
            for j, (obj, q, k) in enumerate(zip(self.objective_trace, self.weight_quantiles,
                                                self.inner_iterations), start=1):
                w.writerow([j, repr(obj)] + [repr(x) for x in q] + [k])


def update_weights_owl(g: ConcaveComponent, rule_scores, treatments) -> np.ndarray:
    """``w_i = g'(s(a_i (f_i + delta)))``."""
    scores = np.asarray(rule_scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    return np.asarray(g.supergradient(binomial(np.asarray(treatments) * scores)), dtype=float)


def _quantiles(w):
    return tuple(float(x) for x in np.quantile(w, [0.0, 0.25, 0.5, 0.75, 1.0]))


def irco_owl(
    data: TrialDataset,
    g: ConcaveComponent,
    kernel: KernelSpec,
    lam: float,
    max_iter: int = 50,
    tol: float = 1e-5,
    *,
    init=None,
    gram=None,
    tol_g=None,
    inner_max_iter: int = 500,
) -> tuple[FittedRule, IrcoState]:
    """Majorisation-minimisation for the robust OWL objective.

    Without ``init`` the first iterate is the convex fit with loss ``s``;
    with ``init`` that iterate is taken as given (warm start across a grid).
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    K = gram_matrix(kernel, data.covariates) if gram is None else gram
    s = make_builtin_loss("binomial")
    true_loss = compose_cc(g)
    c = owl_weights(data)
    a = data.treatments
    n = data.n

    def true_obj(v, delta):
        return objective_and_gradient(v, delta, c, a, true_loss, K, lam)[0]

    w = np.ones(n)
    if init is None:
        try:
            v, delta, res = solve_weighted(c, a, s, K, lam, None, tol_g=tol_g, max_iter=inner_max_iter)
        except NonFiniteObjective as e:
            raise IrcoError(1, e) from e
        inner = res.n_iter
    else:
        v, delta, inner = np.asarray(init[0], dtype=float).copy(), float(init[1]), 0
    state = IrcoState(v, delta, w, [true_obj(v, delta)], [_quantiles(w)], [inner], 1)

    for j in range(2, max_iter + 1):
        w = update_weights_owl(g, K @ v + delta, a)
        try:
            v_new, d_new, res = solve_weighted(c * w, a, s, K, lam, (v, delta), tol_g=tol_g,
                                               max_iter=inner_max_iter)
        except NonFiniteObjective as e:
            raise IrcoError(j, e) from e
        change = max(float(np.max(np.abs(v_new - v))), abs(d_new - delta))
        v, delta = v_new, d_new
        state.objective_trace.append(true_obj(v, delta))
        state.weight_quantiles.append(_quantiles(w))
        state.inner_iterations.append(res.n_iter)
        state.iteration = j
        state.weights = w
        if change <= tol:
            state.converged = True
            break
    state.v, state.delta = v, delta
    rule = FittedRule(data.covariates, v, delta, kernel,
                      {"converged": state.converged, "n_iter": state.iteration,
                       "objective": state.objective_trace[-1]})
    return rule, state


def irco_rwl(
    data: TrialDataset,
    g: ConcaveComponent,
    kernel: KernelSpec,
    lam: float,
    max_iter: int = 50,
    tol: float = 1e-5,
    *,
    residuals=None,
    **kw,
) -> tuple[FittedRule, IrcoState]:
    """IRCO on residuals: margins ``t a (f + delta)``, weights ``|r_hat| / pi``."""
    if residuals is None:
        residuals = compute_residuals(fit_residual_model(data), data)
    return irco_owl(residual_transform(data, residuals), g, kernel, lam, max_iter, tol, **kw)
