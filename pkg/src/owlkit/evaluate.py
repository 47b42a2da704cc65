"""Test-set metrics and tuning-set grid search."""
from __future__ import annotations

import math
import time
import traceback
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import TrialDataset
from .fit import FittedRule, fit_convex_owl
from .irco import irco_owl
from .kernels import KernelSpec, gram_matrix
from .losses import CONCAVE_FAMILIES, get_loss, make_concave
from .rwl import compute_residuals, fit_residual_model, residual_transform
from .simgen import OracleRule

FRAMEWORKS = ("owl", "rwl", "oracle")
CRITERIA = ("value", "excess_risk")


class UndefinedValueError(ValueError):
    """No test row received its assigned treatment."""


class CellTimeout(TimeoutError):
    pass


@dataclass(frozen=True)
class TuningGrid:
    lambdas: tuple = tuple(10.0**k for k in range(-3, 4))
    bandwidths: tuple = tuple(10.0 ** (k / 4) for k in range(-4, 5))
    sigmas: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        object.__setattr__(self, "bandwidths", tuple(float(x) for x in self.bandwidths))
        if self.sigmas is not None:
            object.__setattr__(self, "sigmas", tuple(float(x) for x in self.sigmas))
        for name in ("lambdas", "bandwidths"):
            vals = getattr(self, name)
            if not vals or min(vals) <= 0:
                raise ValueError(f"{name} must be nonempty and positive")
        if self.sigmas is not None:
            s = self.sigmas
            if not s or min(s) <= 0:
                raise ValueError("sigmas must be nonempty and positive")
            if any(b >= a for a, b in zip(s, s[1:])):
                raise ValueError("sigmas must be strictly descending")

    @property
    def size(self) -> int:
        return len(self.lambdas) * len(self.bandwidths) * (len(self.sigmas) if self.sigmas else 1)

    def to_dict(self) -> dict:
        return {"lambdas": list(self.lambdas), "bandwidths": list(self.bandwidths),
                "sigmas": None if self.sigmas is None else list(self.sigmas)}


@dataclass(frozen=True)
class MetricReport:
    value_estimate: float
    misclassification: float
    n_matched: int
    excess_risk: float | None = None


def _predict(rule, X):
    return np.asarray(rule.predict(X))


def misclassification(rule, test: TrialDataset) -> float:
    oracle = test.require_oracle()
    return float(np.mean(_predict(rule, test.covariates) != oracle.d_star))


def value_estimate(rule, test: TrialDataset, *, predictions=None) -> float:
    """Self-normalised inverse-propensity value of ``rule`` on ``test``."""
    if test.n == 0:
        raise ValueError("empty test set")
    pred = _predict(rule, test.covariates) if predictions is None else predictions
    match = pred == test.treatments
    if not np.any(match):
        raise UndefinedValueError("rule matches no test row; value estimate undefined")
    inv = 1.0 / test.propensities[match]
    return float(np.sum(test.rewards[match] * inv) / np.sum(inv))


def empirical_excess_risk(rule, test: TrialDataset, *, predictions=None) -> float:
    oracle = test.require_oracle()
    pred = _predict(rule, test.covariates) if predictions is None else predictions
    return float(np.mean((pred != oracle.d_star) * np.abs(oracle.mu_gap)))


def evaluate_rule(rule, test: TrialDataset) -> MetricReport:
    if np.any(test.contaminated):
        raise ValueError("test set contains contaminated rows")
    pred = _predict(rule, test.covariates)
    n_matched = int(np.sum(pred == test.treatments))
    value = value_estimate(rule, test, predictions=pred) if n_matched else math.nan
    if test.oracle is None:
        return MetricReport(value, math.nan, n_matched)
    return MetricReport(value, float(np.mean(pred != test.oracle.d_star)), n_matched,
                        empirical_excess_risk(rule, test, predictions=pred))


# ---------------------------------------------------------------------------
# methods and grid search


@dataclass(frozen=True)
class MethodSpec:
    """A learner: framework, loss, kernel family and its tuning grid.

    ``loss`` is a convex catalog name or ``"cc:<family>"``; for the latter
    ``grid.sigmas`` (or ``sigma``) gives the concave scale ``sigma``.
    """

    name: str
    framework: str = "rwl"
    loss: str = "binomial"
    kernel: str = "gaussian"
    smoothness: float = 1.5
    grid: TuningGrid = field(default_factory=TuningGrid)
    sigma: float | None = None
    loss_params: tuple = ()

    def __post_init__(self):
        if self.framework not in FRAMEWORKS:
            raise ValueError(f"framework must be one of {FRAMEWORKS}")
        if self.robust:
            if self.loss[3:] not in CONCAVE_FAMILIES:
                raise ValueError(f"unknown concave family in {self.loss!r}")
            if self.grid.sigmas is None and self.sigma is None:
                raise ValueError(f"{self.name}: robust loss needs sigma or grid.sigmas")

    @property
    def robust(self) -> bool:
        return self.loss.startswith("cc:")

    @property
    def sigmas(self) -> tuple:
        if not self.robust:
            return (None,)
        return self.grid.sigmas if self.grid.sigmas is not None else (float(self.sigma),)

    def kernel_spec(self, rho: float) -> KernelSpec:
        return KernelSpec(self.kernel, rho, self.smoothness)

    def to_dict(self) -> dict:
        return {"name": self.name, "framework": self.framework, "loss": self.loss,
                "kernel": self.kernel, "smoothness": self.smoothness, "sigma": self.sigma,
                "grid": self.grid.to_dict(), "loss_params": dict(self.loss_params)}


@dataclass
class CellResult:
    lam: float
    rho: float
    sigma: float | None
    score: float | None
    error: str | None = None
    seconds: float = 0.0


@dataclass
class GridSearchResult:
    best: dict
    rule: object
    score: float
    cells: list


def _prepare(train: TrialDataset, framework: str) -> TrialDataset:
    if framework == "rwl":
        return residual_transform(train, compute_residuals(fit_residual_model(train), train))
    return train


def _tune_score(rule, tune: TrialDataset, criterion: str) -> float:
    if criterion == "value":
        return value_estimate(rule, tune)
    return -empirical_excess_risk(rule, tune)


def _select(cells: list[CellResult]) -> CellResult:
    ok = [c for c in cells if c.score is not None]
    # larger score, then larger sigma, then larger lambda, then smaller rho
    return min(ok, key=lambda c: (-c.score, -(c.sigma if c.sigma is not None else 0.0), -c.lam, c.rho))


def grid_search(
    train: TrialDataset,
    tune: TrialDataset,
    method: MethodSpec,
    grid: TuningGrid | None = None,
    *,
    criterion: str = "value",
    deadline: float | None = None,
    irco_max_iter: int = 50,
    irco_tol: float = 1e-5,
) -> GridSearchResult:
    """Fit every cell on ``train``, score on ``tune`` and keep the best.

    Robust losses scan sigma in descending order: the largest sigma starts
    from the convex fit, smaller ones warm-start from the previous sigma and
    the scan stops after two consecutive drops in tune score.  ``deadline``
    is a ``time.monotonic()`` instant checked between cells.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}")
    if method.framework == "oracle":
        raise ValueError("the oracle method has no hyperparameters")
    grid = method.grid if grid is None else grid
    sigmas = grid.sigmas if (method.robust and grid.sigmas is not None) else method.sigmas
    work = _prepare(train, method.framework)
    base_loss = get_loss("binomial") if method.robust else get_loss(method.loss, **dict(method.loss_params))
    cells: list[CellResult] = []
    rules: dict = {}

    def check_deadline():
        if deadline is not None and time.monotonic() > deadline:
            raise CellTimeout(f"{method.name}: grid search exceeded its time budget "
                              f"after {len(cells)} cells")

    for rho in grid.bandwidths:
        kernel = method.kernel_spec(rho)
        K = gram_matrix(kernel, work.covariates)
        for lam in grid.lambdas:
            check_deadline()
            t0 = time.perf_counter()
            try:
                base = fit_convex_owl(work, base_loss, kernel, lam, gram=K)
            except Exception as e:  # recorded per cell
                for s in sigmas:
                    cells.append(CellResult(lam, rho, s, None, _describe(e)))
                continue
            if not method.robust:
                cell = CellResult(lam, rho, None, None)
                try:
                    cell.score = _tune_score(base, tune, criterion)
                    rules[(lam, rho, None)] = base
                except Exception as e:
                    cell.error = _describe(e)
                cell.seconds = time.perf_counter() - t0
                cells.append(cell)
                continue
            init = (base.coefficients, base.bias)
            prev, drops = None, 0
            for s in sigmas:
                check_deadline()
                cell = CellResult(lam, rho, s, None)
                try:
                    g = make_concave(method.loss[3:], sigma=s)
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        rule, _ = irco_owl(work, g, kernel, lam, irco_max_iter, irco_tol,
                                           init=init, gram=K)
                    init = (rule.coefficients, rule.bias)
                    cell.score = _tune_score(rule, tune, criterion)
                    rules[(lam, rho, s)] = rule
                except Exception as e:
                    cell.error = _describe(e)
                cell.seconds = time.perf_counter() - t0
                t0 = time.perf_counter()
                cells.append(cell)
                if cell.score is not None and prev is not None:
                    drops = drops + 1 if cell.score < prev else 0
                    if drops >= 2:
                        break
                if cell.score is not None:
                    prev = cell.score
    if not any(c.score is not None for c in cells):
        detail = "; ".join(f"(lam={c.lam:g}, rho={c.rho:g}, sigma={c.sigma}): {c.error}" for c in cells[:10])
        raise RuntimeError(f"{method.name}: all {len(cells)} grid cells failed: {detail}")
    best = _select(cells)
    rule = rules[(best.lam, best.rho, best.sigma)]
    return GridSearchResult({"lambda": best.lam, "bandwidth": best.rho, "sigma": best.sigma},
                            rule, best.score, cells)


def _describe(e: Exception) -> str:
    return f"{type(e).__name__}: {e}" if str(e) else traceback.format_exception_only(type(e), e)[-1].strip()


def fit_method(train: TrialDataset, tune: TrialDataset, method: MethodSpec, *, example_id=None,
               smooth=True, criterion="value", deadline=None):
    """Tuned rule for ``method``; the oracle method returns the true rule."""
    if method.framework == "oracle":
        if example_id is None:
            raise ValueError("oracle method needs the scenario example id")
        return OracleRule(example_id, smooth), {}
    res = grid_search(train, tune, method, criterion=criterion, deadline=deadline)
    return res.rule, res.best
