"""Surrogate losses for outcome weighted learning.

Every loss is a :class:`LossSpec`: a vectorised evaluator, its derivative
(one-sided at kinks) and the analytic metadata used by the calibration
engine and the solvers.  Robust losses are built as ``g(s(p))`` where ``s`` is
the binomial loss and ``g`` is one of the concave components in
:class:`ConcaveComponent`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

# IEEE double overflow guard for exp()
P_CLAMP = 700.0

LN2 = math.log(2.0)

CONVEX_LOSSES = (
    "exponential",
    "truncated_quadratic",
    "hinge",
    "dwd",
    "arcx4",
    "binomial",
)
BUILTIN_LOSSES = CONVEX_LOSSES + ("sigmoid", "smoothed_ramp")
CONCAVE_FAMILIES = ("acave", "bcave", "ccave", "tcave")


def _clamp(p):
    return np.clip(np.asarray(p, dtype=float), -P_CLAMP, P_CLAMP)


def binomial(p):
    """Stable ``log(1 + exp(-p))``."""
    p = _clamp(p)
    return np.where(p >= 0, np.log1p(np.exp(-np.abs(p))), -p + np.log1p(np.exp(-np.abs(p))))


def binomial_derivative(p):
    """``-1 / (1 + exp(p))`` without overflow."""
    p = _clamp(p)
    e = np.exp(-np.abs(p))
    return np.where(p >= 0, -e / (1.0 + e), -1.0 / (1.0 + e))


@dataclass(frozen=True)
class LossSpec:
    """A nonnegative margin loss ``T(p)`` with metadata.

    ``kinks`` lists points where ``derivative`` is a one-sided choice; they are
    skipped by finite-difference checks.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    deriv: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    value_at_zero: float
    lipschitz: float
    bound: float
    is_convex: bool
    limit_neg: float
    limit_pos: float
    params: Mapping[str, float] = field(default_factory=dict)
    kinks: tuple[float, ...] = ()

    def evaluate(self, p):
        out = self.func(_clamp(p))
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, p):
        out = self.deriv(_clamp(p))
        return float(out) if np.ndim(out) == 0 else out

    __call__ = evaluate


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def make_builtin_loss(name: str, params: Mapping[str, float] | None = None) -> LossSpec:
    """Build one of the catalog losses by name.

    Parameters: ``gamma`` (dwd, default 1), ``k`` (arcx4 default 2, sigmoid
    default 1).
    """
    params = dict(params or {})
    inf = math.inf

    if name == "exponential":
        return LossSpec(name, lambda p: np.exp(-p), lambda p: -np.exp(-p),
                        1.0, inf, inf, True, inf, 0.0, params)
    if name == "truncated_quadratic":
        return LossSpec(name, lambda p: np.maximum(1.0 - p, 0.0) ** 2,
                        lambda p: -2.0 * np.maximum(1.0 - p, 0.0),
                        1.0, inf, inf, True, inf, 0.0, params)
    if name == "hinge":
        return LossSpec(name, lambda p: np.maximum(1.0 - p, 0.0),
                        lambda p: np.where(p < 1.0, -1.0, 0.0),
                        1.0, 1.0, inf, True, inf, 0.0, params, kinks=(1.0,))
    if name == "dwd":
        gamma = float(params.setdefault("gamma", 1.0))
        _require(gamma > 0, "dwd requires gamma > 0")

        def dwd(p):
            safe = np.maximum(p, gamma)
            return np.where(p >= gamma, 1.0 / safe, (2.0 - p / gamma) / gamma)

        def dwd_d(p):
            safe = np.maximum(p, gamma)
            return np.where(p >= gamma, -1.0 / safe**2, -1.0 / gamma**2)

        return LossSpec(name, dwd, dwd_d, 2.0 / gamma, 1.0 / gamma**2, inf, True,
                        inf, 0.0, params, kinks=(gamma,))
    if name == "arcx4":
        k = float(params.setdefault("k", 2.0))
        _require(k > 1, "arcx4 requires k > 1")
        return LossSpec(
            name,
            lambda p: np.abs(1.0 - p) ** k,
            lambda p: -k * np.abs(1.0 - p) ** (k - 1.0) * np.sign(1.0 - p),
            1.0, inf, inf, True, inf, inf, params, kinks=(1.0,),
        )
    if name == "sigmoid":
        k = float(params.setdefault("k", 1.0))
        _require(k > 0, "sigmoid requires k > 0")
        return LossSpec(name, lambda p: 1.0 - np.tanh(k * p),
                        lambda p: -k / np.cosh(np.minimum(np.abs(k * p), P_CLAMP)) ** 2,
                        1.0, k, 2.0, False, 2.0, 0.0, params)
    if name == "binomial":
        return LossSpec(name, binomial, binomial_derivative, LN2, 1.0, inf, True,
                        inf, 0.0, params)
    if name == "smoothed_ramp":
        return LossSpec(name, _sramp, _sramp_d, 1.0, 2.0, 2.0, False, 2.0, 0.0, params)
    raise ValueError(f"unknown loss {name!r}; expected one of {BUILTIN_LOSSES}")


def _sramp(p):
    return np.select(
        [p >= 1.0, p >= 0.0, p >= -1.0],
        [0.0, (1.0 - p) ** 2, 2.0 - (1.0 + p) ** 2],
        default=2.0,
    )


def _sramp_d(p):
    return np.select(
        [p >= 1.0, p >= 0.0, p >= -1.0],
        [0.0, -2.0 * (1.0 - p), -2.0 * (1.0 + p)],
        default=0.0,
    )


def constant_loss(c: float = 1.0) -> LossSpec:
    """``T(p) = c``; never policy-calibrated.  Used as a negative control."""
    return LossSpec("constant", lambda p: np.full_like(p, c, dtype=float),
                    lambda p: np.zeros_like(p, dtype=float),
                    c, 0.0, c, True, c, c, {"c": c})


# ---------------------------------------------------------------------------
# concave components


# Admissible sigma^2 intervals (lo, hi, hi_inclusive)
SIGMA_SQ_RANGE = {
    "acave": (2 * LN2 / math.pi**2, 4 * LN2 / math.pi**2, False),
    "bcave": (2 * LN2, 2 * LN2 / (1 - 2 ** (-1 / 3)), True),
    "ccave": (0.0, 1.0, False),
    "tcave": (LN2**2, (2 * LN2) ** 2, True),
}


@dataclass(frozen=True)
class ConcaveComponent:
    """Concave nondecreasing ``g`` on ``[0, inf)`` with ``g(0) = 0``."""

    name: str
    sigma_sq: float

    def __post_init__(self):
        if self.name not in CONCAVE_FAMILIES:
            raise ValueError(f"unknown concave family {self.name!r}")
        if not self.sigma_sq > 0:
            raise ValueError("sigma_sq must be positive")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma_sq)

    @property
    def valid_range(self) -> tuple[float, float]:
        lo, hi, _ = SIGMA_SQ_RANGE[self.name]
        return lo, hi

    def in_range(self) -> bool:
        lo, hi, closed = SIGMA_SQ_RANGE[self.name]
        if self.name == "tcave":
            return lo <= self.sigma_sq <= hi
        return lo < self.sigma_sq < hi or (closed and self.sigma_sq == hi)

    @property
    def lipschitz(self) -> float:
        """Sup of g', also the Lipschitz constant of ``g(s(.))``."""
        s2 = self.sigma_sq
        return {"acave": 1 / (2 * s2), "bcave": 6 / s2, "ccave": 1 / s2, "tcave": 1.0}[self.name]

    @property
    def sup(self) -> float:
        return self.sigma if self.name == "tcave" else 1.0

    def evaluate(self, z):
        z = np.asarray(z, dtype=float)
        s2, s = self.sigma_sq, self.sigma
        if self.name == "acave":
            zc = np.minimum(z, s2 * math.pi**2 / 2)
            out = 0.5 * (1.0 - np.cos(np.sqrt(2.0 * np.maximum(zc, 0.0)) / s))
        elif self.name == "bcave":
            u = np.maximum(1.0 - 2.0 * z / s2, 0.0)
            out = 1.0 - u**3
        elif self.name == "ccave":
            out = -np.expm1(-z / s2)
        else:
            out = np.minimum(s, z)
        return float(out) if out.ndim == 0 else out

    def supergradient(self, z):
        z = np.asarray(z, dtype=float)
        if np.any(z < 0):
            raise ValueError("supergradient is defined for z >= 0")
        s2, s = self.sigma_sq, self.sigma
        if self.name == "acave":
            u = np.sqrt(2.0 * z) / s
            # sin(u)/u via sinc; zero once g saturates
            out = np.where(z <= s2 * math.pi**2 / 2, np.sinc(u / math.pi) / (2.0 * s2), 0.0)
        elif self.name == "bcave":
            u = np.maximum(1.0 - 2.0 * z / s2, 0.0)
            out = 6.0 / s2 * u**2
        elif self.name == "ccave":
            out = np.exp(-z / s2) / s2
        else:
            # right derivative at the kink z == sigma
            out = np.where(z < s, 1.0, 0.0)
        return float(out) if out.ndim == 0 else out


def supergradient_weight(g: ConcaveComponent, z) -> float | np.ndarray:
    return g.supergradient(z)


def compose_cc(g: ConcaveComponent) -> LossSpec:
    """Robust loss ``T = g o s`` with ``s`` the binomial loss."""
    if not g.in_range():
        lo, hi = g.valid_range
        warnings.warn(
            f"{g.name} sigma_sq={g.sigma_sq:g} outside ({lo:.4g}, {hi:.4g}); "
            "calibration guarantees may not hold",
            stacklevel=2,
        )

    def func(p):
        return g.evaluate(binomial(p))

    def deriv(p):
        return g.supergradient(binomial(p)) * binomial_derivative(p)

    kinks = ()
    if g.name == "tcave":
        # s(p) == sigma
        kinks = (-math.log(math.expm1(g.sigma)),)
    return LossSpec(
        f"cc:{g.name}",
        func,
        deriv,
        float(g.evaluate(LN2)),
        g.lipschitz,
        g.sup,
        False,
        g.sup,
        0.0,
        {"sigma_sq": g.sigma_sq},
        kinks,
    )


def make_concave(name: str, sigma_sq: float | None = None, sigma: float | None = None) -> ConcaveComponent:
    if (sigma_sq is None) == (sigma is None):
        raise ValueError("give exactly one of sigma_sq or sigma")
    return ConcaveComponent(name, float(sigma_sq) if sigma_sq is not None else float(sigma) ** 2)


def get_loss(name: str, **params) -> LossSpec:
    """Resolve a config-style loss name: ``"binomial"`` or ``"cc:tcave"``.

    For the ``cc:`` family pass ``sigma_sq`` or ``sigma``.
    """
    if name.startswith("cc:"):
        return compose_cc(make_concave(name[3:], params.get("sigma_sq"), params.get("sigma")))
    return make_builtin_loss(name, params)
