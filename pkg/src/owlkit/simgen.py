"""Synthetic randomized trials with known optimal rules.

Covariates are i.i.d. ``U[-1, 1]``, ``P(A = 1) = 1/2``.  Example 1 draws
``ln R ~ N(tau + xi a, 1)`` in one dimension; Examples 2-5 draw
``R ~ N(tau + xi a, 1)`` and use only ``x1..x4``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .data import Oracle, TrialDataset, sign

# stream ids for SeedSequence keys
STREAM_DATA = 0
STREAM_CONTAMINATION = 1


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a tuple of nonnegative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ScenarioSpec:
    example_id: int
    n: int
    m: int = 1
    smooth: bool = True
    contamination_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.example_id not in (1, 2, 3, 4, 5):
            raise ValueError(f"example_id must be 1..5, got {self.example_id}")
        if self.example_id == 1 and self.m != 1:
            raise ValueError("example 1 is one-dimensional (m = 1)")
        if self.example_id > 1 and self.m < 4:
            raise ValueError(f"example {self.example_id} needs m >= 4")
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 0.0 <= self.contamination_rate < 1.0:
            raise ValueError("contamination_rate must lie in [0, 1)")

    def replace(self, **kw) -> "ScenarioSpec":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def tau_xi(example_id: int, X, smooth: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Baseline ``tau(x)`` and interaction ``xi(x)`` for each row of ``X``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    x1 = X[:, 0]
    if example_id == 1:
        xi = np.sin(4 * math.pi * x1)
        return x1.copy(), xi if smooth else sign(xi).astype(float)
    x2, x3, x4 = X[:, 1], X[:, 2], X[:, 3]
    if example_id in (2, 3):
        tau = 1 + x1 + x2 + 2 * x3 + 0.5 * x4
        xi = 0.146 + np.sin(4 * math.pi * x1) + x2**2
        return tau, xi if example_id == 2 else sign(xi).astype(float)
    if example_id in (4, 5):
        tau = 1 + x1**2 + x2**2 + 2 * x3**2 + 0.5 * x4**2
        if example_id == 4:
            return tau, 3.8 * (0.8 - x1**2 - x2**2)
        return tau, sign(0.8 - x1**2 - x2**2).astype(float)
    raise ValueError(f"unknown example {example_id}")


def mean_gap(example_id: int, tau, xi) -> np.ndarray:
    """``mu_1(x) - mu_{-1}(x)``."""
    if example_id == 1:
        return np.exp(tau + 0.5) * (np.exp(xi) - np.exp(-xi))
    return 2.0 * np.asarray(xi)


def make_oracle(example_id: int, X, smooth: bool = True) -> Oracle:
    tau, xi = tau_xi(example_id, X, smooth)
    return Oracle(tau, xi, sign(xi), mean_gap(example_id, tau, xi),
                  "lognormal" if example_id == 1 else "normal")


def _draw_rewards(rng, oracle: Oracle, a) -> np.ndarray:
    z = rng.normal(oracle.tau + oracle.xi * a, 1.0)
    return np.exp(z) if oracle.outcome == "lognormal" else z


def generate(spec: ScenarioSpec) -> TrialDataset:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, STREAM_DATA]))
    X = rng.uniform(-1.0, 1.0, size=(spec.n, spec.m))
    a = np.where(rng.random(spec.n) < 0.5, 1, -1)
    oracle = make_oracle(spec.example_id, X, spec.smooth)
    r = _draw_rewards(rng, oracle, a)
    data = TrialDataset(X, a, r, np.full(spec.n, 0.5), oracle)
    if spec.contamination_rate > 0:
        data = contaminate(data, spec.contamination_rate, derive_seed(spec.seed, STREAM_CONTAMINATION))
    return data


def contaminate(data: TrialDataset, rate: float, seed: int) -> TrialDataset:
    """Redraw ``floor(rate n)`` rewards from the decision-inverted model."""
    oracle = data.require_oracle()
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must lie in [0, 1)")
    k = math.floor(rate * data.n)
    if k == 0:
        return data
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    idx = np.sort(rng.choice(data.n, size=k, replace=False))
    sub = oracle.subset(idx)
    r = data.rewards.copy()
    r[idx] = _draw_rewards(rng, Oracle(sub.tau, -sub.xi, sub.d_star, sub.mu_gap, sub.outcome),
                           data.treatments[idx])
    mask = data.contaminated.copy()
    mask[idx] = True
    return data.replace(rewards=r, contaminated=mask)


def flip_treatments(data: TrialDataset, rate: float, seed: int) -> TrialDataset:
    """Negate ``floor(rate n)`` treatments; rewards untouched."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    k = math.floor(rate * data.n)
    if k == 0:
        return data
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    idx = rng.choice(data.n, size=k, replace=False)
    a = data.treatments.copy()
    a[idx] = -a[idx]
    mask = data.contaminated.copy()
    mask[idx] = True
    return data.replace(treatments=a, contaminated=mask)


@dataclass(frozen=True)
class OracleRule:
    """The true rule ``sign(xi(x))`` with the same interface as a fitted rule."""

    example_id: int
    smooth: bool = True

    def decision_function(self, X) -> np.ndarray:
        return tau_xi(self.example_id, X, self.smooth)[1]

    def predict(self, X) -> np.ndarray:
        return sign(self.decision_function(X))
