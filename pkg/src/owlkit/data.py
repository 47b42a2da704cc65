"""Trial data containers and CSV round-tripping."""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def sign(x):
    """Sign with the tie-break ``sign(0) = +1``."""
    return np.where(np.asarray(x) >= 0, 1, -1)


@dataclass(frozen=True, eq=False)
class Oracle:
    """Ground truth attached to synthetic data.

    ``mu_gap`` is ``mu_1(x) - mu_{-1}(x)``; ``outcome`` is ``"normal"`` or
    ``"lognormal"`` and tells contamination how to redraw rewards.
    """

    tau: np.ndarray
    xi: np.ndarray
    d_star: np.ndarray
    mu_gap: np.ndarray
    outcome: str = "normal"

    def subset(self, idx) -> "Oracle":
        return Oracle(self.tau[idx], self.xi[idx], self.d_star[idx], self.mu_gap[idx], self.outcome)


@dataclass(frozen=True, eq=False)
class TrialDataset:
    covariates: np.ndarray
    treatments: np.ndarray
    rewards: np.ndarray
    propensities: np.ndarray
    oracle: Oracle | None = None
    contaminated: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        a = np.asarray(self.treatments).astype(int)
        r = np.asarray(self.rewards, dtype=float)
        pi = np.asarray(self.propensities, dtype=float)
        if pi.ndim == 0:
            pi = np.full(len(a), float(pi))
        n = X.shape[0]
        if not (len(a) == len(r) == len(pi) == n):
            raise ValueError("covariates, treatments, rewards and propensities must have equal length")
        if not np.all(np.isin(a, (-1, 1))):
            raise ValueError("treatments must be in {-1, +1}")
        if not np.all((pi > 0) & (pi < 1)):
            raise ValueError("propensities must lie in (0, 1)")
        cont = self.contaminated
        cont = np.zeros(n, dtype=bool) if cont is None else np.asarray(cont, dtype=bool)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "treatments", a)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "propensities", pi)
        object.__setattr__(self, "contaminated", cont)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def m(self) -> int:
        return self.covariates.shape[1]

    def replace(self, **changes) -> "TrialDataset":
        return dataclasses.replace(self, **changes)

    def subset(self, idx) -> "TrialDataset":
        idx = np.asarray(idx)
        return TrialDataset(
            self.covariates[idx],
            self.treatments[idx],
            self.rewards[idx],
            self.propensities[idx],
            None if self.oracle is None else self.oracle.subset(idx),
            self.contaminated[idx],
        )

    def require_oracle(self) -> Oracle:
        if self.oracle is None:
            raise ValueError("dataset carries no oracle")
        return self.oracle


def write_csv(data: TrialDataset, path, oracle_path=None) -> None:
    """Columns ``x1..xm, a, r, pi``; the oracle goes to a sidecar file."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(data.m)] + ["a", "r", "pi"])
        for i in range(data.n):
            w.writerow([repr(float(x)) for x in data.covariates[i]]
                       + [int(data.treatments[i]), repr(float(data.rewards[i])),
                          repr(float(data.propensities[i]))])
    if data.oracle is not None and oracle_path is not None:
        o = data.oracle
        with Path(oracle_path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["tau", "xi", "d_star", "mu_gap", "outcome"])
            for i in range(data.n):
                w.writerow([repr(float(o.tau[i])), repr(float(o.xi[i])), int(o.d_star[i]),
                            repr(float(o.mu_gap[i])), o.outcome])


def read_csv(path, oracle_path=None) -> TrialDataset:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    xcols = sorted((k for k in rows[0] if k.startswith("x")), key=lambda k: int(k[1:]))
    X = np.array([[float(r[k]) for k in xcols] for r in rows])
    a = np.array([int(float(r["a"])) for r in rows])
    rew = np.array([float(r["r"]) for r in rows])
    pi = np.array([float(r.get("pi") or 0.5) for r in rows])
    oracle = None
    if oracle_path is not None:
        with Path(oracle_path).open(newline="", encoding="utf-8") as fh:
            orows = list(csv.DictReader(fh))
        oracle = Oracle(
            np.array([float(r["tau"]) for r in orows]),
            np.array([float(r["xi"]) for r in orows]),
            np.array([int(r["d_star"]) for r in orows]),
            np.array([float(r["mu_gap"]) for r in orows]),
            orows[0]["outcome"],
        )
    return TrialDataset(X, a, rew, pi, oracle)
