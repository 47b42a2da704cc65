"""Conditional T-risks, the Psi-transform and policy-calibration checks.

All infima over the classifier value ``p`` are numerical: a coarse scan of
``[-P, P]`` localises the basin (the conditional risk of a robust loss is not
convex), a vectorised golden-section search refines it, and the value is
finally compared with the limits at the open ends of the domain.  Infima over
``S = mu_1 + mu_{-1}`` use a scan followed by two zoom passes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .losses import LossSpec

P_MAX = 50.0
N_SCAN = 512
N_GOLDEN = 32
N_OUTER = 256
N_ZOOM = 33
N_ZOOM_PASSES = 2
CHUNK = 8192
GOLD = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ConditionalRiskQuery:
    mu_plus: float
    mu_minus: float
    M: float = math.inf

    def __post_init__(self):
        if self.mu_plus < 0 or self.mu_minus < 0:
            raise ValueError("conditional means must be nonnegative")
        if not self.M > 0:
            raise ValueError("M must be positive")
        if self.mu_plus + self.mu_minus > self.M * (1 + 1e-12):
            raise ValueError("mu_plus + mu_minus exceeds M")


@dataclass(frozen=True)
class PsiCurve:
    M: float
    grid: np.ndarray
    tilde_values: np.ndarray
    convex_values: np.ndarray

    def __call__(self, v):
        """Piecewise-linear interpolation of the convex Psi."""
        return np.interp(v, self.grid, self.convex_values)


@dataclass
class CalibrationReport:
    loss: str
    M: float
    n_samples: int
    margin_floor: float
    min_gap: float
    argmin_mu: tuple[float, float]
    passed: bool
    # grid evidence only: Psi(v) > 0 on every grid point v > 0
    positive_definite_evidence: bool | None = None

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "M": self.M,
            "n_samples": self.n_samples,
            "margin_floor": self.margin_floor,
            "min_gap": self.min_gap,
            "argmin_mu": list(self.argmin_mu),
            "passed": self.passed,
            "positive_definite_evidence": self.positive_definite_evidence,
        }


def _mu(q) -> tuple[float, float]:
    if isinstance(q, ConditionalRiskQuery):
        return q.mu_plus, q.mu_minus
    mu1, mum1 = q
    ConditionalRiskQuery(float(mu1), float(mum1))
    return float(mu1), float(mum1)


def _wmul(w, t):
    """``w * t`` with ``0 * inf = 0``."""
    w = np.asarray(w, dtype=float)
    if math.isinf(t):
        return np.where(w > 0, math.inf, 0.0)
    return w * t


def conditional_risk(loss: LossSpec, p, q) -> float:
    mu1, mum1 = _mu(q)
    return mu1 * loss(p) + mum1 * loss(-np.asarray(p, dtype=float))


class _RiskMinimizer:
    """Batched infimum of ``p -> mu1 T(p) + mum1 T(-p)`` over an interval.

    ``side`` selects the domain: 0 -> R, -1 -> p <= 0, +1 -> p >= 0.
    """

    def __init__(self, loss: LossSpec, p_max: float = P_MAX, n_scan: int = N_SCAN,
                 n_golden: int = N_GOLDEN):
        self.loss = loss
        self.p_max = p_max
        self.n_golden = n_golden
        self._grids = {}
        # minima of piecewise losses often sit exactly on a kink
        kinks = np.array([s * k for k in getattr(loss, "kinks", ()) for s in (1.0, -1.0)])
        for side, (lo, hi) in {0: (-p_max, p_max), -1: (-p_max, 0.0), 1: (0.0, p_max)}.items():
            p = np.linspace(lo, hi, n_scan)
            p = np.unique(np.concatenate([p, kinks[(kinks >= lo) & (kinks <= hi)]]))
            self._grids[side] = (p, np.stack([loss(p), loss(-p)]))

    def _limit(self, mu1, mum1, at_pos_inf: bool):
        t_pos, t_neg = self.loss.limit_pos, self.loss.limit_neg
        if at_pos_inf:
            return _wmul(mu1, t_pos) + _wmul(mum1, t_neg)
        return _wmul(mu1, t_neg) + _wmul(mum1, t_pos)

    def minimize(self, mu1, mum1, side: int):
        mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
        mum1 = np.atleast_1d(np.asarray(mum1, dtype=float))
        p, tpm = self._grids[side]
        C = np.stack([mu1, mum1], axis=1) @ tpm
        idx = np.argmin(C, axis=1)
        rows = np.arange(len(mu1))
        best = C[rows, idx]
        arg = p[idx]

        a = p[np.maximum(idx - 1, 0)]
        b = p[np.minimum(idx + 1, len(p) - 1)]

        def f(x):
            return mu1 * self.loss(x) + mum1 * self.loss(-x)

        c = b - GOLD * (b - a)
        d = a + GOLD * (b - a)
        fc, fd = f(c), f(d)
        for _ in range(self.n_golden):
            left = fc < fd
            a, b = np.where(left, a, c), np.where(left, d, b)
            x = np.where(left, b - GOLD * (b - a), a + GOLD * (b - a))
            fx = f(x)
            c, d = np.where(left, x, d), np.where(left, c, x)
            fc, fd = np.where(left, fx, fd), np.where(left, fc, fx)
        mid = 0.5 * (a + b)
        fm = f(mid)
        better = fm < best
        best = np.where(better, fm, best)
        arg = np.where(better, mid, arg)

        if side in (0, 1):
            lim = self._limit(mu1, mum1, True)
            better = lim < best
            best = np.where(better, lim, best)
            arg = np.where(better, math.inf, arg)
        if side in (0, -1):
            lim = self._limit(mu1, mum1, False)
            better = lim < best
            best = np.where(better, lim, best)
            arg = np.where(better, -math.inf, arg)
        return best, arg

    def cstar(self, mu1, mum1):
        return self.minimize(mu1, mum1, 0)

    def cminus(self, mu1, mum1):
        mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
        mum1 = np.atleast_1d(np.asarray(mum1, dtype=float))
        val = np.empty(len(mu1))
        arg = np.empty(len(mu1))
        for side, mask in ((-1, mu1 > mum1), (1, mu1 < mum1), (0, mu1 == mum1)):
            if mask.any():
                val[mask], arg[mask] = self.minimize(mu1[mask], mum1[mask], side)
        return val, arg


def optimal_conditional_risk(loss: LossSpec, q) -> tuple[float, float]:
    """``inf_p C_T(p, mu)`` and a minimiser (possibly +-inf)."""
    mu1, mum1 = _mu(q)
    val, arg = _RiskMinimizer(loss).cstar(mu1, mum1)
    _check_finite(loss, val)
    return float(val[0]), float(arg[0])


def wrong_sign_conditional_risk(loss: LossSpec, q) -> float:
    """Infimum over the closed half-line ``p * sign(mu1 - mum1) <= 0``."""
    mu1, mum1 = _mu(q)
    val, _ = _RiskMinimizer(loss).cminus(mu1, mum1)
    _check_finite(loss, val)
    return float(val[0])


def _check_finite(loss, val):
    if not np.all(np.isfinite(val)):
        raise FloatingPointError(f"non-finite conditional risk for loss {loss.name}")


def _mu_of(S, v):
    return (S + v) / 2.0, np.maximum((S - v) / 2.0, 0.0)


def _check_v(v, M):
    if not M > 0:
        raise ValueError("M must be positive")
    if v < 0 or v > M * (1 + 1e-12):
        raise ValueError(f"v={v} outside [0, M={M}]")
    return min(float(v), float(M))


def _gap(mz: _RiskMinimizer, S, v, reduced: bool):
    """``C^- - C^*`` (or ``S*T(0) - C^*`` when reduced) at ``mu = mu(S, v)``."""
    out = np.empty(len(S))
    for lo in range(0, len(S), CHUNK):
        sl = slice(lo, lo + CHUNK)
        mu1, mum1 = _mu_of(S[sl], v[sl])
        cs, _ = mz.cstar(mu1, mum1)
        if reduced:
            cm = S[sl] * mz.loss.value_at_zero
        else:
            cm, _ = mz.cminus(mu1, mum1)
        if not (np.all(np.isfinite(cm)) and np.all(np.isfinite(cs))):
            raise FloatingPointError(f"non-finite conditional risk for loss {mz.loss.name}")
        out[sl] = cm - cs
    return out


def _tilde_psi_batch(mz: _RiskMinimizer, vs, M: float, reduced: bool = False) -> np.ndarray:
    """Infimum over ``S in [v, M]`` for every ``v`` in ``vs`` at once."""
    vs = np.asarray(vs, dtype=float)
    t = np.linspace(0.0, 1.0, N_OUTER)
    S = vs[:, None] + (M - vs)[:, None] * t[None, :]
    vals = _gap(mz, S.ravel(), np.repeat(vs, N_OUTER), reduced).reshape(S.shape)
    best = vals.min(axis=1)
    for _ in range(N_ZOOM_PASSES):
        i = np.argmin(vals, axis=1)
        rows = np.arange(len(vs))
        lo = S[rows, np.maximum(i - 1, 0)]
        hi = S[rows, np.minimum(i + 1, S.shape[1] - 1)]
        tz = np.linspace(0.0, 1.0, N_ZOOM)
        S = lo[:, None] + (hi - lo)[:, None] * tz[None, :]
        vals = _gap(mz, S.ravel(), np.repeat(vs, N_ZOOM), reduced).reshape(S.shape)
        best = np.minimum(best, vals.min(axis=1))
    if not reduced:
        # C^- == C^* when mu1 == mum1
        best = np.where(vs == 0.0, 0.0, np.maximum(best, 0.0))
    return best


def tilde_psi(loss: LossSpec, v: float, M: float) -> float:
    """``inf C_T^- - C_T^*`` over ``|mu1 - mum1| = v, mu1 + mum1 <= M``."""
    v = _check_v(v, M)
    return float(_tilde_psi_batch(_RiskMinimizer(loss), [v], M)[0])


def reduced_tilde_psi(loss: LossSpec, v: float, M: float) -> float:
    """Convex-loss shortcut ``inf_S S*T(0) - C_T^*((S+v)/2, (S-v)/2)``."""
    v = _check_v(v, M)
    return float(_tilde_psi_batch(_RiskMinimizer(loss), [v], M, reduced=True)[0])


def lower_convex_envelope(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Greatest convex minorant of the points ``(x, y)`` evaluated at ``x``.

    ``x`` must be ascending.  Monotone-chain lower hull, then linear
    interpolation between hull vertices.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            o, a = hull[-2], hull[-1]
            cross = (x[a] - x[o]) * (y[i] - y[o]) - (y[a] - y[o]) * (x[i] - x[o])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.interp(x, x[hull], y[hull])


def psi_curve(loss: LossSpec, M: float = 1.0, n_grid: int = 513) -> PsiCurve:
    if not M > 0:
        raise ValueError("M must be positive")
    if n_grid < 16:
        raise ValueError("n_grid must be at least 16")
    grid = np.linspace(0.0, M, n_grid)
    tilde = _tilde_psi_batch(_RiskMinimizer(loss), grid, M)
    convex = lower_convex_envelope(grid, tilde)
    return PsiCurve(float(M), grid, tilde, convex)


def closed_form_psi(loss_name: str, v: float, M: float = 1.0, params: dict | None = None) -> float:
    """Known closed-form Psi-transforms of the catalog losses."""
    params = params or {}
    v = _check_v(v, M)
    if loss_name == "exponential":
        return M * (1.0 - math.sqrt(max(1.0 - (v / M) ** 2, 0.0)))
    if loss_name == "truncated_quadratic":
        return v * v / M
    if loss_name in ("hinge", "sigmoid", "smoothed_ramp"):
        return v
    if loss_name == "dwd":
        # tends to v / gamma as M -> inf
        return (M + v - math.sqrt(max(M * M - v * v, 0.0))) / params.get("gamma", 1.0)
    if loss_name == "arcx4":
        k = params.get("k", 2.0)
        e = 1.0 / (k - 1.0)
        return M - 2 ** (k - 1) * (M * M - v * v) * ((M - v) ** e + (M + v) ** e) ** (1.0 - k)
    if loss_name == "binomial":
        return float(xlogy((M + v) / 2, M + v) + xlogy((M - v) / 2, M - v) - xlogy(M, M))
    raise KeyError(f"no closed-form Psi-transform for {loss_name!r}")


def check_policy_calibration(
    loss: LossSpec,
    M: float = 1.0,
    n_samples: int = 1000,
    margin_floor: float = 1e-2,
    seed: int = 0,
    atol: float = 1e-12,
    curve: PsiCurve | None = None,
) -> CalibrationReport:
    """Sample ``mu`` with ``|mu1 - mum1| >= margin_floor`` and check ``C^- > C^*``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    mus = []
    while sum(len(m) for m in mus) < n_samples:
        cand = rng.uniform(0.0, M, size=(4 * n_samples, 2))
        keep = (cand.sum(axis=1) <= M) & (np.abs(cand[:, 0] - cand[:, 1]) >= margin_floor)
        mus.append(cand[keep])
    mu = np.concatenate(mus)[:n_samples]
    mz = _RiskMinimizer(loss)
    cm, _ = mz.cminus(mu[:, 0], mu[:, 1])
    cs, _ = mz.cstar(mu[:, 0], mu[:, 1])
    gap = cm - cs
    i = int(np.argmin(gap))
    pd = None
    if curve is not None:
        pd = bool(np.all(curve.convex_values[1:] > 0))
    return CalibrationReport(
        loss=loss.name,
        M=float(M),
        n_samples=int(n_samples),
        margin_floor=float(margin_floor),
        min_gap=float(gap[i]),
        argmin_mu=(float(mu[i, 0]), float(mu[i, 1])),
        passed=bool(np.all(gap > atol)),
        positive_definite_evidence=pd,
    )
