"""Limited-memory BFGS with a strong-Wolfe line search."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

FG = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class NonFiniteObjective(FloatingPointError):
    """Objective or gradient became non-finite; carries the offending iterate."""

    def __init__(self, msg: str, x: np.ndarray, iteration: int):
        super().__init__(f"{msg} (iteration {iteration}, |x|_inf={np.max(np.abs(x)):.3g})")
        self.x = x
        self.iteration = iteration


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    n_eval: int
    converged: bool
    message: str


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _cubic_min(a, fa, da, b, fb, db):
    """Minimiser of the cubic interpolant on [a, b], or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def strong_wolfe(phi, f0, d0, alpha1, c1=1e-4, c2=0.9, max_iter=40):
    """Line search of Nocedal & Wright (Alg. 3.5/3.6).

    ``phi(alpha)`` returns ``(f, dphi, payload)``.  Returns ``(alpha, f, payload)``
    or ``None`` when no step with sufficient decrease was found.
    """

    # approximate Wolfe (Hager & Zhang) once f differences hit round-off
    f_noise = 1e-13 * max(1.0, abs(f0))

    def ev(a):
        f, d, pl = phi(a)
        if not math.isfinite(f) or not math.isfinite(d):
            return math.inf, math.nan, pl
        return f, d, pl

    def approx_ok(f, d):
        return f <= f0 + f_noise and c2 * d0 <= d <= (2.0 * c1 - 1.0) * d0

    def zoom(lo, flo, dlo, plo, hi, fhi, dhi):
        for _ in range(max_iter):
            a = None
            if math.isfinite(fhi) and math.isfinite(dhi):
                a = _cubic_min(lo, flo, dlo, hi, fhi, dhi)
            width = hi - lo
            if a is None or not (min(lo, hi) + 0.1 * abs(width) <= a <= max(lo, hi) - 0.1 * abs(width)):
                a = lo + 0.5 * width
            f, d, pl = ev(a)
            if approx_ok(f, d):
                return a, f, pl
            if f > f0 + c1 * a * d0 or f >= flo:
                hi, fhi, dhi = a, f, d
            else:
                if abs(d) <= -c2 * d0:
                    return a, f, pl
                if d * (hi - lo) >= 0:
                    hi, fhi, dhi = lo, flo, dlo
                lo, flo, dlo, plo = a, f, d, pl
            if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
                break
        # sufficient decrease without curvature: still a usable step
        if lo > 0:
            return lo, flo, plo
        return None

    a_prev, f_prev, d_prev, p_prev = 0.0, f0, d0, None
    a = alpha1
    for i in range(max_iter):
        f, d, pl = ev(a)
        if approx_ok(f, d):
            return a, f, pl
        if f > f0 + c1 * a * d0 or (i > 0 and f >= f_prev):
            return zoom(a_prev, f_prev, d_prev, p_prev, a, f, d)
        if abs(d) <= -c2 * d0:
            return a, f, pl
        if d >= 0:
            return zoom(a, f, d, pl, a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev, p_prev = a, f, d, pl
        a = 2.0 * a
    return a_prev, f_prev, p_prev


def minimize_lbfgs(
    fg: FG,
    x0: np.ndarray,
    *,
    memory: int = 10,
    gtol: float = 1e-6,
    max_iter: int = 500,
    c1: float = 1e-4,
    c2: float = 0.9,
) -> LbfgsResult:
    """Minimise a smooth function given ``fg(x) -> (f, grad)``.

    Stops when ``max|grad| <= gtol``, after ``max_iter`` iterations, or when
    the line search cannot make progress along steepest descent.
    """
    x = np.array(x0, dtype=float)
    f, g = fg(x)
    n_eval = 1
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        raise NonFiniteObjective("non-finite objective at the initial point", x, 0)
    pairs: deque = deque(maxlen=memory)
    it = 0
    while True:
        if np.max(np.abs(g)) <= gtol:
            return LbfgsResult(x, f, g, it, n_eval, True, "gradient tolerance reached")
        if it >= max_iter:
            return LbfgsResult(x, f, g, it, n_eval, False, "maximum iterations reached")

        if pairs:
            d = _two_loop(g, list(pairs))
            alpha1 = 1.0
            if not (g @ d < 0):
                pairs.clear()
        if not pairs:
            d = -g
            alpha1 = min(1.0, 1.0 / max(np.max(np.abs(g)), 1e-300))
        d0 = float(g @ d)

        def phi(a, x=x, d=d):
            xa = x + a * d
            fa, ga = fg(xa)
            return fa, float(ga @ d), (xa, ga)

        res = strong_wolfe(phi, f, d0, alpha1, c1, c2)
        n_eval += 1
        if res is None or res[2] is None:
            if pairs:
                pairs.clear()
                continue
            return LbfgsResult(x, f, g, it, n_eval, False, "line search failed")
        _, f_new, (x_new, g_new) = res
        if not np.all(np.isfinite(g_new)):
            raise NonFiniteObjective("non-finite gradient during line search", x_new, it)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            pairs.append((s, y, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        it += 1
