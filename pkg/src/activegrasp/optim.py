"""Box-constrained limited-memory BFGS with a projected backtracking line search.

Public contract is maximization; internally we minimize the negated objective.
Every iterate is projected onto the box, and a step is accepted only if it
satisfies an Armijo condition along the projected path and does not decrease
the objective.
"""
from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import Bounds, clamp_to_bounds, validate_config

log = logging.getLogger(__name__)


class Termination(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    LINE_SEARCH_FAIL = "LineSearchFail"


@dataclass
class SolverOpts:
    max_iter: int = 100
    tol: float = 1e-5
    memory: int = 10
    backtrack: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 40


@dataclass
class SolveReport:
    iterations: int
    value: float
    pg_norm: float
    reason: Termination
    active: np.ndarray
    n_evals: int = 0


# value_and_grad(q) -> (value, gradient), maximization convention
Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


def projected_gradient(x: np.ndarray, g: np.ndarray, b: Bounds) -> np.ndarray:
    """Projected gradient for minimization: x - P(x - g)."""
    return x - clamp_to_bounds(x - g, b)


def _two_loop(g: np.ndarray, pairs) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        beta = rho * (y @ q)
        q += (a - beta) * s
    return q


def solve_bounded(obj: Objective, q0, b: Bounds, opts: SolverOpts | None = None,
                  callback: Callable[[np.ndarray], None] | None = None):
    """Maximize ``obj`` over the box ``b`` starting from ``q0``.

    Returns ``(q_best, value, SolveReport)``. ``callback`` sees every accepted
    iterate, including the (clamped) start.
    """
    opts = opts or SolverOpts()
    x = np.asarray(q0, dtype=np.float64).copy()
    if not validate_config(x, b):
        log.debug("start point outside bounds, clamping")
        x = clamp_to_bounds(x, b)
    v, g = obj(x)
    n_evals = 1
    if not (np.isfinite(v) and np.all(np.isfinite(g))):
        raise ValueError("objective is not finite at the starting point")
    f, g = -float(v), -np.asarray(g, dtype=np.float64)
    if callback is not None:
        callback(x)
    pairs: deque = deque(maxlen=opts.memory)
    reason = Termination.MAX_ITER
    it = 0
    for it in range(1, opts.max_iter + 1):
        pg = projected_gradient(x, g, b)
        if np.max(np.abs(pg)) < opts.tol:
            reason = Termination.CONVERGED
            it -= 1
            break
        at_lo = (x <= b.lower) & (g > 0)
        at_hi = (x >= b.upper) & (g < 0)
        free = ~(at_lo | at_hi)
        gf = np.where(free, g, 0.0)
        d = -_two_loop(gf, list(pairs)) if pairs else -gf
        d = np.where(free, d, 0.0)
        if d @ gf >= 0:
            pairs.clear()
            d = -gf
        t = 1.0 if pairs else min(1.0, 1.0 / max(np.max(np.abs(d)), 1e-12))
        accepted = False
        for _ in range(opts.max_backtracks):
            xn = clamp_to_bounds(x + t * d, b)
            step = xn - x
            if not np.any(step):
                break
            vn, gn = obj(xn)
            n_evals += 1
            fn = -float(vn)
            if np.isfinite(fn) and np.all(np.isfinite(gn)):
                decrease = min(0.0, float(g @ step))
                if fn <= f + opts.armijo * decrease and fn <= f:
                    accepted = True
                    break
            t *= opts.backtrack
        if not accepted:
            reason = Termination.LINE_SEARCH_FAIL
            it -= 1
            break
        gn = -np.asarray(gn, dtype=np.float64)
        s, y = xn - x, gn - g
        sy = float(s @ y)
        if sy > 1e-10 * float(y @ y):
            pairs.append((s, y, 1.0 / sy))
        x, f, g = xn, fn, gn
        if callback is not None:
            callback(x)
    pg = projected_gradient(x, g, b)
    active = (x <= b.lower) | (x >= b.upper)
    report = SolveReport(it, -f, float(np.max(np.abs(pg))), reason, active, n_evals)
    return x, -f, report
