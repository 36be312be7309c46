"""Limited-memory BFGS with a user preconditioner and backtracking line search."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["LBFGSResult", "lbfgs"]


@dataclass
class LBFGSResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    grad_norm: float
    iterations: int
    converged: bool
    message: str


def _direction(g, memory, precond):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(memory):
        a = rho * np.vdot(s, q)
        alphas.append(a)
        q -= a * y
    r = precond(q)
    for (s, y, rho), a in zip(memory, reversed(alphas)):
        b = rho * np.vdot(y, r)
        r += (a - b) * s
    return -r


def lbfgs(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], x0: np.ndarray, *,
          precond: Callable[[np.ndarray], np.ndarray] | None = None, tol: float = 1e-8,
          max_iter: int = 5000, memory: int = 12, c1: float = 1e-4,
          max_backtracks: int = 60) -> LBFGSResult:
    """Minimize ``fun`` (returning value and gradient) from ``x0``.

    ``precond`` approximates the inverse Hessian and seeds the two-loop
    recursion.  Stops when the Euclidean gradient norm is at most ``tol``.
    Steps are accepted by the Armijo rule or, once the objective is flat to
    roundoff, by the approximate Armijo test of Hager and Zhang.
    """
    precond = precond or (lambda v: v.copy())
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    mem: deque = deque(maxlen=memory)
    gnorm = float(np.linalg.norm(g))
    it = 0
    message = "max_iter reached"
    fresh = False
    while it < max_iter:
        if gnorm <= tol:
            message = "gradient tolerance reached"
            break
        d = _direction(g, mem, precond)
        gd = float(np.vdot(g, d))
        if not gd < 0:
            mem.clear()
            d = -precond(g)
            gd = float(np.vdot(g, d))
            if not gd < 0:
                message = "preconditioner is not positive definite"
                break
        t = 1.0
        eps_f = 1e-12 * abs(f) + 1e-300
        accepted = False
        for _ in range(max_backtracks):
            x_new = x + t * d
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new):
                if f_new <= f + c1 * t * gd:
                    accepted = True
                    break
                if f_new <= f + eps_f and np.vdot(g_new, d) <= (2 * c1 - 1) * gd:
                    accepted = True
                    break
            t *= 0.5
        it += 1
        if not accepted:
            if fresh or not mem:
                message = "line search failed"
                break
            mem.clear()
            fresh = True
            continue
        fresh = False
        s = x_new - x
        y = g_new - g
        sy = float(np.vdot(s, y))
        if sy > 1e-14 * np.linalg.norm(s) * np.linalg.norm(y):
            mem.append((s, y, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
    converged = gnorm <= tol
    if converged:
        message = "gradient tolerance reached"
    return LBFGSResult(x, float(f), g, gnorm, it, converged, message)
