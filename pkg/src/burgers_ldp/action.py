"""Discrete Freidlin-Wentzell action, its exact gradient, and minimum-action search.

For a path ``u_0..u_M`` on a uniform grid of step ``h`` the action is

    S = (h/2) sum_i |W H_i|^2,   H_i = (u_{i+1}-u_i)/h + A ubar_i - B(ubar_i),

with ``ubar_i`` the interval midpoint and ``W = A^(-alpha/2)`` (or
``Q^(-1/2)`` for a finite-delta noise).  Endpoints are held fixed; the
interior points are the optimization variables.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from .optimize import lbfgs
from .solver import TrajectoryPath
from .spectral import (SpectralField, dealias_grid_size, eigenvalues, nonlinearity,
                       nonlinearity_vjp, wavenumbers)

__all__ = [
    "ActionProblem",
    "ActionValue",
    "LadderConfig",
    "action_eval",
    "action_gradient",
    "mam_minimize",
    "quasipotential",
    "linear_quasipotential",
    "linear_instanton",
]


@dataclass(frozen=True)
class ActionProblem:
    start: SpectralField
    end: SpectralField
    T: float
    m_steps: int
    alpha: float = 0.0
    nonlinear: bool = True
    noise: object | None = None
    m_grid: int | None = None

    def __post_init__(self):
        if self.start.n_modes != self.end.n_modes:
            raise ValueError("start and end must share n_modes")
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive (T = {self.T})")
        if self.m_steps < 8:
            raise ValueError(f"need at least 8 time intervals (m_steps = {self.m_steps})")
        if not 0.0 <= self.alpha < 0.5:
            raise ValueError(f"alpha must lie in [0, 1/2) (alpha = {self.alpha})")

    @property
    def n_modes(self) -> int:
        return self.start.n_modes

    @property
    def h(self) -> float:
        return self.T / self.m_steps


@dataclass
class ActionValue:
    value: float
    control: TrajectoryPath | None
    gradient_norm_at_exit: float = math.nan
    converged: bool = True
    path: TrajectoryPath | None = None
    T: float = math.nan
    iterations: int = 0
    message: str = ""
    ladder: list = field(default_factory=list)

    def record(self) -> dict:
        out = {
            "value": self.value,
            "T": self.T,
            "M": None if self.path is None else self.path.n_steps,
            "converged": self.converged,
            "grad_norm": self.gradient_norm_at_exit,
            "iterations": self.iterations,
        }
        if self.ladder:
            out["ladder"] = self.ladder
        return out


def _weights2(n_modes: int, alpha: float, noise=None) -> np.ndarray:
    if noise is not None:
        sig = noise.sigma()
        if sig.size != n_modes:
            raise ValueError(f"noise has {sig.size} modes, path has {n_modes}")
        return 1.0 / sig**2
    return wavenumbers(n_modes) ** (-2.0 * alpha)


def _residual(values, h, nonlinear, m_grid):
    ubar = 0.5 * (values[1:] + values[:-1])
    H = np.diff(values, axis=0) / h + eigenvalues(values.shape[1]) * ubar
    if nonlinear:
        H = H - nonlinearity(ubar, m_grid)
    return H, ubar


def _value_and_grad(values, h, w2, nonlinear, m_grid):
    H, ubar = _residual(values, h, nonlinear, m_grid)
    G = w2 * H
    value = 0.5 * h * float(np.sum(G * H))
    K = eigenvalues(values.shape[1]) * G
    if nonlinear:
        K = K - nonlinearity_vjp(ubar, G, m_grid)
    grad = G[:-1] - G[1:] + 0.5 * h * (K[:-1] + K[1:])
    return value, grad


class _LinearPreconditioner:
    """Exact inverse Hessian of the action with the nonlinearity dropped.

    Per mode the Hessian is a symmetric tridiagonal Toeplitz matrix in time,
    diagonalized by the type-I sine transform.
    """

    def __init__(self, m_steps, h, w2):
        n = w2.size
        a = eigenvalues(n)
        cp = 1.0 / h + 0.5 * a
        cm = 1.0 / h - 0.5 * a
        theta = np.pi * np.arange(1, m_steps) / m_steps
        self.lam = h * w2 * (cp**2 + cm**2 - 2.0 * np.outer(np.cos(theta), cp * cm))
        self.scale = 2.0 * m_steps

    def __call__(self, r):
        r = r.reshape(self.lam.shape)
        v = fft.dst(r, type=1, axis=0) / self.lam
        return (fft.dst(v, type=1, axis=0) / self.scale).reshape(-1)


def _control_path(H, w2, path: TrajectoryPath) -> TrajectoryPath:
    f = np.sqrt(w2) * H
    mids = 0.5 * (path.times[1:] + path.times[:-1])
    return TrajectoryPath(mids, f, {"kind": "control"})


def action_eval(path: TrajectoryPath, alpha: float = 0.0, *, nonlinear: bool = True,
                noise=None, m_grid: int | None = None) -> ActionValue:
    """Midpoint-rule action of ``path`` and the implied control ``W H``."""
    if path.n_steps < 2:
        raise ValueError("action needs a path with at least 2 intervals")
    n = path.n_modes
    m_grid = m_grid or dealias_grid_size(n)
    w2 = _weights2(n, alpha, noise)
    H, _ = _residual(path.values, path.h, nonlinear, m_grid)
    value = 0.5 * path.h * float(np.sum(w2 * H * H))
    return ActionValue(value, _control_path(H, w2, path), path=path, T=path.T)


def action_gradient(path: TrajectoryPath, alpha: float = 0.0, *, nonlinear: bool = True,
                    noise=None, m_grid: int | None = None) -> list[SpectralField]:
    """Gradient of the discrete action with respect to ``u_1..u_{M-1}``."""
    if path.n_steps < 2:
        raise ValueError("action needs a path with at least 2 intervals")
    n = path.n_modes
    m_grid = m_grid or dealias_grid_size(n)
    _, g = _value_and_grad(path.values, path.h, _weights2(n, alpha, noise), nonlinear, m_grid)
    return [SpectralField(row) for row in g]


def mam_minimize(problem: ActionProblem, tol: float = 1e-8, max_iter: int = 5000,
                 initial: TrajectoryPath | None = None) -> ActionValue:
    """Minimize the discrete action over interior path points.

    Starts from the straight line between the endpoints unless ``initial``
    is given.  Non-convergence is reported through ``converged=False``.
    """
    M, n, h = problem.m_steps, problem.n_modes, problem.h
    m_grid = problem.m_grid or dealias_grid_size(n)
    w2 = _weights2(n, problem.alpha, problem.noise)
    x0, x1 = problem.start.coeffs, problem.end.coeffs
    if initial is None:
        s = np.linspace(0.0, 1.0, M + 1)[:, None]
        init = (1.0 - s) * x0 + s * x1
    else:
        if initial.values.shape != (M + 1, n):
            raise ValueError("initial path does not match the problem grid")
        init = np.array(initial.values)
    full = init.copy()
    full[0], full[-1] = x0, x1

    def fun(z):
        full[1:-1] = z.reshape(M - 1, n)
        v, g = _value_and_grad(full, h, w2, problem.nonlinear, m_grid)
        return v, g.reshape(-1)

    res = lbfgs(fun, init[1:-1].reshape(-1), precond=_LinearPreconditioner(M, h, w2),
                tol=tol, max_iter=max_iter)
    best = init.copy()
    best[1:-1] = res.x.reshape(M - 1, n)
    best[0], best[-1] = x0, x1
    path = TrajectoryPath.uniform(problem.T, best, {"kind": "instanton", "alpha": problem.alpha,
                                                   "nonlinear": problem.nonlinear})
    H, _ = _residual(best, h, problem.nonlinear, m_grid)
    return ActionValue(
        value=res.f,
        control=_control_path(H, w2, path),
        gradient_norm_at_exit=res.grad_norm,
        converged=res.converged,
        path=path,
        T=problem.T,
        iterations=res.iterations,
        message=res.message,
    )


@dataclass(frozen=True)
class LadderConfig:
    """Outer search over the horizon: T0, 2 T0, 4 T0, ... with M proportional to T."""

    T0: float = 1.0
    steps_per_unit: int = 64
    rel_tol: float = 1e-3
    max_rungs: int = 6
    tol: float = 1e-8
    max_iter: int = 5000
    nonlinear: bool = True
    noise: object | None = None
    m_grid: int | None = None

    def __post_init__(self):
        if not self.T0 > 0 or self.steps_per_unit < 1 or self.max_rungs < 1:
            raise ValueError("ladder needs T0 > 0, steps_per_unit >= 1, max_rungs >= 1")


def quasipotential(phi: SpectralField, alpha: float = 0.0, cfg: LadderConfig | None = None) -> ActionValue:
    """Minimal action from 0 to ``phi`` over a doubling ladder of horizons.

    Stops when a rung improves the value by less than ``rel_tol`` (a
    heuristic: there is no modulus for the infimum over T).  Exhausting the
    ladder returns the best value with ``converged=False``.
    """
    cfg = cfg or LadderConfig()
    zero = SpectralField.zeros(phi.n_modes)
    best: ActionValue | None = None
    ladder = []
    prev = math.inf
    settled = False
    T = cfg.T0
    for _ in range(cfg.max_rungs):
        M = max(8, int(round(cfg.steps_per_unit * T)))
        t0 = time.perf_counter()
        r = mam_minimize(ActionProblem(zero, phi, T, M, alpha, cfg.nonlinear, cfg.noise, cfg.m_grid),
                         cfg.tol, cfg.max_iter)
        ladder.append({"T": T, "M": M, "value": r.value, "converged": r.converged,
                       "grad_norm": r.gradient_norm_at_exit, "wall_time": time.perf_counter() - t0})
        if best is None or r.value < best.value:
            best = r
        if r.value == 0.0 or (math.isfinite(prev) and prev - r.value <= cfg.rel_tol * abs(prev)):
            settled = True
            break
        prev = r.value
        T *= 2.0
    best.ladder = ladder
    best.converged = settled and all(step["converged"] for step in ladder)
    best.message = "ladder settled" if settled else "ladder exhausted"
    return best


def linear_quasipotential(phi: SpectralField, alpha: float = 0.0) -> float:
    """``|phi|^2_{H^(1-alpha)}``, the quasi-potential of the linear system."""
    return float(np.sum(wavenumbers(phi.n_modes) ** (2.0 - 2.0 * alpha) * phi.coeffs**2))


def linear_instanton(phi: SpectralField, T: float, m_steps: int) -> TrajectoryPath:
    """Minimizer ``sinh(a t) / sinh(a T) phi_k`` of the linear action, per mode."""
    a = eigenvalues(phi.n_modes)
    t = np.linspace(0.0, T, m_steps + 1)[:, None]
    # sinh(a t)/sinh(a T) written to avoid overflow for large a T
    ratio = np.exp(a * (t - T)) * (-np.expm1(-2.0 * a * t)) / (-np.expm1(-2.0 * a * T))
    return TrajectoryPath.uniform(T, ratio * phi.coeffs, {"kind": "linear instanton"})
