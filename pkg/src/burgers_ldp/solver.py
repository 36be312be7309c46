"""Time integration of the Galerkin-truncated stochastic Burgers equation.

The solution is split as ``u = Y + Z``: ``Z`` is the stochastic convolution,
advanced by its exact OU law, and ``Y`` solves the random PDE

    Y' = -A Y + B(Y + Z),    Y(0) = x,

with either an exponential-Euler or a linearly implicit Euler step.  The
same stepper, with ``Z`` replaced by a control forcing, integrates the
deterministic skeleton equation.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .noise import NoiseStream, ou_transition
from .spectral import SpectralField, dealias_grid_size, eigenvalues, nonlinearity, wavenumbers

__all__ = [
    "SCHEMES",
    "BlowUpError",
    "SolverConfig",
    "TrajectoryPath",
    "Stepper",
    "step_Y",
    "simulate_sbe",
    "simulate_batch",
    "run_ensemble",
    "solve_skeleton",
    "gx_map",
    "time_grid",
    "worker_count",
]

SCHEMES = ("exponential-euler", "semi-implicit")
BLOWUP_FACTOR = 1e3


class BlowUpError(RuntimeError):
    """A step grew the H-norm by more than the guard factor."""

    def __init__(self, time: float, trajectory: int | None = None, norm: float = math.nan):
        self.time = time
        self.trajectory = trajectory
        self.norm = norm
        where = f" in trajectory {trajectory}" if trajectory is not None else ""
        super().__init__(f"blow-up guard triggered at t = {time:.6g}{where} (|Y| = {norm:.3g})")


@dataclass(frozen=True)
class SolverConfig:
    h: float = 1e-3
    scheme: str = "exponential-euler"
    n_modes: int = 64
    m_grid: int | None = None
    nonlinear: bool = True

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"solver: time step h must be positive (h = {self.h})")
        if self.scheme not in SCHEMES:
            raise ValueError(f"solver: unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if int(self.n_modes) != self.n_modes or self.n_modes < 1:
            raise ValueError(f"solver: n_modes must be a positive integer (n_modes = {self.n_modes})")
        m = dealias_grid_size(self.n_modes) if self.m_grid is None else int(self.m_grid)
        if 2 * m <= 3 * self.n_modes:
            raise ValueError(
                f"solver: dealias grid M = {m} too small for N = {self.n_modes} (need 2M > 3N)"
            )
        object.__setattr__(self, "m_grid", m)

    @property
    def stiffness(self) -> float:
        """``h (N pi)^2``; reported, not enforced."""
        return self.h * (self.n_modes * math.pi) ** 2

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "scheme": self.scheme,
            "n_modes": self.n_modes,
            "m_grid": self.m_grid,
            "nonlinear": self.nonlinear,
        }


@dataclass(frozen=True, eq=False)
class TrajectoryPath:
    """Fields on a uniform time grid; ``values[i]`` holds the coefficients at ``times[i]``."""

    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != t.size:
            raise ValueError(f"values shape {v.shape} does not match {t.size} times")
        if t.size < 2:
            raise ValueError("a path needs at least two time points")
        if not np.all(np.isfinite(v)):
            raise ValueError("path contains non-finite coefficients")
        d = np.diff(t)
        span = t[-1] - t[0]
        if not span > 0 or np.max(np.abs(d - span / (t.size - 1))) > 1e-14 * max(span, 1.0):
            raise ValueError("time grid must be uniform and increasing")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, T: float, values, meta=None, extras=None, t0: float = 0.0) -> "TrajectoryPath":
        values = np.asarray(values, dtype=float)
        times = t0 + np.linspace(0.0, T, values.shape[0])
        return cls(times, values, dict(meta or {}), dict(extras or {}))

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def n_modes(self) -> int:
        return self.values.shape[1]

    @property
    def h(self) -> float:
        return (self.times[-1] - self.times[0]) / self.n_steps

    @property
    def T(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def fields(self) -> list[SpectralField]:
        return [SpectralField(v) for v in self.values]

    def field(self, i: int) -> SpectralField:
        return SpectralField(self.values[i])

    def norms(self, r: float = 0.0) -> np.ndarray:
        """Sobolev ``H^r`` norm at every time point."""
        return np.linalg.norm(self.values * wavenumbers(self.n_modes) ** r, axis=1)

    def sup_distance(self, other: "TrajectoryPath") -> float:
        """``sup_t |u(t) - v(t)|_H`` on a shared grid."""
        if self.values.shape != other.values.shape:
            raise ValueError("paths live on different grids")
        return float(np.max(np.linalg.norm(self.values - other.values, axis=1)))


def time_grid(T: float, h: float) -> tuple[int, float]:
    """Number of steps and the step actually used so that ``n * h == T``."""
    if not T > 0:
        raise ValueError(f"horizon T must be positive (T = {T})")
    n = max(1, math.ceil(T / h - 1e-9))
    return n, T / n


def _phi1(x: np.ndarray) -> np.ndarray:
    out = np.ones_like(x)
    nz = x != 0
    out[nz] = -np.expm1(-x[nz]) / x[nz]
    return out


class Stepper:
    """One step of ``Y' = -A Y + B(Y + Z) + F`` on coefficient arrays (batched on axis 0)."""

    def __init__(self, cfg: SolverConfig, h: float):
        self.cfg = cfg
        self.h = h
        a = eigenvalues(cfg.n_modes)
        if cfg.scheme == "exponential-euler":
            self._lin = np.exp(-a * h)
            self._src = _phi1(a * h) * h
        else:
            self._lin = 1.0 / (1.0 + h * a)
            self._src = h / (1.0 + h * a)

    def __call__(self, y, z=None, forcing=None, t: float = 0.0, guard: bool = True):
        src = 0.0
        if self.cfg.nonlinear:
            src = nonlinearity(y if z is None else y + z, self.cfg.m_grid)
        if forcing is not None:
            src = src + forcing
        y_new = self._lin * y + self._src * src
        if guard:
            _guard(y, y_new, t + self.h)
        return y_new


def _guard(y, y_new, t):
    old = np.linalg.norm(y, axis=-1)
    new = np.linalg.norm(y_new, axis=-1)
    bad = ~(new <= BLOWUP_FACTOR * (1.0 + old))
    if np.any(bad):
        idx = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise BlowUpError(t, idx if np.ndim(bad) else None, float(np.atleast_1d(new)[idx]))


def step_Y(y: SpectralField, z: SpectralField, h: float, cfg: SolverConfig) -> SpectralField:
    """Advance Y by one step against the frozen stochastic convolution z."""
    if y.n_modes != z.n_modes or y.n_modes != cfg.n_modes:
        raise ValueError(f"mode mismatch: y={y.n_modes}, z={z.n_modes}, cfg={cfg.n_modes}")
    return SpectralField(Stepper(cfg, h)(y.coeffs, z.coeffs))


StepCallback = Callable[[int, float, np.ndarray, np.ndarray, np.ndarray], None]


def simulate_batch(x, spec, cfg: SolverConfig, T: float, seed: int, indices,
                   on_step: StepCallback | None = None, chunk: int = 64):
    """Integrate a batch of trajectories; returns the final ``(Y, Z)`` arrays.

    ``on_step(i, t, u, y, z)`` is called at every grid time including t = 0.
    Trajectory j uses the noise stream ``(seed, j)``.
    """
    n = cfg.n_modes
    if spec.n_modes != n:
        raise ValueError(f"noise has {spec.n_modes} modes, solver has {n}")
    indices = list(indices)
    b = len(indices)
    n_steps, h = time_grid(T, cfg.h)
    step = Stepper(cfg, h)
    decay, g = ou_transition(spec.sigma(), spec.epsilon, h)
    noisy = spec.epsilon > 0 and np.any(g > 0)
    stream = NoiseStream(seed, indices, n) if noisy else None

    y = np.broadcast_to(np.asarray(x, dtype=float), (b, n)).copy()
    z = np.zeros((b, n))
    if on_step is not None:
        on_step(0, 0.0, y + z, y, z)
    i = 0
    while i < n_steps:
        k = min(chunk, n_steps - i)
        xi = stream.draw(k) if noisy else None
        for s in range(k):
            t = i * h
            try:
                y = step(y, z, t=t)
            except BlowUpError as err:
                traj = indices[err.trajectory] if err.trajectory is not None else None
                raise BlowUpError(err.time, traj, err.norm) from None
            z = decay * z + g * xi[s] if noisy else z
            i += 1
            if on_step is not None:
                on_step(i, i * h, y + z, y, z)
    return y, z


def simulate_sbe(x: SpectralField, spec, cfg: SolverConfig, T: float, seed: int = 0) -> TrajectoryPath:
    """One trajectory of ``u = Y + Z``; the realized Y and Z are kept in ``extras``."""
    n_steps, h = time_grid(T, cfg.h)
    ys = np.empty((n_steps + 1, cfg.n_modes))
    zs = np.empty_like(ys)

    def record(i, t, u, y, z):
        ys[i] = y[0]
        zs[i] = z[0]

    simulate_batch(x.coeffs, spec, cfg, T, seed, [0], record)
    meta = {"scheme": cfg.scheme, "n_modes": cfg.n_modes, "h": h, "seed": seed,
            "epsilon": spec.epsilon, "nonlinear": cfg.nonlinear}
    return TrajectoryPath.uniform(T, ys + zs, meta, {"y": ys, "z": zs})


def worker_count() -> int:
    """Thread cap from ``BURGERS_LDP_THREADS`` (default: CPU count)."""
    cap = os.environ.get("BURGERS_LDP_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = max(1, min(n, int(cap)))
        except ValueError:
            pass
    return n


def run_ensemble(x, spec, cfg: SolverConfig, T: float, seed: int, n_traj: int,
                 make_observer, batch_size: int = 1000, workers: int | None = None):
    """Run ``n_traj`` independent trajectories in batches.

    ``make_observer(batch_indices)`` returns an object with ``update(i, t, u, y, z)``
    and ``result()``; results are concatenated along axis 0 in trajectory order,
    so the output does not depend on batch size or thread count.
    """
    batches = [range(s, min(s + batch_size, n_traj)) for s in range(0, n_traj, batch_size)]

    def run(idx):
        obs = make_observer(idx)
        simulate_batch(x, spec, cfg, T, seed, idx, obs.update)
        return obs.result()

    workers = workers or worker_count()
    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, batches))
    else:
        parts = [run(idx) for idx in batches]
    return np.concatenate(parts, axis=0)


def _integrate(x: np.ndarray, cfg: SolverConfig, h: float, n_steps: int,
               z_path: np.ndarray | None = None, forcing: np.ndarray | None = None) -> np.ndarray:
    step = Stepper(cfg, h)
    out = np.empty((n_steps + 1, cfg.n_modes))
    out[0] = x
    for i in range(n_steps):
        out[i + 1] = step(
            out[i],
            None if z_path is None else z_path[i],
            None if forcing is None else forcing[i],
            t=i * h,
        )
    return out


def solve_skeleton(x: SpectralField, f: TrajectoryPath, alpha: float, cfg: SolverConfig,
                   T: float | None = None) -> TrajectoryPath:
    """Integrate ``u' = -A u + B(u) + A^(alpha/2) f`` on the control's time grid.

    The control is sampled at the left end of each step.
    """
    if not 0.0 <= alpha < 0.5:
        raise ValueError(f"alpha must lie in [0, 1/2) (alpha = {alpha})")
    if x.n_modes != cfg.n_modes or f.n_modes != cfg.n_modes:
        raise ValueError("initial state, control and solver must share n_modes")
    if T is not None and abs(f.T - T) > 1e-12 * max(T, 1.0):
        raise ValueError(f"control is defined on [0, {f.T}], not [0, {T}]")
    forcing = f.values * wavenumbers(cfg.n_modes) ** alpha
    vals = _integrate(x.coeffs, cfg, f.h, f.n_steps, forcing=forcing)
    meta = {"scheme": cfg.scheme, "n_modes": cfg.n_modes, "h": f.h, "alpha": alpha,
            "nonlinear": cfg.nonlinear}
    return TrajectoryPath(f.times, vals, meta)


def gx_map(x: SpectralField, phi: TrajectoryPath, cfg: SolverConfig) -> TrajectoryPath:
    """Deterministic solution map: Y with the stochastic convolution replaced by ``phi``."""
    if x.n_modes != cfg.n_modes or phi.n_modes != cfg.n_modes:
        raise ValueError("initial state, input path and solver must share n_modes")
    vals = _integrate(x.coeffs, cfg, phi.h, phi.n_steps, z_path=phi.values)
    return TrajectoryPath(phi.times, vals, {"scheme": cfg.scheme, "n_modes": cfg.n_modes, "h": phi.h})
