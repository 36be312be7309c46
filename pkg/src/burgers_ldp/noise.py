"""Diagonal noise covariance ``Q = A^alpha (I + delta A^beta)^(-1)`` and exact OU sampling.

In the sine basis the noise amplitude of mode k is

    sigma_k = (k pi)^alpha (1 + delta (k pi)^(2 beta))^(-1/2),

and the stochastic convolution ``Z`` is a family of independent
Ornstein-Uhlenbeck processes ``dZ_k = -(k pi)^2 Z_k dt + sqrt(eps) sigma_k dbeta_k``,
which can be advanced exactly over any step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate

from .spectral import SpectralField, eigenvalues, wavenumbers

__all__ = [
    "NoiseSpec",
    "DiagonalNoise",
    "DeltaSchedule",
    "OUState",
    "TraceQ",
    "sigma_k",
    "trace_Q",
    "trace_sum",
    "ou_transition",
    "ou_exact_step",
    "schedule_delta",
    "trajectory_rng",
    "NoiseStream",
]


@dataclass(frozen=True)
class NoiseSpec:
    """Noise family parameters, truncated to ``n_modes``.

    ``delta = 0`` is accepted as the limiting diagonal operator ``A^alpha``;
    it is only trace class because of the truncation.
    """

    alpha: float
    beta: float
    delta: float
    epsilon: float
    n_modes: int

    def __post_init__(self):
        if not 0.0 <= self.alpha < 0.5:
            raise ValueError(f"noise: constraint 0 <= alpha < 1/2 violated (alpha = {self.alpha})")
        gap = self.beta - self.alpha
        if not 0.5 < gap < 1.0:
            raise ValueError(
                f"noise: constraint 1/2 < beta - alpha < 1 violated (beta - alpha = {gap:g})"
            )
        if not self.delta >= 0.0 or not math.isfinite(self.delta):
            raise ValueError(f"noise: delta must be a nonnegative finite number (delta = {self.delta})")
        if not self.epsilon >= 0.0 or not math.isfinite(self.epsilon):
            raise ValueError(f"noise: epsilon must be nonnegative (epsilon = {self.epsilon})")
        if int(self.n_modes) != self.n_modes or self.n_modes < 1:
            raise ValueError(f"noise: n_modes must be a positive integer (n_modes = {self.n_modes})")

    def sigma(self) -> np.ndarray:
        """Per-mode amplitudes of sqrt(Q) for k = 1..N."""
        kp = wavenumbers(self.n_modes)
        return kp**self.alpha / np.sqrt(1.0 + self.delta * kp ** (2.0 * self.beta))

    def with_epsilon(self, epsilon: float, delta: float | None = None) -> "NoiseSpec":
        return NoiseSpec(
            self.alpha, self.beta, self.delta if delta is None else delta, epsilon, self.n_modes
        )

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "n_modes": self.n_modes,
        }

    @classmethod
    def from_dict(cls, d: dict, schedule: "DeltaSchedule | None" = None) -> "NoiseSpec":
        alpha = float(d["alpha"])
        beta = float(d["beta"])
        epsilon = float(d["epsilon"])
        if "delta" in d:
            delta = float(d["delta"])
        elif schedule is not None:
            delta = schedule_delta(epsilon, schedule)
        else:
            raise KeyError("delta")
        return cls(alpha, beta, delta, epsilon, int(d["n_modes"]))


@dataclass(frozen=True)
class DiagonalNoise:
    """Arbitrary diagonal amplitudes ``sigma_k`` (e.g. non-trace-class experiments).

    Only usable for simulation; the trace-class machinery needs NoiseSpec.
    """

    amplitudes: tuple
    epsilon: float

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=float)
        if a.ndim != 1 or a.size == 0 or not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("amplitudes must be a nonempty list of finite nonnegative numbers")
        if not self.epsilon >= 0.0:
            raise ValueError(f"epsilon must be nonnegative (epsilon = {self.epsilon})")
        object.__setattr__(self, "amplitudes", tuple(float(x) for x in a))

    @property
    def n_modes(self) -> int:
        return len(self.amplitudes)

    def sigma(self) -> np.ndarray:
        return np.array(self.amplitudes)

    @classmethod
    def power_law(cls, exponent: float, epsilon: float, n_modes: int) -> "DiagonalNoise":
        """``sqrt(Q) = A^(exponent/2)``, i.e. ``sigma_k = (k pi)^exponent``."""
        return cls(tuple(wavenumbers(n_modes) ** exponent), epsilon)


@dataclass(frozen=True)
class DeltaSchedule:
    """``delta(eps) = eps^theta`` with ``eps * delta^(-(1+2 alpha)/(2 beta)) -> 0``."""

    theta: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"schedule: theta must be positive (theta = {self.theta})")
        rate = self.theta * (1.0 + 2.0 * self.alpha) / (2.0 * self.beta)
        if not rate < 1.0:
            raise ValueError(
                "schedule: constraint theta (1 + 2 alpha) / (2 beta) < 1 violated "
                f"(value = {rate:g}); eps * delta(eps)^(-(1+2alpha)/(2beta)) would not vanish"
            )

    @classmethod
    def default(cls, alpha: float, beta: float) -> "DeltaSchedule":
        """theta = beta / (1 + 2 alpha), so that eps * delta^(...) = sqrt(eps)."""
        return cls(beta / (1.0 + 2.0 * alpha), alpha, beta)

    @property
    def residual_exponent(self) -> float:
        """Exponent p with ``eps * delta(eps)^(-(1+2a)/(2b)) = eps^p``."""
        return 1.0 - self.theta * (1.0 + 2.0 * self.alpha) / (2.0 * self.beta)

    def spec(self, epsilon: float, n_modes: int) -> NoiseSpec:
        return NoiseSpec(self.alpha, self.beta, schedule_delta(epsilon, self), epsilon, n_modes)


def schedule_delta(epsilon: float, schedule: DeltaSchedule) -> float:
    """``eps^theta``; ``eps = 0`` gives the limit ``delta = 0`` (no noise is applied anyway)."""
    if not epsilon >= 0 or not math.isfinite(epsilon):
        raise ValueError(f"epsilon must be nonnegative (epsilon = {epsilon})")
    return float(epsilon**schedule.theta)


def sigma_k(spec: NoiseSpec, k: int) -> float:
    if not 1 <= k <= spec.n_modes:
        raise ValueError(f"mode index {k} outside 1..{spec.n_modes}")
    kp = k * math.pi
    return kp**spec.alpha / math.sqrt(1.0 + spec.delta * kp ** (2.0 * spec.beta))


class TraceQ(NamedTuple):
    truncated: float
    tail_bound: float
    tail_estimate: float

    @property
    def extrapolated(self) -> float:
        return self.truncated + self.tail_estimate


def trace_Q(spec: NoiseSpec) -> TraceQ:
    """Trace of the truncated covariance of ``spec``; see :func:`trace_sum`."""
    return trace_sum(spec.alpha, spec.beta, spec.delta, spec.n_modes)


def trace_sum(alpha: float, beta: float, delta: float, n_modes: int) -> TraceQ:
    """Truncated trace ``sum_{k<=N} (k pi)^(2 alpha) (1 + delta (k pi)^(2 beta))^(-1)``.

    Only needs the series to converge (``beta - alpha > 1/2``, ``delta > 0``
    for the tail), so it also covers the closed-form case ``beta - alpha = 1``.
    ``tail_bound`` is a rigorous upper bound on the discarded modes k > N,
    from ``sum_{k>N} g(k) <= int_N^inf (pi x)^(2a-2b) / delta dx``.
    ``tail_estimate`` is the midpoint-rule integral ``int_{N+1/2}^inf g``,
    accurate to O(N^-3); it is what ``extrapolated`` adds.
    """
    a, b, d, n = float(alpha), float(beta), float(delta), int(n_modes)
    if not b - a > 0.5:
        raise ValueError(f"trace: series needs beta - alpha > 1/2 (beta - alpha = {b - a:g})")
    if not d >= 0.0 or n < 1:
        raise ValueError("trace: need delta >= 0 and n_modes >= 1")
    kp = wavenumbers(n)
    truncated = float(np.sum(kp ** (2 * a) / (1.0 + d * kp ** (2 * b))))
    if d == 0.0:
        return TraceQ(truncated, math.inf, math.inf)
    p = 2.0 * b - 2.0 * a - 1.0
    bound = math.pi ** (2 * a - 2 * b) * n ** (-p) / (d * p)

    x0 = n + 0.5

    # x = x0 / s maps the tail to (0, 1]; the integrand is s^(p-1) times a smooth factor
    def smooth(s):
        if s == 0.0:
            return x0 * (math.pi * x0) ** (2 * a - 2 * b) / d
        px = math.pi * x0 / s
        return x0 * px ** (2 * a) / (1.0 + d * px ** (2 * b)) * s ** (-1.0 - p)

    est, _ = integrate.quad(smooth, 0.0, 1.0, weight="alg", wvar=(p - 1.0, 0.0),
                            epsabs=0.0, epsrel=1e-12, limit=200)
    return TraceQ(truncated, bound, float(est))


# --- exact OU transition ----------------------------------------------------

def ou_transition(sigma: np.ndarray, epsilon: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode decay ``exp(-a h)`` and standard deviation of one exact step."""
    a = eigenvalues(sigma.size)
    decay = np.exp(-a * h)
    var = epsilon * sigma**2 * (-np.expm1(-2.0 * a * h)) / (2.0 * a)
    return decay, np.sqrt(var)


@dataclass
class OUState:
    """Current stochastic convolution ``z`` at time ``t``, with its own generator."""

    z: SpectralField
    t: float = 0.0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    @classmethod
    def start(cls, n_modes: int, seed=None) -> "OUState":
        return cls(SpectralField.zeros(n_modes), 0.0, np.random.default_rng(seed))


def ou_exact_step(state: OUState, spec, h: float) -> OUState:
    """Advance Z by ``h`` using the exact Gaussian transition law."""
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    if state.z.n_modes != spec.n_modes:
        raise ValueError(f"state has {state.z.n_modes} modes, noise has {spec.n_modes}")
    decay, g = ou_transition(spec.sigma(), spec.epsilon, h)
    xi = state.rng.standard_normal(spec.n_modes)
    return OUState(SpectralField(decay * state.z.coeffs + g * xi), state.t + h, state.rng)


# --- reproducible per-trajectory streams -------------------------------------

def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for trajectory ``index`` under master ``seed``.

    Depends only on the pair, so ensembles are independent of batching and order.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


class NoiseStream:
    """Standard normal increments for a batch of trajectories.

    Each trajectory draws from its own generator in step order, so the
    numbers seen by trajectory j do not depend on which batch it is in or on
    how many steps are requested per call.
    """

    def __init__(self, seed: int, indices, n_modes: int):
        self.indices = list(indices)
        self.n_modes = n_modes
        self._rngs = [trajectory_rng(seed, j) for j in self.indices]

    def draw(self, n_steps: int) -> np.ndarray:
        """Array of shape (n_steps, batch, n_modes)."""
        out = np.empty((n_steps, len(self._rngs), self.n_modes))
        for b, rng in enumerate(self._rngs):
            out[:, b, :] = rng.standard_normal((n_steps, self.n_modes))
        return out
