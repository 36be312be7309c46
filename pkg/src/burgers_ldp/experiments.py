"""Monte Carlo checks of large-deviation behaviour on Galerkin-truncated systems.

Everything here is plain Monte Carlo: probabilities come with standard
errors, cells with fewer than ``MIN_HITS`` hits are censored, and trend
statements are made at 3-standard-error separation or reported as
inconclusive.  The exponential bounds being probed have unspecified
constants, so only trends and small-system Gaussian oracles are checked.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .action import ActionProblem, action_eval, mam_minimize
from .noise import DeltaSchedule, NoiseSpec, ou_transition, trace_Q, trajectory_rng
from .solver import SolverConfig, TrajectoryPath, run_ensemble, time_grid
from .spectral import SpectralField, eigenvalues, wavenumbers

__all__ = [
    "MIN_HITS",
    "TAIL_NOTE",
    "ExperimentConfig",
    "InvariantSample",
    "TailRow",
    "TailReport",
    "level_seed",
    "sample_invariant",
    "moment_summary",
    "tail_report",
    "invariant_tails",
    "time_averaged_tails",
    "linear_mode_tails",
    "convolution_tails",
    "ldp_path_check",
    "linear_tube_probability",
    "gaussian_mode_tail",
    "trend",
    "ito_energy_check",
]

MIN_HITS = 5
TAIL_NOTE = (
    "one-sided exponential bounds with unspecified constants: only monotone trends "
    "and small-system Gaussian oracles are checked, not the constants"
)


@dataclass(frozen=True)
class ExperimentConfig:
    epsilons: tuple = (0.2, 0.1, 0.05)
    alpha: float = 0.0
    beta: float = 0.75
    theta: float | None = None
    delta: float | None = None
    n_modes: int = 32
    h: float = 1e-3
    scheme: str = "exponential-euler"
    nonlinear: bool = True
    n_chains: int = 200
    burn_in: float = 2.0
    horizon: float = 22.0
    spacing: float = 1.0
    radius_grid: tuple = ()
    sigma_small: float = 0.1
    seed: int = 0

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if not eps or any(not e > 0 for e in eps):
            raise ValueError("experiment: epsilons must be a nonempty list of positive numbers")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("experiment: epsilons must be strictly decreasing")
        limit = 0.25 - self.alpha / 2.0
        if not 0.0 < self.sigma_small < limit:
            raise ValueError(
                f"experiment: constraint 0 < sigma_small < 1/4 - alpha/2 = {limit:g} violated "
                f"(sigma_small = {self.sigma_small})"
            )
        if not 0.0 <= self.burn_in < self.horizon:
            raise ValueError("experiment: need 0 <= burn_in < horizon")
        if self.spacing < 1.0:
            raise ValueError("experiment: decimation spacing must be at least 1.0 time units")
        if self.n_chains < 1:
            raise ValueError("experiment: n_chains must be positive")
        object.__setattr__(self, "epsilons", eps)
        object.__setattr__(self, "radius_grid", tuple(float(r) for r in self.radius_grid))
        self.schedule  # validates theta

    @property
    def schedule(self) -> DeltaSchedule:
        if self.theta is None:
            return DeltaSchedule.default(self.alpha, self.beta)
        return DeltaSchedule(self.theta, self.alpha, self.beta)

    def spec(self, epsilon: float) -> NoiseSpec:
        """Noise at level ``epsilon``; a fixed ``delta`` overrides the schedule."""
        if self.delta is not None:
            return NoiseSpec(self.alpha, self.beta, self.delta, epsilon, self.n_modes)
        return self.schedule.spec(epsilon, self.n_modes)

    def solver(self) -> SolverConfig:
        return SolverConfig(h=self.h, scheme=self.scheme, n_modes=self.n_modes,
                            nonlinear=self.nonlinear)


def level_seed(seed: int, level: int) -> int:
    """Independent master seed for ladder level ``level``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(2**31 + int(level),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# --- invariant measure sampling ---------------------------------------------

@dataclass
class InvariantSample:
    epsilon: float
    spec: NoiseSpec
    states: np.ndarray          # (n_chains, n_per_chain, N)
    spacing: float
    burn_in: float

    @property
    def flat(self) -> np.ndarray:
        return self.states.reshape(-1, self.states.shape[-1])

    def norms_sq(self, r: float) -> np.ndarray:
        """``|x|^2_{H^r}`` per sample, shape (n_chains, n_per_chain)."""
        return np.sum((self.states * wavenumbers(self.states.shape[-1]) ** r) ** 2, axis=-1)


class _Decimator:
    def __init__(self, idx, keep):
        self._rows = []
        self._pos = {step: j for j, step in enumerate(keep)}

    def update(self, i, t, u, y, z):
        if i in self._pos:
            self._rows.append(u.copy())

    def result(self):
        return np.stack(self._rows, axis=1)


def sample_invariant(cfg: ExperimentConfig, epsilon: float, seed: int | None = None,
                     x0: SpectralField | None = None) -> InvariantSample:
    """Approximate samples of the invariant measure at noise level ``epsilon``.

    ``n_chains`` independent runs from ``x0`` (default 0) are recorded every
    ``spacing`` time units after ``burn_in``.
    """
    spec = cfg.spec(epsilon)
    sol = cfg.solver()
    n_steps, h = time_grid(cfg.horizon, cfg.h)
    i0 = int(round(cfg.burn_in / h))
    stride = max(1, int(round(cfg.spacing / h)))
    keep = list(range(i0, n_steps + 1, stride))
    x = np.zeros(cfg.n_modes) if x0 is None else x0.coeffs
    states = run_ensemble(x, spec, sol, cfg.horizon, cfg.seed if seed is None else seed,
                          cfg.n_chains, lambda idx: _Decimator(idx, keep), batch_size=256)
    return InvariantSample(epsilon, spec, states, stride * h, i0 * h)


def moment_summary(sample: InvariantSample) -> dict:
    """Means of ``|x|_H^2`` and ``|x|_{H^1}^2`` with chain-level standard errors.

    ``h1_budget`` is the stationary value ``eps Tr Q / 2`` from the energy identity.
    """
    out = {"epsilon": sample.epsilon, "delta": sample.spec.delta}
    n_chains = sample.states.shape[0]
    for name, r in (("h", 0.0), ("h1", 1.0)):
        per_chain = sample.norms_sq(r).mean(axis=1)
        out[f"{name}_mean"] = float(per_chain.mean())
        out[f"{name}_se"] = float(per_chain.std(ddof=1) / math.sqrt(n_chains)) if n_chains > 1 else math.nan
    out["h1_budget"] = 0.5 * sample.epsilon * trace_Q(sample.spec).truncated
    out["n_samples"] = int(sample.states.shape[0] * sample.states.shape[1])
    return out


class _EnergyObserver:
    def __init__(self, idx, h, a):
        self.h, self.a = h, a
        self.integral = np.zeros(len(idx))
        self.prev = None
        self.last = None

    def update(self, i, t, u, y, z):
        e1 = (u * u) @ self.a
        if self.prev is not None:
            self.integral += 0.5 * self.h * (e1 + self.prev)
        self.prev = e1
        self.last = np.sum(u * u, axis=1)

    def result(self):
        return self.last + 2.0 * self.integral


def ito_energy_check(x: SpectralField, spec: NoiseSpec, cfg: SolverConfig, t: float, n_traj: int,
                     seed: int = 0) -> dict:
    """MC check of ``E|u(t)|^2 + 2 int_0^t E|u|_{H^1}^2 = |x|^2 + t eps Tr Q``.

    The time integral is the trapezoid rule on the solver grid; ``Tr Q`` is
    the truncated trace, which is the exact value for the Galerkin system.
    """
    n_steps, h = time_grid(t, cfg.h)
    vals = run_ensemble(x.coeffs, spec, cfg, t, seed, n_traj,
                        lambda idx: _EnergyObserver(idx, h, eigenvalues(cfg.n_modes)))
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n_traj)) if n_traj > 1 else math.nan
    target = float(np.sum(x.coeffs**2)) + t * spec.epsilon * trace_Q(spec).truncated
    return {"mean": mean, "se": se, "target": target, "z_score": (mean - target) / se if se else math.nan,
            "n_traj": n_traj}


# --- tail reports ------------------------------------------------------------

@dataclass
class TailRow:
    epsilon: float
    radius: float
    hits: int
    n: int
    p_hat: float | None
    se: float | None
    diagnostic: float | None

    @property
    def censored(self) -> bool:
        return self.p_hat is None


@dataclass
class TailReport:
    kind: str
    rows: list = field(default_factory=list)
    note: str = TAIL_NOTE
    meta: dict = field(default_factory=dict)

    def row(self, epsilon: float, radius: float) -> TailRow:
        for r in self.rows:
            if math.isclose(r.epsilon, epsilon) and math.isclose(r.radius, radius):
                return r
        raise KeyError((epsilon, radius))

    def radii(self) -> list:
        return sorted({r.radius for r in self.rows})

    def series(self, radius: float) -> list:
        """Rows for one radius, in order of decreasing epsilon."""
        rs = [r for r in self.rows if math.isclose(r.radius, radius)]
        return sorted(rs, key=lambda r: -r.epsilon)


class _Counted:
    """Pre-aggregated exceedance counts."""

    def __init__(self, hits, n):
        self.hits, self.n = hits, n


def _tail_cell(epsilon, radius, exceed, groups=None) -> TailRow:
    """Exceedance indicators (or counts) -> TailRow; ``groups`` gives batch means for the SE."""
    if isinstance(exceed, _Counted):
        hits, n = exceed.hits, exceed.n
    else:
        exceed = np.asarray(exceed, dtype=bool)
        n = int(exceed.size)
        hits = int(exceed.sum())
    if hits < MIN_HITS:
        return TailRow(epsilon, radius, hits, n, None, None, None)
    p = hits / n
    if groups is not None and groups.shape[0] > 1:
        means = groups.mean(axis=1)
        se = float(means.std(ddof=1) / math.sqrt(means.size))
    else:
        se = math.sqrt(p * (1.0 - p) / n)
    return TailRow(epsilon, radius, hits, n, p, se, -epsilon * math.log(p))


def tail_report(norms_by_eps: dict, radii, kind: str = "custom", batches: bool = False) -> TailReport:
    """Exceedance estimates ``P(norm >= R)`` for each (epsilon, R).

    With ``batches=True`` each value array is ``(n_batches, n_per_batch)``
    and the standard error uses batch means (for correlated samples).
    """
    rep = TailReport(kind)
    for eps, vals in norms_by_eps.items():
        vals = np.asarray(vals, dtype=float)
        for R in radii:
            ex = vals >= R
            rep.rows.append(_tail_cell(float(eps), float(R), ex, ex if batches and ex.ndim == 2 else None))
    return rep


def invariant_tails(cfg: ExperimentConfig, samples: dict | None = None, r: float | None = None) -> TailReport:
    """``nu_eps(|x|_{H^{2 sigma}} >= R)`` for every epsilon and radius in ``cfg``."""
    r = 2.0 * cfg.sigma_small if r is None else r
    if samples is None:
        samples = {e: sample_invariant(cfg, e, level_seed(cfg.seed, j)) for j, e in enumerate(cfg.epsilons)}
    norms = {e: np.sqrt(s.norms_sq(r)) for e, s in samples.items()}
    rep = tail_report(norms, cfg.radius_grid, "invariant", batches=True)
    rep.meta = {"sobolev_index": r, "n_modes": cfg.n_modes}
    return rep


class _TimeAverage:
    def __init__(self, idx, radii, n_blocks, n_steps, i0):
        self.radii = np.asarray(radii)
        self.counts = np.zeros((len(idx), n_blocks, self.radii.size))
        self.totals = np.zeros((len(idx), n_blocks))
        self.n_blocks, self.n_steps, self.i0 = n_blocks, n_steps, i0

    def update(self, i, t, u, y, z):
        if i < self.i0:
            return
        blk = min(self.n_blocks - 1, (i - self.i0) * self.n_blocks // (self.n_steps + 1 - self.i0))
        nrm = np.linalg.norm(u, axis=1)
        self.counts[:, blk, :] += nrm[:, None] >= self.radii
        self.totals[:, blk] += 1

    def result(self):
        return np.concatenate([self.counts, self.totals[..., None]], axis=-1)


def time_averaged_tails(cfg: ExperimentConfig, horizon: float | None = None, n_blocks: int = 20,
                        skip: float = 0.0) -> TailReport:
    """``(1/T) int_0^T P(|u_eps^0(t)|_H >= R) dt`` from one long run per epsilon.

    A single trajectory started at 0 is averaged over its grid times; the
    standard error uses ``n_blocks`` consecutive blocks.
    """
    T = cfg.horizon if horizon is None else horizon
    n_steps, h = time_grid(T, cfg.h)
    i0 = int(round(skip / h))
    rep = TailReport("time_average", meta={"horizon": T, "n_blocks": n_blocks, "skip": skip})
    for j, eps in enumerate(cfg.epsilons):
        res = run_ensemble(np.zeros(cfg.n_modes), cfg.spec(eps), cfg.solver(), T,
                           level_seed(cfg.seed, j), 1,
                           lambda idx: _TimeAverage(idx, cfg.radius_grid, n_blocks, n_steps, i0))[0]
        counts, totals = res[:, :-1], res[:, -1]
        for m, R in enumerate(cfg.radius_grid):
            hits = int(counts[:, m].sum())
            n = int(totals.sum())
            if hits < MIN_HITS:
                rep.rows.append(TailRow(eps, R, hits, n, None, None, None))
                continue
            p = hits / n
            frac = counts[:, m] / totals
            se = float(frac.std(ddof=1) / math.sqrt(n_blocks))
            rep.rows.append(TailRow(eps, R, hits, n, p, se, -eps * math.log(p)))
    return rep


def linear_mode_tails(epsilons, radius: float, n_samples, seed: int = 0,
                      relax: float = 5.0, chunk: int = 10_000_000) -> TailReport:
    """Tails of the single-mode linear system (N = 1, alpha = 0, delta = 0).

    Each sample is one exact OU transition of length ``relax`` from 0, which
    for mode 1 is stationary to ``exp(-2 pi^2 relax)``.  The stationary law
    is ``N(0, eps / (2 pi^2))`` and its quasi-potential is ``pi^2 R^2``.
    ``n_samples`` is a count or one count per epsilon.
    """
    counts = [int(n_samples)] * len(epsilons) if np.ndim(n_samples) == 0 else [int(n) for n in n_samples]
    if len(counts) != len(epsilons):
        raise ValueError("need one sample count per epsilon")
    rep = TailReport("linear_mode", meta={"quasi_potential": math.pi**2 * radius**2,
                                          "n_modes": 1, "relax": relax})
    for j, (eps, total) in enumerate(zip(epsilons, counts)):
        spec = NoiseSpec(0.0, 0.75, 0.0, float(eps), 1)
        _, g = ou_transition(spec.sigma(), spec.epsilon, relax)
        thresh = radius / g[0]
        base = level_seed(seed, j)
        hits = done = c = 0
        while done < total:
            m = min(chunk, total - done)
            xi = trajectory_rng(base, c).standard_normal(m)
            hits += int(np.count_nonzero(np.abs(xi) >= thresh))
            done += m
            c += 1
        rep.rows.append(_tail_cell(float(eps), radius, _Counted(hits, done)))
    return rep


def gaussian_mode_tail(epsilon: float, radius: float) -> float:
    """Exact ``P(|x| >= R)`` for ``x ~ N(0, eps / (2 pi^2))``."""
    return float(special.erfc(math.pi * radius / math.sqrt(epsilon)))


def convolution_tails(cfg: ExperimentConfig, t: float, n_samples: int, r: float | None = None) -> TailReport:
    """``P(|Z_eps(t)|_{H^{2 sigma}} >= R)`` along the epsilon ladder (exact Gaussian sampling)."""
    r = 2.0 * cfg.sigma_small if r is None else r
    norms = {}
    for j, eps in enumerate(cfg.epsilons):
        spec = cfg.spec(eps)
        _, g = ou_transition(spec.sigma(), spec.epsilon, t)
        xi = trajectory_rng(level_seed(cfg.seed, j), 0).standard_normal((n_samples, cfg.n_modes))
        norms[eps] = np.linalg.norm(xi * g * wavenumbers(cfg.n_modes) ** r, axis=1)
    rep = tail_report(norms, cfg.radius_grid, "convolution")
    rep.meta = {"t": t, "sobolev_index": r}
    return rep


# --- path (tube) probabilities -------------------------------------------------

class _TubeObserver:
    def __init__(self, idx, center):
        self.center = center
        self.dist = np.zeros(len(idx))

    def update(self, i, t, u, y, z):
        np.maximum(self.dist, np.linalg.norm(u - self.center[i], axis=1), out=self.dist)

    def result(self):
        return self.dist


def ldp_path_check(phi: SpectralField, cfg: ExperimentConfig, T: float, tube: float, n_traj: int,
                   center: TrajectoryPath | None = None, batch_size: int = 20_000) -> dict:
    """Tube probabilities ``P(sup_t |u_eps - u*|_H < tube)`` along the ladder.

    ``u*`` is the minimum-action path from 0 to ``phi`` on [0, T] (computed
    on the simulation grid unless ``center`` is supplied); its action, with
    the limiting weight ``A^(-alpha/2)``, is reported next to the
    diagnostic ``-eps log p_hat``.
    """
    n_steps, h = time_grid(T, cfg.h)
    if center is None:
        prob = ActionProblem(SpectralField.zeros(cfg.n_modes), phi, T, n_steps, cfg.alpha, cfg.nonlinear)
        center = mam_minimize(prob).path
    if center.n_steps != n_steps:
        raise ValueError("center path must live on the simulation grid")
    action = action_eval(center, cfg.alpha, nonlinear=cfg.nonlinear).value
    rep = TailReport("tube", meta={"T": T, "tube": tube, "action": action})
    for j, eps in enumerate(cfg.epsilons):
        d = run_ensemble(np.zeros(cfg.n_modes), cfg.spec(eps), cfg.solver(), T, level_seed(cfg.seed, j),
                         n_traj, lambda idx: _TubeObserver(idx, center.values), batch_size=batch_size)
        rep.rows.append(_tail_cell(eps, tube, d < tube))
    return {"report": rep, "action": action, "center": center}


def linear_tube_probability(epsilon: float, center: np.ndarray, h: float, tube: float,
                            n_grid: int = 401) -> float:
    """Exact tube probability for the single-mode linear chain (N = 1, alpha = delta = 0).

    Propagates the density of the deviation from ``center`` through the
    exact Gaussian transition kernel, killing mass that leaves the tube
    (Chapman-Kolmogorov on a trapezoid grid).  Independent of the simulator.
    """
    a = math.pi**2
    rho = math.exp(-a * h)
    g2 = epsilon * (-math.expm1(-2 * a * h)) / (2 * a)
    y = np.linspace(-tube, tube, n_grid)
    w = np.full(n_grid, y[1] - y[0])
    w[0] = w[-1] = w[0] / 2
    norm = 1.0 / math.sqrt(2 * math.pi * g2)
    c = np.asarray(center, dtype=float).reshape(-1)
    if abs(c[0]) >= tube:
        return 0.0
    dens = norm * np.exp(-(y - (rho * c[0] - c[1])) ** 2 / (2 * g2))
    for i in range(1, c.size - 1):
        m = rho * (y + c[i]) - c[i + 1]
        dens = (norm * np.exp(-(y[:, None] - m[None, :]) ** 2 / (2 * g2))) @ (w * dens)
    return float(w @ dens)


def trend(values, ses, direction: str = "decreasing", k: float = 3.0) -> str:
    """Classify a sequence ordered along the ladder (decreasing epsilon).

    ``"pass"`` if every consecutive change goes the stated way by more than
    ``k`` combined standard errors, ``"fail"`` if any change goes the other
    way by more than that, ``"inconclusive"`` otherwise.
    """
    sign = -1.0 if direction == "decreasing" else 1.0
    strict = True
    for (v0, s0), (v1, s1) in zip(zip(values, ses), zip(values[1:], ses[1:])):
        if v0 is None or v1 is None:
            return "inconclusive"
        band = k * math.hypot(s0 or 0.0, s1 or 0.0)
        step = sign * (v1 - v0)
        if step < -band:
            return "fail"
        if step <= band:
            strict = False
    return "pass" if strict else "inconclusive"
