import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from burgers_ldp.experiments import ito_energy_check
from burgers_ldp.noise import DeltaSchedule, DiagonalNoise, NoiseSpec
from burgers_ldp.solver import (BlowUpError, SolverConfig, TrajectoryPath, gx_map, run_ensemble,
                                simulate_batch, simulate_sbe, solve_skeleton, step_Y, time_grid,
                                worker_count)
from burgers_ldp.spectral import SpectralField, eigenvalues, wavenumbers

SCHEMES = ("exponential-euler", "semi-implicit")


def _spec(eps=0.1, n=8):
    return DeltaSchedule.default(0.0, 0.75).spec(eps, n)


def test_config_validation():
    with pytest.raises(ValueError, match="scheme"):
        SolverConfig(scheme="rk4")
    with pytest.raises(ValueError, match="2M > 3N"):
        SolverConfig(n_modes=8, m_grid=12)
    with pytest.raises(ValueError):
        SolverConfig(h=0.0)
    assert SolverConfig(n_modes=8).m_grid == 13
    assert SolverConfig(h=1e-3, n_modes=64).stiffness == pytest.approx(1e-3 * (64 * math.pi) ** 2)


def test_time_grid():
    assert time_grid(1.0, 1e-3) == (1000, pytest.approx(1e-3))
    n, h = time_grid(1.0, 0.3)
    assert n == 4 and h == pytest.approx(0.25)


def test_path_validation():
    with pytest.raises(ValueError):
        TrajectoryPath(np.array([0.0, 0.1, 0.3]), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        TrajectoryPath(np.array([0.0, 0.1]), np.array([[0.0], [np.nan]]))
    p = TrajectoryPath.uniform(1.0, np.ones((5, 2)))
    assert p.h == pytest.approx(0.25) and p.n_steps == 4 and p.T == 1.0
    assert p.sup_distance(p) == 0.0


@pytest.mark.parametrize("scheme", SCHEMES)
def test_zero_noise_zero_start_stays_zero(scheme):
    p = simulate_sbe(SpectralField.zeros(8), _spec(0.0), SolverConfig(h=1e-3, scheme=scheme, n_modes=8), 0.2)
    assert np.all(p.values == 0.0)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_deterministic_decay(scheme):
    cfg = SolverConfig(h=1e-3, scheme=scheme, n_modes=16)
    x = SpectralField.mode(1, 16)
    p = simulate_sbe(x, _spec(0.0, 16), cfg, 5.0)
    e = np.sum(p.values**2, axis=1)
    assert np.all(e <= np.exp(-p.times) * 1.0 + 1e-15)


def test_linear_exponential_euler_is_exact():
    cfg = SolverConfig(h=0.01, n_modes=4, nonlinear=False)
    x = SpectralField(np.array([1.0, -0.5, 0.2, 0.1]))
    p = simulate_sbe(x, _spec(0.0, 4), cfg, 0.3)
    ref = np.exp(-np.outer(p.times, eigenvalues(4))) * x.coeffs
    np.testing.assert_allclose(p.values, ref, rtol=1e-12, atol=1e-300)


def test_semi_implicit_linear_step():
    cfg = SolverConfig(h=0.01, scheme="semi-implicit", n_modes=3, nonlinear=False)
    y = step_Y(SpectralField(np.ones(3)), SpectralField.zeros(3), 0.01, cfg)
    np.testing.assert_allclose(y.coeffs, 1.0 / (1.0 + 0.01 * eigenvalues(3)))


@pytest.mark.parametrize("scheme", SCHEMES)
def test_first_order_convergence(scheme):
    # deterministic nonlinear run with a frozen forcing path; reference at h/64
    n = 8
    x = SpectralField(np.array([1.0, 0.5, -0.3, 0.1, 0, 0, 0, 0]))
    T = 0.2

    def run(h):
        cfg = SolverConfig(h=h, scheme=scheme, n_modes=n)
        steps, hh = time_grid(T, h)
        phi = TrajectoryPath.uniform(T, np.outer(np.sin(np.linspace(0, T, steps + 1) * 7), np.ones(n) * 0.3))
        return gx_map(x, phi, cfg).values[-1]

    ref = run(1e-2 / 64)
    errs = [np.linalg.norm(run(h) - ref) for h in (1e-2, 5e-3, 2.5e-3)]
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    for r in ratios:
        assert 1.7 < r < 2.4


def test_step_Y_mode_mismatch():
    with pytest.raises(ValueError):
        step_Y(SpectralField.zeros(3), SpectralField.zeros(4), 0.01, SolverConfig(n_modes=3))


def test_blow_up_detected():
    cfg = SolverConfig(h=0.5, n_modes=4)
    with pytest.raises(BlowUpError) as info:
        simulate_sbe(SpectralField(np.array([1e5, 0, 0, 0])), _spec(0.0, 4), cfg, 2.0)
    assert info.value.time == pytest.approx(0.5)


def test_simulation_is_reproducible():
    cfg = SolverConfig(h=1e-3, n_modes=8)
    a = simulate_sbe(SpectralField.zeros(8), _spec(), cfg, 0.1, seed=9)
    b = simulate_sbe(SpectralField.zeros(8), _spec(), cfg, 0.1, seed=9)
    c = simulate_sbe(SpectralField.zeros(8), _spec(), cfg, 0.1, seed=10)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    np.testing.assert_allclose(a.extras["y"] + a.extras["z"], a.values)
    assert a.meta["seed"] == 9 and a.meta["scheme"] == "exponential-euler"


class _Final:
    def __init__(self, idx):
        self.u = None

    def update(self, i, t, u, y, z):
        self.u = u.copy()

    def result(self):
        return self.u


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 7), st.integers(1, 4))
def test_ensemble_independent_of_batching(batch, workers):
    cfg = SolverConfig(h=1e-2, n_modes=6)
    ref = run_ensemble(np.zeros(6), _spec(0.2, 6), cfg, 0.1, 3, 9, _Final, batch_size=9, workers=1)
    got = run_ensemble(np.zeros(6), _spec(0.2, 6), cfg, 0.1, 3, 9, _Final, batch_size=batch, workers=workers)
    np.testing.assert_array_equal(ref, got)


def test_single_trajectory_matches_ensemble_member():
    cfg = SolverConfig(h=1e-2, n_modes=6)
    ens = run_ensemble(np.zeros(6), _spec(0.2, 6), cfg, 0.1, 3, 4, _Final, batch_size=4)
    one = simulate_sbe(SpectralField.zeros(6), _spec(0.2, 6), cfg, 0.1, seed=3)
    np.testing.assert_array_equal(ens[0], one.values[-1])


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("BURGERS_LDP_THREADS", "1")
    assert worker_count() == 1
    monkeypatch.setenv("BURGERS_LDP_THREADS", "junk")
    assert worker_count() >= 1


def test_diagonal_noise_simulates():
    cfg = SolverConfig(h=1e-3, n_modes=4)
    noise = DiagonalNoise.power_law(0.0, 0.05, 4)
    y, z = simulate_batch(np.zeros(4), noise, cfg, 0.05, 1, [0, 1])
    assert y.shape == (2, 4) and np.all(np.isfinite(z))


def test_ito_identity_small():
    r = ito_energy_check(SpectralField.mode(1, 8, 0.5), _spec(0.1, 8), SolverConfig(h=1e-3, n_modes=8),
                         0.5, 2000, seed=3)
    assert abs(r["mean"] - r["target"]) <= 3 * r["se"]


# --- skeleton ---------------------------------------------------------------------

def _control(T, h, n, rng, scale=3.0):
    steps = int(round(T / h))
    t = np.linspace(0.0, T, steps + 1)[:, None]
    f = sum(rng.normal(size=n) * np.cos(j * math.pi * t + rng.uniform(0, 6)) for j in range(4)) * scale
    return TrajectoryPath.uniform(T, f)


def test_skeleton_trivial():
    cfg = SolverConfig(h=1e-3, n_modes=4)
    f = TrajectoryPath.uniform(0.1, np.zeros((101, 4)))
    assert np.all(solve_skeleton(SpectralField.zeros(4), f, 0.0, cfg, 0.1).values == 0.0)


def test_skeleton_validation():
    cfg = SolverConfig(h=1e-3, n_modes=4)
    f = TrajectoryPath.uniform(0.1, np.zeros((101, 4)))
    with pytest.raises(ValueError):
        solve_skeleton(SpectralField.zeros(4), f, 0.5, cfg, 0.1)
    with pytest.raises(ValueError):
        solve_skeleton(SpectralField.zeros(4), f, 0.0, cfg, 0.2)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_skeleton_dissipation_per_step(scheme):
    n = 16
    cfg = SolverConfig(h=1e-3, scheme=scheme, n_modes=n)
    f = TrajectoryPath.uniform(1.0, np.zeros((1001, n)))
    u = solve_skeleton(SpectralField.mode(1, n), f, 0.0, cfg, 1.0).values
    e = np.sum(u**2, axis=1)
    e1 = np.sum((u * wavenumbers(n)) ** 2, axis=1)
    rate = np.diff(e) / cfg.h + e1[1:]
    assert np.all(rate <= 1e-8 * e[1:])


def test_skeleton_energy_budget_random_controls():
    rng = np.random.default_rng(1)
    n, T = 16, 1.0
    cfg = SolverConfig(h=1e-3, n_modes=n)
    for _ in range(5):
        alpha = rng.uniform(0.0, 0.49)
        x = SpectralField(rng.normal(size=n) / wavenumbers(n))
        f = _control(T, cfg.h, n, rng)
        u = solve_skeleton(x, f, alpha, cfg, T).values
        h = f.h
        e = np.sum(u**2, axis=1)
        e1 = np.sum((u * wavenumbers(n)) ** 2, axis=1)
        ff = np.sum(f.values**2, axis=1)
        lhs = e + np.concatenate([[0.0], np.cumsum(e1[:-1]) * h])
        rhs = np.concatenate([[0.0], np.cumsum(ff[:-1]) * h]) + e[0]
        assert np.all(lhs <= rhs * (1 + 1e-6))


# --- solution map G_x -----------------------------------------------------------------

def test_gx_trivial():
    cfg = SolverConfig(h=1e-3, n_modes=4)
    phi = TrajectoryPath.uniform(0.1, np.zeros((101, 4)))
    assert np.all(gx_map(SpectralField.zeros(4), phi, cfg).values == 0.0)


def test_gx_lipschitz_probe():
    rng = np.random.default_rng(5)
    n, T = 8, 0.5
    cfg = SolverConfig(h=1e-3, n_modes=n)
    x = SpectralField(rng.normal(size=n))
    x = x * (0.9 / math.sqrt(float(np.sum(x.coeffs**2))))
    phi = TrajectoryPath.uniform(T, rng.normal(size=(501, n)) * 0.3)
    psi = rng.normal(size=(501, n))
    psi /= np.max(np.linalg.norm(psi, axis=1))
    base = gx_map(x, phi, cfg)
    ratios = []
    for eta in (1e-2, 1e-3, 1e-4):
        pert = gx_map(x, TrajectoryPath.uniform(T, phi.values + eta * psi), cfg)
        ratios.append(pert.sup_distance(base) / eta)
    assert max(ratios) / min(ratios) < 1.2


def test_gx_continuity_in_initial_state():
    rng = np.random.default_rng(6)
    n, T = 8, 0.5
    cfg = SolverConfig(h=1e-3, n_modes=n)
    phi = TrajectoryPath.uniform(T, rng.normal(size=(501, n)) * 0.3)
    consts = []
    for _ in range(10):
        a, b = rng.normal(size=(2, n))
        a *= rng.uniform(0, 1) / np.linalg.norm(a)
        b *= rng.uniform(0, 1) / np.linalg.norm(b)
        d = gx_map(SpectralField(a), phi, cfg).sup_distance(gx_map(SpectralField(b), phi, cfg))
        consts.append(d / np.linalg.norm(a - b))
    assert all(math.isfinite(c) for c in consts)
    # the linear part is a contraction in H, so the constant cannot be far above 1
    assert max(consts) < 10.0


def test_schemes_agree_to_first_order():
    # same forcing path through both schemes: sup_t |EE - SI|_H halves with h
    n, T = 8, 0.2
    x = SpectralField(np.array([1.0, 0.5, -0.3, 0.1, 0, 0, 0, 0]))

    def gap(h):
        steps, _ = time_grid(T, h)
        phi = TrajectoryPath.uniform(T, np.outer(np.sin(np.linspace(0, T, steps + 1) * 7), np.ones(n) * 0.3))
        a, b = (gx_map(x, phi, SolverConfig(h=h, scheme=s, n_modes=n)).values
                for s in ("exponential-euler", "semi-implicit"))
        return np.max(np.linalg.norm(a - b, axis=1))

    g = [gap(h) for h in (1e-2, 5e-3, 2.5e-3)]
    for r in (g[0] / g[1], g[1] / g[2]):
        assert 1.5 < r < 2.5
