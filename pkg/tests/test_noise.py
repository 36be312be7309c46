import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from burgers_ldp.noise import (DeltaSchedule, DiagonalNoise, NoiseSpec, NoiseStream, OUState,
                               ou_exact_step, ou_transition, schedule_delta, sigma_k, trace_Q,
                               trace_sum, trajectory_rng)
from burgers_ldp.spectral import eigenvalues

# frozen with mpmath at 30 digits
SIGMA_2 = 0.711765717515322022   # alpha=0.25, beta=1, delta=0.1, k=2
TRACE_A0 = 4.500000020611536267  # alpha=0, beta=1, delta=0.01, infinite sum
TRACE_A025 = 21.99066205833404721  # alpha=0.25, beta=1, delta=0.01, Euler-Maclaurin sum
TRACE_D0_N3 = 7.349062249375981995  # alpha=0.25, delta=0, N=3


def test_sigma_value():
    spec = NoiseSpec(0.25, 1.0, 0.1, 1.0, 4)
    assert sigma_k(spec, 2) == pytest.approx(SIGMA_2, rel=1e-14)
    with pytest.raises(ValueError):
        sigma_k(spec, 5)


def test_constraint_messages():
    with pytest.raises(ValueError, match=r"1/2 < beta - alpha < 1"):
        NoiseSpec(0.0, 0.4, 0.1, 0.1, 8)
    with pytest.raises(ValueError, match=r"1/2 < beta - alpha < 1"):
        NoiseSpec(0.0, 1.0, 0.1, 0.1, 8)
    with pytest.raises(ValueError, match=r"0 <= alpha < 1/2"):
        NoiseSpec(0.5, 1.2, 0.1, 0.1, 8)
    with pytest.raises(ValueError):
        NoiseSpec(0.0, 0.75, -1.0, 0.1, 8)
    with pytest.raises(ValueError):
        NoiseSpec(0.0, 0.75, 0.1, -0.1, 8)


def test_trace_closed_form():
    # beta - alpha = 1 is outside the noise family but the series still converges
    tq = trace_sum(0.0, 1.0, 0.01, 200)
    assert tq.extrapolated == pytest.approx(TRACE_A0, abs=1e-6)
    assert tq.truncated < TRACE_A0 <= tq.truncated + tq.tail_bound
    tq = trace_Q(NoiseSpec(0.25, 1.0, 0.01, 1.0, 400))
    assert tq.extrapolated == pytest.approx(TRACE_A025, rel=1e-6)


def test_trace_sum_rejects_divergent_series():
    with pytest.raises(ValueError, match="beta - alpha > 1/2"):
        trace_sum(0.0, 0.5, 0.01, 10)


def test_trace_delta_zero_is_truncated_sum():
    tq = trace_Q(NoiseSpec(0.25, 0.8, 0.0, 1.0, 3))
    assert tq.truncated == pytest.approx(TRACE_D0_N3, rel=1e-14)
    assert math.isinf(tq.tail_bound)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.45), st.floats(0.55, 0.95), st.floats(1e-4, 1.0), st.integers(4, 64))
def test_tail_bound_is_an_upper_bound(alpha, gap, delta, n):
    spec = NoiseSpec(alpha, alpha + gap, delta, 1.0, n)
    tq = trace_Q(spec)
    assert 0.0 <= tq.tail_estimate <= tq.tail_bound * (1 + 1e-12)
    assert tq.truncated > 0


def test_trace_increases_with_truncation():
    vals = [trace_Q(NoiseSpec(0.0, 0.75, 0.05, 1.0, n)).truncated for n in (4, 8, 16, 32)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_schedule():
    s = DeltaSchedule.default(0.0, 0.75)
    assert s.theta == pytest.approx(0.75)
    assert s.residual_exponent == pytest.approx(0.5)
    assert schedule_delta(0.01, s) == pytest.approx(0.01**0.75)
    assert schedule_delta(0.0, s) == 0.0
    with pytest.raises(ValueError, match="theta"):
        DeltaSchedule(2.0, 0.0, 0.75)
    spec = s.spec(0.1, 8)
    assert spec.delta == pytest.approx(0.1**0.75)


def test_spec_round_trip():
    spec = NoiseSpec(0.1, 0.8, 0.02, 0.3, 12)
    assert NoiseSpec.from_dict(spec.to_dict()) == spec
    d = spec.to_dict()
    del d["delta"]
    sched = DeltaSchedule(0.5, 0.1, 0.8)
    assert NoiseSpec.from_dict(d, sched).delta == pytest.approx(0.3**0.5)
    with pytest.raises(KeyError):
        NoiseSpec.from_dict(d)


def test_ou_transition_small_step_limit():
    sig = np.array([1.0, 0.5])
    decay, g = ou_transition(sig, 0.2, 1e-8)
    np.testing.assert_allclose(g**2, 0.2 * sig**2 * 1e-8, rtol=1e-6)
    np.testing.assert_allclose(decay, np.exp(-np.array([1, 4]) * math.pi**2 * 1e-8))


def test_ou_variance_composes():
    # two exact half steps have the same law as one full step
    sig = NoiseSpec(0.0, 0.75, 0.1, 0.3, 5).sigma()
    d1, g1 = ou_transition(sig, 0.3, 0.02)
    d2, g2 = ou_transition(sig, 0.3, 0.01)
    np.testing.assert_allclose(d1, d2**2, rtol=1e-14)
    np.testing.assert_allclose(g1**2, d2**2 * g2**2 + g2**2, rtol=1e-13)


def test_ou_stationary_variance():
    spec = NoiseSpec(0.0, 0.75, 0.1, 0.2, 3)
    n = 100_000
    _, g = ou_transition(spec.sigma(), spec.epsilon, 5.0)
    xi = trajectory_rng(11, 0).standard_normal((n, 3))
    z = xi * g
    target = spec.epsilon * spec.sigma() ** 2 / (2 * (np.arange(1, 4) * math.pi) ** 2)
    var = np.mean(z**2, axis=0)
    se = np.std(z**2, axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(var - target) <= 3 * se)


def test_ou_exact_step_state():
    spec = NoiseSpec(0.0, 0.75, 0.1, 0.2, 4)
    st0 = OUState.start(4, seed=1)
    st1 = ou_exact_step(st0, spec, 0.01)
    assert st1.t == pytest.approx(0.01)
    assert np.any(st1.z.coeffs != 0)
    with pytest.raises(ValueError):
        ou_exact_step(st1, spec, 0.0)


def test_zero_noise_step_is_pure_decay():
    spec = NoiseSpec(0.0, 0.75, 0.1, 0.0, 2)
    st0 = OUState.start(2, seed=0)
    st0 = OUState(st0.z + st0.z.mode(1, 2), 0.0, st0.rng)
    st1 = ou_exact_step(st0, spec, 0.1)
    assert st1.z.coeffs[0] == pytest.approx(math.exp(-math.pi**2 * 0.1))


def test_stream_independent_of_batching_and_chunking():
    whole = NoiseStream(5, range(6), 3).draw(10)
    parts = np.concatenate([NoiseStream(5, [j], 3).draw(10) for j in range(6)], axis=1)
    np.testing.assert_array_equal(whole, parts)
    s = NoiseStream(5, [2, 4], 3)
    chunked = np.concatenate([s.draw(4), s.draw(6)], axis=0)
    np.testing.assert_array_equal(chunked, whole[:, [2, 4], :])


def test_streams_differ_across_seeds_and_indices():
    a = trajectory_rng(1, 0).standard_normal(4)
    assert not np.array_equal(a, trajectory_rng(1, 1).standard_normal(4))
    assert not np.array_equal(a, trajectory_rng(2, 0).standard_normal(4))


def test_diagonal_noise():
    dn = DiagonalNoise.power_law(0.5, 0.1, 4)
    np.testing.assert_allclose(dn.sigma(), (np.arange(1, 5) * math.pi) ** 0.5)
    assert dn.n_modes == 4


SIGMA_1 = 1.27013150252806069   # alpha=0.25, beta=1, delta=0.01, k=1


def test_sigma_first_mode():
    assert sigma_k(NoiseSpec(0.25, 1.0, 0.01, 1.0, 2), 1) == pytest.approx(SIGMA_1, rel=1e-14)


def test_single_mode_trace():
    assert trace_sum(0.0, 1.0, 1.0, 1).truncated == pytest.approx(1 / (1 + math.pi**2), rel=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 0.49), st.floats(0.51, 0.99), st.floats(1e-4, 1.0), st.floats(1.01, 3.0),
       st.integers(1, 40))
def test_sigma_decreases_in_delta(alpha, gap, delta, factor, n):
    lo = NoiseSpec(alpha, alpha + gap, delta, 1.0, n).sigma()
    hi = NoiseSpec(alpha, alpha + gap, delta * factor, 1.0, n).sigma()
    assert np.all(hi < lo)
    assert np.all(hi > 0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 0.49), st.floats(0.51, 0.99), st.floats(1e-4, 1.0))
def test_weighted_covariance_sum_stays_bounded(alpha, gap, delta):
    # sum sigma_k^2 / (k pi)^2 <= sum (k pi)^(2 alpha - 2) < inf, uniformly in N
    s = NoiseSpec(alpha, alpha + gap, delta, 1.0, 2000).sigma()
    partial = np.cumsum(s**2 / eigenvalues(2000))
    assert np.all(np.diff(partial) > 0)
    bound = math.pi ** (2 * alpha - 2) * (1 + 1 / (1 - 2 * alpha))
    assert partial[-1] < bound


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 0.49), st.floats(0.51, 0.99), st.floats(1e-3, 1.0), st.integers(1, 200))
def test_tail_bound_shrinks_with_truncation(alpha, gap, delta, n):
    a = trace_sum(alpha, alpha + gap, delta, n)
    b = trace_sum(alpha, alpha + gap, delta, n + 1)
    assert b.tail_bound < a.tail_bound
    assert b.truncated > a.truncated


def test_mode_one_stationary_variance_at_unit_gap():
    # alpha = 0, beta = 1 sits on the edge of the constraint, so build sigma by hand
    sigma = np.array([1.0 / math.sqrt(1.0 + 0.01 * math.pi**2)])
    decay, g = ou_transition(sigma, 0.1, 1.0)
    rng = trajectory_rng(151, 0)
    z = np.zeros(100_000)
    for _ in range(2):
        z = decay[0] * z + g[0] * rng.standard_normal(z.size)
    target = 0.1 * sigma[0] ** 2 / (2 * math.pi**2)
    se = np.std(z**2, ddof=1) / math.sqrt(z.size)
    assert abs(np.mean(z**2) - target) <= 3 * se
