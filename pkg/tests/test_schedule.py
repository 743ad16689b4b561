import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from strdp.errors import ConfigError, RangeError, ScheduleError, ShapeError
from strdp.schedule import DiffusionSchedule, build_schedule, strength_to_steps


def sched(*alphas):
    return DiffusionSchedule(np.array([1.0, *alphas]))


def test_constant_beta_matches_closed_form():
    b, T, N = 0.01, 50, 1000
    s = build_schedule(T, b, b, N)
    ratio = N // T
    expected = [1.0] + [(1 - b) ** ((k - 1) * ratio + 1) for k in range(1, T + 1)]
    np.testing.assert_allclose(s.alphas_bar, expected, rtol=1e-12)


def test_full_ladder_when_T_equals_train_steps():
    b = 0.002
    s = build_schedule(100, b, b, 100)
    np.testing.assert_allclose(s.alphas_bar, [(1 - b) ** k for k in range(101)], rtol=1e-12)
    assert s.train_timesteps.tolist() == list(range(100))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 200), st.floats(1e-5, 0.02), st.floats(0, 0.05))
def test_schedule_invariants(T, beta_start, extra):
    s = build_schedule(T, beta_start, beta_start + extra, 1000)
    assert s.alphas_bar[0] == 1.0
    assert np.all(np.diff(s.alphas_bar) < 0)
    assert 0 < s.alphas_bar[-1] < 1
    assert s.T == T


def test_default_schedule_values():
    s = build_schedule()
    assert s.T == 50
    assert s.alphas_bar[1] == pytest.approx(1 - 0.00085)


@pytest.mark.parametrize("kwargs", [
    dict(T=0), dict(T=2000), dict(beta_start=0.0), dict(beta_start=0.02, beta_end=0.01),
    dict(beta_end=1.0), dict(beta_schedule="cosine"),
])
def test_build_schedule_rejects(kwargs):
    with pytest.raises(ConfigError):
        build_schedule(**kwargs)


@pytest.mark.parametrize("S,T,expected", [
    (0.3, 50, 15), (0.0, 50, 0), (1.0, 50, 50),
    (0.1, 50, 5), (0.5, 50, 25), (0.7, 50, 35), (0.9, 50, 45),
    (0.5, 5, 3), (0.5, 3, 2), (0.25, 2, 1),  # halves round away from zero
])
def test_strength_to_steps(S, T, expected):
    assert strength_to_steps(S, T) == expected


@pytest.mark.parametrize("S", [-0.1, 1.5])
def test_strength_out_of_range(S):
    with pytest.raises(RangeError):
        strength_to_steps(S, 50)


def test_forward_step_fixtures():
    s = sched(0.5)
    z = torch.tensor([1.0], dtype=torch.float64)
    # sqrt(0.5) * 1 + sqrt(0.5) * 0.2
    assert float(s.forward_step(z, 1, torch.tensor([0.2], dtype=torch.float64))) == \
        pytest.approx(0.84853, abs=1e-5)
    zero = torch.zeros(1, dtype=torch.float64)
    assert float(s.forward_step(zero, 1, zero)) == 0.0
    flat = DiffusionSchedule(np.array([1.0, 0.5, 0.49]))
    z = torch.tensor([3.0], dtype=torch.float64)
    # equal consecutive levels are not allowed, so check the ratio factor directly
    assert float(flat.forward_step(z, 2, zero)) == pytest.approx(3.0 * math.sqrt(0.49 / 0.5))


def test_reverse_step_fixture():
    s = sched(0.81, 0.25)
    eps = 0.5
    z_t = torch.tensor([math.sqrt(0.25) * 1.0 + math.sqrt(0.75) * eps], dtype=torch.float64)
    out = s.reverse_step(z_t, torch.tensor([eps], dtype=torch.float64), 2)
    assert float(out) == pytest.approx(1.11794, abs=1e-5)


def test_reverse_step_zero_noise_from_clean_level():
    s = sched(0.36)
    z = torch.tensor([0.6, -1.2], dtype=torch.float64)
    out = s.reverse_step(z, torch.zeros(2, dtype=torch.float64), 1)
    torch.testing.assert_close(out, z / 0.6)


def test_reverse_step_deterministic(rng, schedule):
    z = torch.from_numpy(rng.standard_normal((4, 8, 8)))
    e = torch.from_numpy(rng.standard_normal((4, 8, 8)))
    assert torch.equal(schedule.reverse_step(z, e, 10), schedule.reverse_step(z, e, 10))


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(-5, 5), st.integers(1, 50))
def test_predicted_z0_recovers_marginal(z0, eps, t):
    s = build_schedule(50)
    a = s.alpha_bar(t)
    z_t = math.sqrt(a) * z0 + math.sqrt(1 - a) * eps
    assert s.predicted_z0(z_t, eps, t) == pytest.approx(z0, abs=1e-7)


def test_predicted_z0_at_unit_signal_level_returns_input():
    # alpha_bar is exactly 1 only at index 0; a vanishing beta gets arbitrarily close
    s = build_schedule(1, 1e-15, 1e-15, 1)
    assert s.predicted_z0(2.0, 0.7, 1) == pytest.approx(2.0, abs=1e-7)


def test_predicted_z0_random_against_formula(rng):
    s = build_schedule(50)
    for _ in range(20):
        t = int(rng.integers(1, 51))
        z, e = rng.standard_normal(2)
        a = s.alphas_bar[t]
        assert s.predicted_z0(z, e, t) == pytest.approx((z - np.sqrt(1 - a) * e) / np.sqrt(a),
                                                        abs=1e-7)


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(-5, 5), st.integers(1, 50))
def test_reverse_step_two_term_decomposition(z, e, t):
    s = build_schedule(50)
    a_prev = s.alpha_bar(t - 1)
    rhs = math.sqrt(a_prev) * s.predicted_z0(z, e, t) + math.sqrt(1 - a_prev) * e
    assert s.reverse_step(z, e, t) == rhs


def test_direct_noise_to():
    s = sched(0.36)
    z0 = torch.tensor([2.0], dtype=torch.float64)
    one = torch.ones(1, dtype=torch.float64)
    assert torch.equal(s.direct_noise_to(z0, 0, one), z0)
    assert float(s.direct_noise_to(z0, 1, one)) == pytest.approx(2.0)  # 0.6*2 + 0.8*1
    assert float(s.direct_noise_to(z0, 1, 0 * one)) == pytest.approx(1.2)


@pytest.mark.parametrize("t", [0, 51])
def test_step_index_out_of_range(schedule, t):
    z = torch.zeros(2)
    with pytest.raises(ScheduleError):
        schedule.reverse_step(z, z, t)
    with pytest.raises(ScheduleError):
        schedule.forward_step(z, t, z)


def test_direct_noise_to_range(schedule):
    with pytest.raises(ScheduleError):
        schedule.direct_noise_to(torch.zeros(2), 51, torch.zeros(2))


def test_shape_mismatch(schedule):
    with pytest.raises(ShapeError):
        schedule.reverse_step(torch.zeros(2), torch.zeros(3), 1)


def test_schedule_is_immutable(schedule):
    with pytest.raises(ValueError):
        schedule.alphas_bar[1] = 0.5
