import json
from pathlib import Path

import numpy as np
import pytest

from rdirl.environments import (
    CARTPOLE_CONSTANTS,
    cartpole,
    cartpole_step,
    fim_reward,
    make_env,
    mountaincar_step,
    radar_fim,
    radar_jacobian,
    radar_step,
    wrap_angle,
)

GOLDEN = json.loads((Path(__file__).parent / "data" / "golden_traces.json").read_text())


@pytest.mark.parametrize("name", ["cartpole", "mountaincar", "radar"])
def test_golden_five_step_traces(name):
    trace = GOLDEN[name]
    env = make_env(name)
    x = env.reset(trace["reset_seed"])
    np.testing.assert_array_equal(x, trace["states"][0])
    for u, expected in zip(trace["controls"], trace["states"][1:]):
        x = env.step(x, np.array(u))
        np.testing.assert_array_equal(x, expected)


@pytest.mark.parametrize("name", ["cartpole", "mountaincar", "radar", "double_integrator"])
def test_steps_are_pure(name):
    env = make_env(name)
    x = env.reset(1)
    x_copy = x.copy()
    u = np.full(env.control_dim, 0.4)
    assert np.array_equal(env.step(x, u), env.step(x, u))
    np.testing.assert_array_equal(x, x_copy)


def test_unknown_env():
    with pytest.raises(ValueError):
        make_env("hopper")


# -- CartPole -----------------------------------------------------------------


def test_cartpole_upright_equilibrium():
    x = np.zeros(4)
    for _ in range(150):
        x = cartpole_step(x, np.array([0.0]))
    np.testing.assert_array_equal(x, np.zeros(4))


@pytest.mark.parametrize("theta0", [0.01, -0.01])
def test_cartpole_small_angle_grows_with_sign(theta0):
    c = CARTPOLE_CONSTANTS
    total = c["masscart"] + c["masspole"]
    # linearized pole dynamics: theta_acc = g theta / (l (4/3 - m_p / M))
    a = c["gravity"] / (c["length"] * (4.0 / 3.0 - c["masspole"] / total))
    x = np.array([0.0, 0.0, theta0, 0.0])
    lin = np.array([theta0, 0.0])
    prev = abs(theta0)
    for _ in range(10):
        x = cartpole_step(x, np.array([0.0]))
        lin = np.array([lin[0] + c["tau"] * lin[1], lin[1] + c["tau"] * a * lin[0]])
        assert np.sign(x[2]) == np.sign(theta0)
        assert abs(x[2]) >= prev
        prev = abs(x[2])
        assert x[2] == pytest.approx(lin[0], rel=1e-3)
    assert abs(x[2]) > abs(theta0)


def test_cartpole_force_is_clamped():
    x = np.array([0.0, 0.0, 0.05, 0.0])
    np.testing.assert_array_equal(cartpole_step(x, np.array([50.0])), cartpole_step(x, np.array([10.0])))


def test_cartpole_without_pole_conserves_velocity():
    x = np.array([0.3, 1.7, 0.0, 0.0])
    for _ in range(50):
        x = cartpole_step(x, np.array([0.0]), masspole=0.0)
        assert x[1] == 1.7


def test_cartpole_reward_and_terminal_box():
    env = cartpole()
    inside = np.array([2.3, 0.0, 0.2, 0.0])
    outside = np.array([[2.5, 0, 0, 0], [0, 0, 0.25, 0]], dtype=float)
    assert env.true_reward(inside) == 1.0 and not env.is_terminal(inside)
    np.testing.assert_array_equal(env.true_reward(outside), [0.0, 0.0])
    assert env.max_steps == 150


# -- MountainCar --------------------------------------------------------------


def test_mountaincar_valley_equilibrium():
    x = np.array([-np.pi / 6, 0.0])
    nxt = mountaincar_step(x, np.array([0.0]))
    assert nxt[0] == pytest.approx(x[0], abs=1e-18)
    assert abs(nxt[1]) < 1e-18


def test_mountaincar_full_throttle_fails():
    env = make_env("mountaincar")
    x = np.array([-np.pi / 6, 0.0])
    for _ in range(200):
        x = env.step(x, np.array([1.0]))
        assert not env.is_terminal(x)


def test_mountaincar_clamps():
    x = np.array([-1.2, -0.07])
    nxt = mountaincar_step(x, np.array([-1.0]))
    assert nxt[0] >= -1.2 and abs(nxt[1]) <= 0.07
    fast = mountaincar_step(np.array([0.0, 0.07]), np.array([1.0]))
    assert fast[1] <= 0.07


def test_mountaincar_reward():
    env = make_env("mountaincar")
    assert env.true_reward(np.array([0.0, 0.0])) == -1.0
    assert env.true_reward(np.array([0.5, 0.0])) == 0.0
    assert env.max_steps == 200


# -- Radar --------------------------------------------------------------------


def radar_state(radar=(0, 0, 0, 0, 0, 0), target=(50, 0, 10), velocity=(0, 0, 0)):
    return np.array([*radar, *target, *velocity], dtype=float)


def test_radar_stationary_when_idle():
    s = radar_state(target=(10, 20, 5), velocity=(1, -2, 0.5))
    nxt = radar_step(s, np.zeros(2))
    np.testing.assert_array_equal(nxt[:6], s[:6])
    np.testing.assert_allclose(nxt[6:9], [10.1, 19.8, 5.05])


def test_radar_closing_iff_faster_along_line_of_sight():
    target_speed = 3.0
    for radar_speed, closing in [(5.0, True), (2.0, False)]:
        s = radar_state(radar=(0, 0, 0, 0, radar_speed, 0), target=(100, 0, 0), velocity=(target_speed, 0, 0))
        d0 = np.linalg.norm(s[6:9] - s[:3])
        for _ in range(20):
            s = radar_step(s, np.zeros(2))
        d1 = np.linalg.norm(s[6:9] - s[:3])
        assert (d1 < d0) == closing


def test_radar_heading_wraps_and_limits_hold():
    s = radar_state(radar=(0, 0, 0, np.pi - 0.01, 19.9, 1.0))
    for _ in range(30):
        s = radar_step(s, np.array([100.0, 100.0]))
        assert -np.pi < s[3] <= np.pi
        assert 0.0 <= s[4] <= 20.0 and abs(s[5]) <= 1.0
    assert wrap_angle(np.pi) == np.pi and wrap_angle(-np.pi) == np.pi


def test_fim_monotone_in_range():
    direction = np.array([0.6, 0.7, 0.2]) / np.linalg.norm([0.6, 0.7, 0.2])
    values = [float(fim_reward(radar_state(target=r * direction))) for r in (2, 5, 10, 50, 100, 400)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_fim_symmetric_pd():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = radar_state(radar=(*rng.normal(size=3) * 20, 0, 0, 0), target=rng.normal(size=3) * 100)
        J = radar_fim(s)
        np.testing.assert_allclose(J, J.T, rtol=1e-12)
        assert np.linalg.eigvalsh(J).min() > 0


def test_fim_distance_clamp_keeps_reward_finite():
    s = radar_state(target=(0.0, 0.0, 0.0))
    _, d = radar_jacobian(s)
    assert d == 1.0
    assert np.isfinite(fim_reward(radar_state(target=(0.1, 0.0, 0.0))))


def test_fim_matches_numeric_jacobian():
    from rdirl.verification import envs_suite

    result = envs_suite()
    assert result.passed, result.line()
