import dataclasses

import numpy as np
import pytest

from rdirl.environments import make_env
from rdirl.expert import (
    Trajectory,
    TrajectoryFormatError,
    generate_expert,
    load_trajectory,
    record_size,
    save_trajectory,
    trajectory_from_bytes,
    trajectory_to_bytes,
    zero_control_reward,
)
from rdirl.mppi import mppi_preset


def random_trajectory(rng, name="radar", controls=True, n=7):
    env = make_env(name)
    return Trajectory(
        name,
        rng.normal(size=env.state_dim),
        rng.normal(size=(n, env.state_dim)),
        rng.normal(size=n),
        rng.normal(size=(n, env.control_dim)) if controls else None,
        seed=int(rng.integers(-5, 1000)),
        truncated=bool(rng.integers(2)),
    )


@pytest.mark.parametrize("controls", [True, False])
def test_round_trip_is_bitwise(tmp_path, controls):
    rng = np.random.default_rng(0)
    traj = random_trajectory(rng, controls=controls)
    path = tmp_path / "demo.rdtr"
    save_trajectory(traj, path)
    assert load_trajectory(path) == traj


def test_byte_length_matches_header_arithmetic():
    rng = np.random.default_rng(1)
    for name, controls, n in [("cartpole", False, 150), ("mountaincar", True, 3), ("radar", False, 1)]:
        env = make_env(name)
        traj = random_trajectory(rng, name, controls, n)
        data = trajectory_to_bytes(traj)
        header = 8 + len(name) + 28 + 8 * env.state_dim
        assert len(data) == header + n * record_size(env.state_dim, env.control_dim, controls)
        assert record_size(env.state_dim, env.control_dim, controls) == 8 * (2 + env.state_dim + (env.control_dim if controls else 0))


def test_truncated_file_is_rejected():
    data = trajectory_to_bytes(random_trajectory(np.random.default_rng(2)))
    for cut in (3, 10, len(data) - 1):
        with pytest.raises(TrajectoryFormatError):
            trajectory_from_bytes(data[:cut])


def test_bad_magic_and_version_are_rejected():
    data = bytearray(trajectory_to_bytes(random_trajectory(np.random.default_rng(3))))
    bad = bytes(b"XXXX" + data[4:])
    with pytest.raises(TrajectoryFormatError):
        trajectory_from_bytes(bad)
    data[4] = 99
    with pytest.raises(TrajectoryFormatError):
        trajectory_from_bytes(bytes(data))


def test_dimension_mismatch_against_env_is_rejected():
    rng = np.random.default_rng(4)
    wrong = Trajectory("cartpole", np.zeros(3), rng.normal(size=(2, 3)), np.zeros(2))
    with pytest.raises(TrajectoryFormatError):
        trajectory_from_bytes(trajectory_to_bytes(wrong, control_dim=1))
    assert len(trajectory_from_bytes(trajectory_to_bytes(wrong, control_dim=1), check_env=False)) == 2


def test_single_step_expert():
    env = make_env("cartpole")
    traj = generate_expert(env, mppi_preset("cartpole", num_rollouts=200), 1, 0)
    assert len(traj) == 1
    np.testing.assert_array_equal(traj.steps, [1])
    assert traj.as_demo().controls is None


def test_expert_rejects_zero_steps():
    with pytest.raises(ValueError):
        generate_expert(make_env("cartpole"), mppi_preset("cartpole"), 0, 0)


def test_expert_is_deterministic_in_seed():
    env = make_env("radar")
    a = generate_expert(env, mppi_preset("radar"), 15, 3)
    b = generate_expert(env, mppi_preset("radar"), 15, 3)
    assert a == b
    assert not np.array_equal(a.states, generate_expert(env, mppi_preset("radar"), 15, 4).states)


def test_terminal_before_budget_sets_truncated_flag():
    env = make_env("cartpole")
    # a cost that rewards falling over ends the episode early
    traj = generate_expert(env, mppi_preset("cartpole", num_rollouts=200), 150, 0, cost_fn=lambda s: -np.abs(s[..., 2]))
    assert traj.truncated and len(traj) < 150


@pytest.mark.slow
def test_cartpole_expert_balances_for_most_seeds():
    env = make_env("cartpole")
    full = sum(generate_expert(env, mppi_preset("cartpole"), 150, seed).total_reward == 150.0 for seed in range(12))
    assert full >= 10


def test_radar_expert_closes_on_stationary_target():
    env = make_env("radar")
    start = np.array([-60.0, 30.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.0])
    env = dataclasses.replace(env, reset=lambda seed: start.copy())
    traj = generate_expert(env, mppi_preset("radar"), 120, 0)
    d = np.linalg.norm(traj.states[:, 6:9] - traj.states[:, :3], axis=1)
    floor = 10.0  # the radar is planar and the target sits 10 m up
    arrival = int(np.argmax(d < floor + 0.5))
    assert arrival > 20
    # after a 20-step transient the range shrinks monotonically until arrival,
    # then the unicycle (speed >= 0) loiters near the floor
    assert np.all(np.diff(d[20 : arrival + 1]) <= 0)
    assert np.all(d[arrival:] < 1.25 * floor)


@pytest.mark.parametrize("name", ["cartpole", "mountaincar", "radar"])
def test_expert_beats_zero_control(name):
    env = make_env(name)
    traj = generate_expert(env, mppi_preset(name), env.max_steps, 0)
    assert traj.total_reward >= zero_control_reward(env, traj.initial_state, len(traj))
