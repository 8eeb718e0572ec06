"""Expert demonstrations: generation with MPPI on the true reward, and the
binary trajectory file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .environments import MOUNTAINCAR_CONSTANTS, EnvModel, make_env
from .mppi import MppiConfig, MppiController, mppi_plan, mppi_shift

Array = np.ndarray


class TrajectoryFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """Initial state plus records t = 1..T of (state, control, true reward).

    ``controls`` is ``None`` for demonstrations, which carry states only.
    """

    env_name: str
    initial_state: Array
    states: Array  # (T, n)
    rewards: Array  # (T,)
    controls: Array | None = None  # (T, m)
    seed: int = 0
    truncated: bool = False

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=float)
        rewards = np.asarray(self.rewards, dtype=float).ravel()
        if states.ndim != 2 or states.shape[0] != rewards.size:
            raise ValueError("states must be (T, n) with one reward per record")
        if self.controls is not None and np.shape(self.controls)[0] != rewards.size:
            raise ValueError("one control per record")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "initial_state", np.asarray(self.initial_state, dtype=float).ravel())

    def __len__(self) -> int:
        return self.rewards.size

    @property
    def steps(self) -> Array:
        return np.arange(1, len(self) + 1)

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))

    def as_demo(self) -> "Trajectory":
        return replace(self, controls=None)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        same_controls = (self.controls is None and other.controls is None) or (
            self.controls is not None
            and other.controls is not None
            and np.array_equal(self.controls, other.controls)
        )
        return (
            self.env_name == other.env_name
            and self.seed == other.seed
            and self.truncated == other.truncated
            and np.array_equal(self.initial_state, other.initial_state)
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.rewards, other.rewards)
            and same_controls
        )


# ---------------------------------------------------------------------------
# Expert costs
# ---------------------------------------------------------------------------


def mountaincar_expert_cost(states: Array, energy_weight: float = 1.0) -> Array:
    """-reward minus a mechanical-energy bonus.

    The -1-per-step reward is flat over any 85-step planning horizon that
    cannot reach the goal, which leaves MPPI with uniform weights and no
    progress; the energy term makes it pump.
    """
    c = MOUNTAINCAR_CONSTANTS
    x, v = states[..., 0], states[..., 1]
    unit = c["gravity"] / 3.0
    energy = (0.5 * v**2 + unit * np.sin(3 * x)) / unit
    goal = x >= c["goal_position"]
    return np.where(goal, 0.0, 1.0) - energy_weight * energy


def expert_cost_fn(env: EnvModel) -> Callable[[Array], Array]:
    if env.name == "mountaincar":
        return mountaincar_expert_cost
    return lambda s: -env.true_reward(s)


def generate_expert(
    env: EnvModel,
    mppi_cfg: MppiConfig,
    n_steps: int,
    seed: int,
    cost_fn: Callable[[Array], Array] | None = None,
) -> Trajectory:
    """Run MPPI against the expert cost for ``n_steps`` (or until terminal)."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    cost_fn = expert_cost_fn(env) if cost_fn is None else cost_fn
    ctrl = MppiController.create(mppi_cfg, seed)
    x0 = env.reset(seed)
    x = x0
    states, controls, rewards = [], [], []
    truncated = False
    for _ in range(n_steps):
        u, _ = mppi_plan(ctrl, env, x, cost_fn)
        x = env.step(x, u)
        states.append(x)
        controls.append(u)
        rewards.append(float(env.true_reward(x)))
        mppi_shift(ctrl)
        if env.is_terminal(x):
            truncated = len(states) < n_steps
            break
    return Trajectory(env.name, x0, np.array(states), np.array(rewards), np.array(controls), seed, truncated)


def zero_control_reward(env: EnvModel, initial_state: Array, n_steps: int) -> float:
    """Cumulative true reward of the do-nothing policy; terminal states absorb."""
    x = np.asarray(initial_state, dtype=float)
    u = np.zeros(env.control_dim)
    total = 0.0
    done = bool(env.is_terminal(x))
    for _ in range(n_steps):
        if not done:
            x = env.step(x, u)
            done = bool(env.is_terminal(x))
        total += float(env.true_reward(x))
    return total


# ---------------------------------------------------------------------------
# Binary format
# ---------------------------------------------------------------------------

MAGIC = b"RDTR"
VERSION = 1
# magic, version u16, name length u16
_PREFIX = struct.Struct("<4sHH")
# state dim u32, control dim u32, flags u32 (bit0 controls present, bit1 truncated),
# seed i64, record count u64
_DIMS = struct.Struct("<IIIqQ")


def record_size(state_dim: int, control_dim: int, has_controls: bool) -> int:
    """Bytes per record: t, state, [control], reward as little-endian f8."""
    return 8 * (2 + state_dim + (control_dim if has_controls else 0))


def trajectory_to_bytes(traj: Trajectory, control_dim: int | None = None) -> bytes:
    name = traj.env_name.encode("utf-8")
    n = traj.states.shape[1]
    has_controls = traj.controls is not None
    if has_controls:
        m = int(np.shape(traj.controls)[1])
    elif control_dim is not None:
        m = int(control_dim)
    else:
        # demos carry no controls but the header still records the env's control dim
        try:
            m = make_env(traj.env_name).control_dim
        except ValueError:
            m = 0
    flags = int(has_controls) | (int(traj.truncated) << 1)
    header = _PREFIX.pack(MAGIC, VERSION, len(name)) + name
    header += _DIMS.pack(n, m, flags, traj.seed, len(traj))
    cols = [traj.steps[:, None].astype(float), traj.states]
    if has_controls:
        cols.append(np.asarray(traj.controls, dtype=float))
    cols.append(traj.rewards[:, None])
    body = np.ascontiguousarray(np.hstack(cols), dtype="<f8")
    return header + np.ascontiguousarray(traj.initial_state, dtype="<f8").tobytes() + body.tobytes()


def trajectory_from_bytes(data: bytes, check_env: bool = True) -> Trajectory:
    if len(data) < _PREFIX.size:
        raise TrajectoryFormatError("corrupt header: file too short")
    magic, version, name_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise TrajectoryFormatError(f"corrupt header: bad magic {magic!r}")
    if version != VERSION:
        raise TrajectoryFormatError(f"unsupported trajectory version {version}")
    off = _PREFIX.size
    if len(data) < off + name_len + _DIMS.size:
        raise TrajectoryFormatError("corrupt header: truncated")
    name = data[off : off + name_len].decode("utf-8")
    off += name_len
    n, m, flags, seed, count = _DIMS.unpack_from(data, off)
    off += _DIMS.size
    has_controls = bool(flags & 1)
    rec = record_size(n, m, has_controls)
    if len(data) != off + 8 * n + count * rec:
        raise TrajectoryFormatError(
            f"corrupt header: expected {off + 8 * n + count * rec} bytes, found {len(data)}"
        )
    if check_env:
        try:
            env = make_env(name)
        except ValueError:
            env = None
        if env is not None and (env.state_dim != n or env.control_dim != m):
            raise TrajectoryFormatError(f"dimensions ({n}, {m}) do not match env preset {name!r}")
    x0 = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(float)
    off += 8 * n
    table = np.frombuffer(data, dtype="<f8", offset=off).astype(float).reshape(count, rec // 8)
    if count and not np.array_equal(table[:, 0], np.arange(1, count + 1)):
        raise TrajectoryFormatError("record steps are not 1..T")
    states = table[:, 1 : 1 + n]
    controls = table[:, 1 + n : 1 + n + m] if has_controls else None
    return Trajectory(name, x0, states, table[:, -1], controls, int(seed), bool(flags & 2))


def save_trajectory(traj: Trajectory, path: str | Path) -> None:
    Path(path).write_bytes(trajectory_to_bytes(traj))


def load_trajectory(path: str | Path) -> Trajectory:
    return trajectory_from_bytes(Path(path).read_bytes())
