"""Analytic benchmark tasks: continuous CartPole, continuous MountainCar and a
radar-pursuit task whose true reward is the log-determinant of a position
Fisher information matrix.

Every ``step``/``true_reward``/``is_terminal`` function is vectorized over
leading batch axes, so MPPI can roll out thousands of trajectories at once.
States are float64 arrays of shape ``(..., state_dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class EnvModel:
    """Deterministic dynamics plus the hidden expert objective of one task."""

    name: str
    state_dim: int
    control_dim: int
    dt: float
    control_low: Array
    control_high: Array
    step: Callable[[Array, Array], Array]
    true_reward: Callable[[Array], Array]
    reset: Callable[[int], Array]
    is_terminal: Callable[[Array], Array]
    max_steps: int
    # input map of the cost network; kept per env so the learner sees
    # roughly unit-scaled inputs
    features: Callable[[Array], Array]
    feature_dim: int
    is_admissible: Callable[[Array], Array]
    constants: dict = field(default_factory=dict)

    def clip_control(self, u: Array) -> Array:
        return np.clip(u, self.control_low, self.control_high)


def _all_finite(states: Array) -> Array:
    return np.all(np.isfinite(states), axis=-1)


# ---------------------------------------------------------------------------
# CartPole
# ---------------------------------------------------------------------------

CARTPOLE_CONSTANTS = dict(
    gravity=9.8,
    masscart=1.0,
    masspole=0.1,
    length=0.5,  # half the pole length
    force_mag=10.0,
    tau=0.02,
    x_threshold=2.4,
    theta_threshold_radians=12 * 2 * np.pi / 360,
    reset_amplitude=0.05,
    max_steps=150,
)


def cartpole_step(state: Array, force: Array, masspole: float | None = None) -> Array:
    """Euler step of the classic cart-pole with a continuous force."""
    c = CARTPOLE_CONSTANTS
    mp = c["masspole"] if masspole is None else masspole
    total_mass = c["masscart"] + mp
    polemass_length = mp * c["length"]

    state = np.asarray(state, dtype=float)
    f = np.clip(np.asarray(force, dtype=float)[..., 0], -c["force_mag"], c["force_mag"])
    x, x_dot, theta, theta_dot = np.moveaxis(state, -1, 0)
    costheta = np.cos(theta)
    sintheta = np.sin(theta)

    temp = (f + polemass_length * theta_dot**2 * sintheta) / total_mass
    thetaacc = (c["gravity"] * sintheta - costheta * temp) / (
        c["length"] * (4.0 / 3.0 - mp * costheta**2 / total_mass)
    )
    xacc = temp - polemass_length * thetaacc * costheta / total_mass

    tau = c["tau"]
    return np.stack(
        [
            x + tau * x_dot,
            x_dot + tau * xacc,
            theta + tau * theta_dot,
            theta_dot + tau * thetaacc,
        ],
        axis=-1,
    )


def cartpole_terminal(state: Array) -> Array:
    c = CARTPOLE_CONSTANTS
    state = np.asarray(state, dtype=float)
    return (np.abs(state[..., 0]) > c["x_threshold"]) | (
        np.abs(state[..., 2]) > c["theta_threshold_radians"]
    )


def cartpole_reward(state: Array) -> Array:
    """+1 while the cart and pole are inside the balance box, else 0."""
    return np.where(cartpole_terminal(state), 0.0, 1.0)


def cartpole_reset(seed: int) -> Array:
    rng = np.random.default_rng(seed)
    a = CARTPOLE_CONSTANTS["reset_amplitude"]
    return rng.uniform(-a, a, size=4)


def cartpole(masspole: float | None = None) -> EnvModel:
    c = CARTPOLE_CONSTANTS
    constants = dict(c)
    if masspole is not None:
        constants["masspole"] = masspole
    # position and angle by their failure thresholds, velocities by 2
    scale = np.array([1.0 / c["x_threshold"], 0.5, 1.0 / c["theta_threshold_radians"], 0.5])
    constants["feature_scale"] = scale.tolist()
    return EnvModel(
        name="cartpole",
        state_dim=4,
        control_dim=1,
        dt=c["tau"],
        control_low=np.array([-c["force_mag"]]),
        control_high=np.array([c["force_mag"]]),
        step=lambda s, u: cartpole_step(s, u, masspole),
        true_reward=cartpole_reward,
        reset=cartpole_reset,
        is_terminal=cartpole_terminal,
        max_steps=c["max_steps"],
        features=lambda s: np.asarray(s, dtype=float) * scale,
        feature_dim=4,
        is_admissible=_all_finite,
        constants=constants,
    )


# ---------------------------------------------------------------------------
# MountainCar
# ---------------------------------------------------------------------------

MOUNTAINCAR_CONSTANTS = dict(
    power=0.0015,
    gravity=0.0025,
    min_position=-1.2,
    max_position=0.6,
    max_speed=0.07,
    goal_position=0.5,
    max_force=1.0,
    reset_low=-0.6,
    reset_high=-0.4,
    max_steps=200,
    dt=1.0,
)


def mountaincar_step(state: Array, force: Array) -> Array:
    c = MOUNTAINCAR_CONSTANTS
    state = np.asarray(state, dtype=float)
    f = np.clip(np.asarray(force, dtype=float)[..., 0], -c["max_force"], c["max_force"])
    x, v = state[..., 0], state[..., 1]
    v = v + f * c["power"] - c["gravity"] * np.cos(3 * x)
    v = np.clip(v, -c["max_speed"], c["max_speed"])
    x = np.clip(x + v, c["min_position"], c["max_position"])
    v = np.where((x <= c["min_position"]) & (v < 0), 0.0, v)
    return np.stack([x, v], axis=-1)


def mountaincar_terminal(state: Array) -> Array:
    return np.asarray(state, dtype=float)[..., 0] >= MOUNTAINCAR_CONSTANTS["goal_position"]


def mountaincar_reward(state: Array) -> Array:
    """-1 for every state short of the goal, 0 at the goal."""
    return np.where(mountaincar_terminal(state), 0.0, -1.0)


def mountaincar_reset(seed: int) -> Array:
    c = MOUNTAINCAR_CONSTANTS
    rng = np.random.default_rng(seed)
    return np.array([rng.uniform(c["reset_low"], c["reset_high"]), 0.0])


def _mountaincar_admissible(state: Array) -> Array:
    c = MOUNTAINCAR_CONSTANTS
    state = np.asarray(state, dtype=float)
    x, v = state[..., 0], state[..., 1]
    return (
        _all_finite(state)
        & (x >= c["min_position"])
        & (x <= c["max_position"])
        & (np.abs(v) <= c["max_speed"])
    )


def mountaincar() -> EnvModel:
    c = MOUNTAINCAR_CONSTANTS
    scale = np.array([1.0, 1.0 / c["max_speed"]])
    return EnvModel(
        name="mountaincar",
        state_dim=2,
        control_dim=1,
        dt=c["dt"],
        control_low=np.array([-c["max_force"]]),
        control_high=np.array([c["max_force"]]),
        step=mountaincar_step,
        true_reward=mountaincar_reward,
        reset=mountaincar_reset,
        is_terminal=mountaincar_terminal,
        max_steps=c["max_steps"],
        features=lambda s: np.asarray(s, dtype=float) * scale,
        feature_dim=2,
        is_admissible=_mountaincar_admissible,
        constants=dict(c, feature_scale=scale.tolist()),
    )


# ---------------------------------------------------------------------------
# Cognitive radar pursuit
# ---------------------------------------------------------------------------

# state layout: radar (x, y, z, heading, speed, turn rate), target (p, p_dot)
RADAR_CONSTANTS = dict(
    dt=0.1,
    max_accel=5.0,
    max_turn_accel=2.0,
    max_speed=10.0,
    max_turn_rate=1.0,
    d_min=1.0,
    d0=100.0,
    sigma_range=1.0,
    sigma_azimuth=0.01,
    sigma_elevation=0.01,
    radar_start=[0.0, 0.0, 0.0, 0.0, 5.0, 0.0],
    target_start=[60.0, 40.0, 20.0],
    target_velocity=[-2.0, 1.5, 0.0],
    target_jitter=5.0,
    feature_scale=1.0 / 50.0,
    max_steps=200,
)


def wrap_angle(theta: Array) -> Array:
    """Wrap to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, 2 * np.pi)


def radar_step(state: Array, control: Array) -> Array:
    c = RADAR_CONSTANTS
    dt = c["dt"]
    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    a = np.clip(control[..., 0], -c["max_accel"], c["max_accel"])
    alpha = np.clip(control[..., 1], -c["max_turn_accel"], c["max_turn_accel"])

    x, y, z, heading, v, omega = np.moveaxis(state[..., :6], -1, 0)
    out = np.empty_like(state)
    out[..., 0] = x + v * np.cos(heading) * dt
    out[..., 1] = y + v * np.sin(heading) * dt
    out[..., 2] = z
    out[..., 3] = wrap_angle(heading + omega * dt)
    out[..., 4] = np.clip(v + a * dt, 0.0, c["max_speed"])
    out[..., 5] = np.clip(omega + alpha * dt, -c["max_turn_rate"], c["max_turn_rate"])
    out[..., 6:9] = state[..., 6:9] + state[..., 9:12] * dt
    out[..., 9:12] = state[..., 9:12]
    return out


def radar_measurement(state: Array) -> Array:
    """Range, azimuth and elevation of the target as seen from the radar."""
    state = np.asarray(state, dtype=float)
    delta = state[..., 6:9] - state[..., 0:3]
    rho = np.hypot(delta[..., 0], delta[..., 1])
    return np.stack(
        [
            np.linalg.norm(delta, axis=-1),
            np.arctan2(delta[..., 1], delta[..., 0]),
            np.arctan2(delta[..., 2], rho),
        ],
        axis=-1,
    )


def radar_jacobian(state: Array) -> tuple[Array, Array]:
    """Jacobian of (range, azimuth, elevation) w.r.t. target position.

    Returns ``(H, d)`` with ``H`` of shape ``(..., 3, 3)`` and the clamped
    range ``d``. Ranges below ``d_min`` (and horizontal ranges below it) are
    clamped so the information stays bounded.
    """
    d_min = RADAR_CONSTANTS["d_min"]
    state = np.asarray(state, dtype=float)
    delta = state[..., 6:9] - state[..., 0:3]
    dx, dy, dz = np.moveaxis(delta, -1, 0)
    d = np.maximum(np.linalg.norm(delta, axis=-1), d_min)
    rho = np.maximum(np.hypot(dx, dy), d_min)
    zero = np.zeros_like(dx)
    H = np.stack(
        [
            np.stack([dx / d, dy / d, dz / d], axis=-1),
            np.stack([-dy / rho**2, dx / rho**2, zero], axis=-1),
            np.stack([-dz * dx / (rho * d**2), -dz * dy / (rho * d**2), rho / d**2], axis=-1),
        ],
        axis=-2,
    )
    return H, d


def radar_fim(state: Array) -> Array:
    """Position Fisher information J = H^T R(d)^-1 H, shape ``(..., 3, 3)``."""
    c = RADAR_CONSTANTS
    H, d = radar_jacobian(state)
    ratio = d / c["d0"]
    r_inv = np.stack(
        [
            1.0 / (c["sigma_range"] ** 2 * ratio**4),
            1.0 / (c["sigma_azimuth"] ** 2 * ratio**2),
            1.0 / (c["sigma_elevation"] ** 2 * ratio**2),
        ],
        axis=-1,
    )
    J = np.einsum("...ki,...k,...kj->...ij", H, r_inv, H)
    return 0.5 * (J + np.swapaxes(J, -1, -2))


def fim_reward(state: Array) -> Array:
    """log det of the radar's position Fisher information."""
    sign, logdet = np.linalg.slogdet(radar_fim(state))
    return np.where(sign > 0, logdet, -np.inf)


def radar_reset(seed: int) -> Array:
    c = RADAR_CONSTANTS
    rng = np.random.default_rng(seed)
    target = np.asarray(c["target_start"], dtype=float).copy()
    target[:2] += rng.uniform(-c["target_jitter"], c["target_jitter"], size=2)
    return np.concatenate([c["radar_start"], target, c["target_velocity"]]).astype(float)


def _radar_admissible(state: Array) -> Array:
    c = RADAR_CONSTANTS
    state = np.asarray(state, dtype=float)
    heading = state[..., 3]
    return (
        _all_finite(state)
        & (heading > -np.pi)
        & (heading <= np.pi)
        & (state[..., 4] >= 0.0)
        & (state[..., 4] <= c["max_speed"])
        & (np.abs(state[..., 5]) <= c["max_turn_rate"])
    )


def radar_features(state: Array) -> Array:
    """Target position relative to the radar, scaled to order one."""
    state = np.asarray(state, dtype=float)
    return (state[..., 6:9] - state[..., 0:3]) * RADAR_CONSTANTS["feature_scale"]


def radar() -> EnvModel:
    c = RADAR_CONSTANTS
    return EnvModel(
        name="radar",
        state_dim=12,
        control_dim=2,
        dt=c["dt"],
        control_low=np.array([-c["max_accel"], -c["max_turn_accel"]]),
        control_high=np.array([c["max_accel"], c["max_turn_accel"]]),
        step=radar_step,
        true_reward=fim_reward,
        reset=radar_reset,
        is_terminal=lambda s: np.zeros(np.shape(s)[:-1], dtype=bool),
        max_steps=c["max_steps"],
        features=radar_features,
        feature_dim=3,
        is_admissible=_radar_admissible,
        constants=dict(c),
    )


# ---------------------------------------------------------------------------
# Double integrator (used to benchmark MPPI against LQR)
# ---------------------------------------------------------------------------


def double_integrator(dt: float = 0.1, max_accel: float = 5.0) -> EnvModel:
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([0.0, dt])

    def step(s: Array, u: Array) -> Array:
        u = np.clip(np.asarray(u, dtype=float), -max_accel, max_accel)
        return np.asarray(s, dtype=float) @ A.T + u[..., :1] * B

    return EnvModel(
        name="double_integrator",
        state_dim=2,
        control_dim=1,
        dt=dt,
        control_low=np.array([-max_accel]),
        control_high=np.array([max_accel]),
        step=step,
        true_reward=lambda s: -np.sum(np.asarray(s, dtype=float) ** 2, axis=-1),
        reset=lambda seed: np.array([1.0, 0.0]),
        is_terminal=lambda s: np.zeros(np.shape(s)[:-1], dtype=bool),
        max_steps=50,
        features=lambda s: np.asarray(s, dtype=float),
        feature_dim=2,
        is_admissible=_all_finite,
        constants=dict(dt=dt, max_accel=max_accel, A=A.tolist(), B=B.tolist()),
    )


ENVIRONMENTS: dict[str, Callable[[], EnvModel]] = {
    "cartpole": cartpole,
    "mountaincar": mountaincar,
    "radar": radar,
    "double_integrator": double_integrator,
}


def make_env(name: str) -> EnvModel:
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
