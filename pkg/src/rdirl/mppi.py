"""Model predictive path integral (MPPI) control.

Used twice: as the expert (planning against the true reward) and as the
learner's inner policy (planning against the learned cost). Rollout costs
are the summed state cost plus ``(lambda/2) u^T Sigma^-1 u`` per step, the
weights are ``exp(-(S - min S) / lambda)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .environments import EnvModel

Array = np.ndarray
CostFn = Callable[[Array], Array]


class MppiError(RuntimeError):
    pass


@dataclass(frozen=True)
class MppiConfig:
    horizon: int
    num_rollouts: int
    temperature: float
    control_sigma: tuple[float, ...]
    control_low: tuple[float, ...]
    control_high: tuple[float, ...]
    control_penalty: bool = True

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.num_rollouts < 2:
            raise ValueError("need at least 2 rollouts")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        n = len(self.control_sigma)
        if len(self.control_low) != n or len(self.control_high) != n:
            raise ValueError("sigma and bounds must have one entry per control dimension")
        if any(s <= 0 for s in self.control_sigma):
            raise ValueError("control_sigma must be positive")
        if any(lo >= hi for lo, hi in zip(self.control_low, self.control_high)):
            raise ValueError("control_low must be below control_high")

    @property
    def control_dim(self) -> int:
        return len(self.control_sigma)


# horizon / rollouts / temperature follow the per-task experiment table;
# sigma is not listed there and is set from the control range
PRESETS: dict[str, MppiConfig] = {
    "cartpole": MppiConfig(50, 2000, 1e-3, (2.0,), (-10.0,), (10.0,)),
    "mountaincar": MppiConfig(85, 3500, 1e-2, (1.0,), (-1.0,), (1.0,)),
    "radar": MppiConfig(10, 25, 1e-2, (2.5, 1.0), (-5.0, -2.0), (5.0, 2.0)),
    "double_integrator": MppiConfig(20, 500, 0.1, (1.0,), (-5.0,), (5.0,)),
}


def mppi_preset(name: str, **overrides) -> MppiConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown MPPI preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(cfg, **overrides)


@dataclass
class RolloutBatch:
    states: Array  # (K, H, n): x_1 .. x_H of every rollout
    controls: Array  # (K, H, m)
    costs: Array  # (K,)
    weights: Array  # (K,)

    def __len__(self) -> int:
        return self.costs.shape[0]


@dataclass
class MppiController:
    config: MppiConfig
    nominal_controls: Array
    rng_seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.nominal_controls = np.array(self.nominal_controls, dtype=float).reshape(
            self.config.horizon, self.config.control_dim
        )
        self.rng = np.random.default_rng(self.rng_seed)

    @classmethod
    def create(cls, config: MppiConfig, seed: int = 0) -> "MppiController":
        return cls(config, np.zeros((config.horizon, config.control_dim)), seed)

    def reset(self) -> None:
        """Zero the nominal sequence (the random stream continues)."""
        self.nominal_controls = np.zeros_like(self.nominal_controls)


def rollout(env: EnvModel, x0: Array, controls: Array) -> Array:
    """Deterministic rollouts; terminal states are absorbing.

    ``controls`` has shape (K, H, m); returns states x_1..x_H of shape (K, H, n).
    """
    K, H, _ = controls.shape
    states = np.empty((K, H, env.state_dim))
    x = np.broadcast_to(np.asarray(x0, dtype=float), (K, env.state_dim))
    done = np.asarray(env.is_terminal(x), dtype=bool)
    for t in range(H):
        nxt = env.step(x, controls[:, t, :])
        x = np.where(done[:, None], x, nxt)
        done = done | env.is_terminal(x)
        states[:, t, :] = x
    return states


def mppi_plan(ctrl: MppiController, env: EnvModel, x0: Array, cost_fn: CostFn) -> tuple[Array, RolloutBatch]:
    """One MPPI iteration from ``x0``; updates ``ctrl.nominal_controls`` in place.

    ``cost_fn`` maps an array of states ``(..., n)`` to costs ``(...)``.
    Rollouts with cost +inf get zero weight. Returns the first control of
    the updated nominal sequence and the rollout batch.
    """
    cfg = ctrl.config
    sigma = np.asarray(cfg.control_sigma)
    lo, hi = np.asarray(cfg.control_low), np.asarray(cfg.control_high)
    K, H = cfg.num_rollouts, cfg.horizon

    eps = ctrl.rng.standard_normal((K, H, cfg.control_dim)) * sigma
    controls = np.clip(ctrl.nominal_controls[None] + eps, lo, hi)
    states = rollout(env, x0, controls)
    if not np.all(np.isfinite(states)):
        raise MppiError("non-finite state in MPPI rollout")

    costs = np.sum(cost_fn(states), axis=1)
    if cfg.control_penalty:
        costs = costs + 0.5 * cfg.temperature * np.sum((controls / sigma) ** 2, axis=(1, 2))
    if np.any(np.isnan(costs)) or np.any(costs == -np.inf):
        raise MppiError("rollout costs must be finite or +inf")

    finite = np.isfinite(costs)
    if not np.any(finite):
        raise MppiError("every rollout has infinite cost; no weight mass left")
    shifted = np.where(finite, costs - costs[finite].min(), np.inf)
    w = np.exp(-shifted / cfg.temperature)
    total = w.sum()
    if not total > 0:
        raise MppiError("all MPPI weights vanished; increase the temperature")
    w = w / total

    ctrl.nominal_controls = np.clip(np.einsum("k,khm->hm", w, controls), lo, hi)
    batch = RolloutBatch(states, controls, costs, w)
    return ctrl.nominal_controls[0].copy(), batch


def mppi_shift(ctrl: MppiController) -> MppiController:
    """Receding-horizon shift: drop the first control, repeat the last."""
    u = ctrl.nominal_controls
    ctrl.nominal_controls = np.concatenate([u[1:], u[-1:]], axis=0)
    return ctrl


@dataclass(frozen=True)
class StepRecord:
    state: Array
    control: Array
    prob: float
    rollout_index: int


def sample_policy_step(
    ctrl: MppiController, batch: RolloutBatch, seed: int | np.random.Generator | None = None
) -> StepRecord:
    """Draw one rollout with probability equal to its weight; return its first step.

    ``prob`` is the selected rollout's weight, used as the sampler likelihood.
    With ``seed=None`` the controller's own random stream is used.
    """
    if len(batch) == 0:
        raise MppiError("empty rollout batch")
    if seed is None:
        rng = ctrl.rng
    elif isinstance(seed, np.random.Generator):
        rng = seed
    else:
        rng = np.random.default_rng(seed)
    k = int(rng.choice(len(batch), p=batch.weights))
    return StepRecord(batch.states[k, 0].copy(), batch.controls[k, 0].copy(), float(batch.weights[k]), k)
