"""Online IRL training loop, evaluation helpers and run bookkeeping."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from . import __version__
from .baselines import SgdState, sgd_step
from .cost_model import CostNet, cost_backward, cost_forward_batch, init_cost_net, save_theta
from .environments import EnvModel, make_env
from .expert import Trajectory, generate_expert, zero_control_reward
from .mppi import PRESETS, MppiController, mppi_plan, mppi_preset, mppi_shift, sample_policy_step
from .recursive_optimizer import RdirlState, rdirl_init, rdirl_step, reset_covariance, save_checkpoint

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = {"cartpole": (16, 16), "mountaincar": (16, 16), "radar": (128,)}
CSV_HEADER = ("episode", "seed", "reward_raw", "reward_norm", "wall_s")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: str = "cartpole"
    learner: str = "rdirl"
    episodes: int = 5
    n_steps: int | None = None  # None: the demo length (env cap if the demo ended at terminal)
    mppi: str | None = None  # preset name, defaults to env
    mppi_overrides: dict = field(default_factory=dict)
    hidden: tuple[int, ...] | None = None
    p0: float = 1e-2
    q: float = 1e-4
    gn_damping: float = 1e-6
    learning_rate: float = 1e-4
    project_psd: bool = True
    reset_covariance_each_episode: bool = True
    reset_nominal: str = "episode"  # or "step"
    stop_at_terminal: bool = True  # False: hold the terminal state and keep updating on the demo
    seeds: Sequence[int] = (0,)
    expert_seed: int = 0
    expert_path: str | None = None
    output_dir: str | None = None
    checkpoint_every: int = 0  # episodes; 0 disables
    record_wall_time: bool = True

    def validate(self) -> None:
        if self.env not in DEFAULT_HIDDEN:
            raise ConfigError(f"unknown env {self.env!r}")
        if self.learner not in ("rdirl", "sgd"):
            raise ConfigError(f"unknown learner {self.learner!r}")
        if (self.mppi or self.env) not in PRESETS:
            raise ConfigError(f"unknown MPPI preset {self.mppi!r}")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if self.n_steps is not None and self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        if len(self.seeds) == 0:
            raise ConfigError("seeds must be nonempty")
        if self.reset_nominal not in ("episode", "step"):
            raise ConfigError("reset_nominal is 'episode' or 'step'")
        if not self.p0 > 0 or not self.q >= 0 or not self.learning_rate > 0:
            raise ConfigError("p0 and learning_rate must be > 0, q >= 0")

    @property
    def layer_hidden(self) -> tuple[int, ...]:
        return tuple(self.hidden) if self.hidden is not None else DEFAULT_HIDDEN[self.env]

    def mppi_config(self):
        return mppi_preset(self.mppi or self.env, **self.mppi_overrides)


@dataclass
class EpisodeRow:
    episode: int
    seed: int
    reward_raw: float
    reward_norm: float
    wall_s: float
    steps: int = 0
    terminal: bool = False


@dataclass
class LearningCurve:
    seed: int
    rows: list[EpisodeRow] = field(default_factory=list)
    pd_violations: int = 0
    updates: int = 0
    theta: np.ndarray | None = None

    @property
    def raw(self) -> np.ndarray:
        return np.array([r.reward_raw for r in self.rows])

    @property
    def normalized(self) -> np.ndarray:
        return np.array([r.reward_norm for r in self.rows])


def normalize_reward(r_learner: float, r_expert: float, r_floor: float) -> float:
    """0 at the do-nothing policy's reward, 1 at the expert's."""
    if r_expert == r_floor:
        raise ValueError("expert reward equals the floor; normalization is degenerate")
    return (r_learner - r_floor) / (r_expert - r_floor)


def _stream_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def _is_pd(P: np.ndarray) -> bool:
    if np.max(np.abs(P - P.T)) >= 1e-12:
        return False
    try:
        linalg.cholesky(P, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return False
    return True


def extend_demo(demo: Trajectory, max_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Demo states and rewards, held at the final record up to ``max_steps``
    when the demo stopped at a (absorbing) terminal state."""
    states, rewards = demo.states, demo.rewards
    extra = max_steps - len(demo)
    if demo.truncated and extra > 0:
        states = np.vstack([states, np.repeat(states[-1:], extra, axis=0)])
        rewards = np.concatenate([rewards, np.repeat(rewards[-1:], extra)])
    return states, rewards


def default_expert(cfg: RunConfig, env: EnvModel) -> Trajectory:
    n = cfg.n_steps or env.max_steps
    return generate_expert(env, mppi_preset(cfg.env), n, cfg.expert_seed)


def train_seed(
    cfg: RunConfig,
    demo: Trajectory,
    seed: int,
    env: EnvModel | None = None,
    csv_writer=None,
    csv_file=None,
    stop_when: Callable[[EpisodeRow], bool] | None = None,
) -> LearningCurve:
    """Run the online learner for ``cfg.episodes`` passes over ``demo``.

    Per expert record: plan with MPPI under the current cost, draw one sampled
    record from the rollouts, update theta from the demo/sample pair, then
    execute the planned control. The episode ends at a terminal state; with
    ``stop_at_terminal=False`` the learner instead stays there (earning that
    state's reward) and keeps updating until the records run out. Theta persists across episodes; the MPPI
    nominal sequence, the environment and (for RDIRL) P restart each episode.
    ``stop_when`` ends the run early once it returns True for an episode row.
    """
    env = env or make_env(cfg.env)
    mppi_cfg = cfg.mppi_config()
    demo_states, demo_rewards = extend_demo(demo, env.max_steps)
    n_steps = min(cfg.n_steps or len(demo_rewards), len(demo_rewards))
    r_expert = float(np.sum(demo_rewards[:n_steps]))
    r_floor = zero_control_reward(env, demo.initial_state, n_steps)
    if r_expert == r_floor:
        log.warning("expert and zero-control rewards coincide over %d steps; reward_norm will be nan", n_steps)

    net = init_cost_net([env.feature_dim, *cfg.layer_hidden, 1], seed)
    if cfg.learner == "rdirl":
        learner: RdirlState | SgdState = rdirl_init(net.d_theta, cfg.p0, cfg.q, net.theta)
    else:
        learner = SgdState(net.theta.copy(), cfg.learning_rate)

    demo_features = env.features(demo_states)
    curve = LearningCurve(seed)
    for episode in range(cfg.episodes):
        start = time.perf_counter()
        if cfg.learner == "rdirl" and cfg.reset_covariance_each_episode and episode > 0:
            learner = reset_covariance(learner, cfg.p0)
        ctrl = MppiController.create(mppi_cfg, _stream_seed(seed, episode))
        x = demo.initial_state.copy()
        total = 0.0
        steps = 0
        done = bool(env.is_terminal(x))
        for i in range(n_steps):
            theta = learner.theta_hat if cfg.learner == "rdirl" else learner.theta
            net = net.with_theta(theta)
            if cfg.reset_nominal == "step":
                ctrl.reset()

            def cost_fn(states, net=net):
                return cost_forward_batch(net, env.features(states))

            u, batch = mppi_plan(ctrl, env, x, cost_fn)
            samp = sample_policy_step(ctrl, batch)
            demo_eval = cost_backward(net, demo_features[i], cfg.gn_damping)
            samp_eval = cost_backward(net, env.features(samp.state), cfg.gn_damping)
            if cfg.learner == "rdirl":
                learner = rdirl_step(learner, demo_eval, samp_eval, project=cfg.project_psd)
                if not _is_pd(learner.p_theta):
                    curve.pd_violations += 1
            else:
                learner = sgd_step(learner, demo_eval, samp_eval)
            curve.updates += 1

            # terminal states absorb: the learner keeps observing the expert
            # but its own state (and reward) stays put
            if not done:
                x = env.step(x, u)
                if not env.is_admissible(x):
                    raise RuntimeError(f"inadmissible state {x} in {env.name}")
                steps += 1
                done = bool(env.is_terminal(x))
            total += float(env.true_reward(x))
            mppi_shift(ctrl)
            if done and cfg.stop_at_terminal:
                break

        wall = time.perf_counter() - start if cfg.record_wall_time else 0.0
        norm = normalize_reward(total, r_expert, r_floor) if r_expert != r_floor else float("nan")
        row = EpisodeRow(episode, seed, total, norm, wall, steps, done)
        curve.rows.append(row)
        log.info("seed %d episode %d reward %.3f (norm %.3f) steps %d", seed, episode, total, row.reward_norm, steps)
        if csv_writer is not None:
            csv_writer.writerow(_csv_row(row))
            csv_file.flush()
        if cfg.output_dir and cfg.checkpoint_every and (episode + 1) % cfg.checkpoint_every == 0:
            ckpt = Path(cfg.output_dir) / f"seed{seed}_ep{episode}.ckpt"
            if cfg.learner == "rdirl":
                save_checkpoint(learner, ckpt)
            else:
                save_theta(learner.theta, ckpt)
        if stop_when is not None and stop_when(row):
            break

    curve.theta = learner.theta_hat if cfg.learner == "rdirl" else learner.theta
    return curve


def _csv_row(row: EpisodeRow) -> list[str]:
    return [str(row.episode), str(row.seed), repr(float(row.reward_raw)), repr(float(row.reward_norm)), f"{row.wall_s:.6f}"]


def run_training(cfg: RunConfig, demo: Trajectory | None = None) -> list[LearningCurve]:
    """Train one learner per seed. Writes CSV and metadata if ``output_dir`` is set."""
    cfg.validate()
    env = make_env(cfg.env)
    if demo is None:
        if cfg.expert_path:
            from .expert import load_trajectory

            demo = load_trajectory(cfg.expert_path)
        else:
            demo = default_expert(cfg, env)
    if demo.env_name != env.name:
        raise ConfigError(f"demo is for {demo.env_name!r}, config is for {env.name!r}")

    out = Path(cfg.output_dir) if cfg.output_dir else None
    curves = []
    if out is None:
        for seed in cfg.seeds:
            curves.append(train_seed(cfg, demo, seed, env))
        return curves

    out.mkdir(parents=True, exist_ok=True)
    write_metadata(out, cfg, env, demo)
    with open(out / "curves.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        fh.flush()
        for seed in cfg.seeds:
            curves.append(train_seed(cfg, demo, seed, env, writer, fh))
    return curves


def write_metadata(out: Path, cfg: RunConfig, env: EnvModel, demo: Trajectory) -> None:
    meta = {
        "config": _jsonable(asdict(cfg)),
        "env_constants": _jsonable(env.constants),
        "env_dt": env.dt,
        "mppi": _jsonable(asdict(cfg.mppi_config())),
        "demo": {"env": demo.env_name, "seed": demo.seed, "records": len(demo), "total_reward": demo.total_reward},
        "code_version": __version__,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def summarize(curves: Sequence[LearningCurve], episode: int | None = None) -> tuple[float, float]:
    """Mean and std over seeds of the normalized reward (mean over episodes by default)."""
    if episode is None:
        vals = [c.normalized.mean() for c in curves]
    else:
        vals = [c.normalized[episode] for c in curves]
    return float(np.mean(vals)), float(np.std(vals))
