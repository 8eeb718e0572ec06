"""Command line entry point: ``rdirl {expert gen, train, eval, verify, sweep}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .cost_model import cost_forward_batch, init_cost_net, load_theta
from .environments import ENVIRONMENTS, make_env
from .expert import generate_expert, load_trajectory, save_trajectory, zero_control_reward
from .mppi import PRESETS, MppiController, mppi_plan, mppi_preset, mppi_shift
from .recursive_optimizer import load_checkpoint
from .training import DEFAULT_HIDDEN, ConfigError, RunConfig, normalize_reward, run_training, summarize
from .verification import SUITES, verify

log = logging.getLogger("rdirl")


def _apply_thread_override() -> None:
    n = os.environ.get("RDIRL_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def load_config(path: str | None, overrides: dict) -> RunConfig:
    data = {}
    if path:
        data = json.loads(Path(path).read_text())
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "hidden" in data and data["hidden"] is not None:
        data["hidden"] = tuple(data["hidden"])
    cfg = RunConfig(**data)
    cfg.validate()
    return cfg


def _train_overrides(args) -> dict:
    return dict(
        env=args.env,
        learner=args.learner,
        episodes=args.episodes,
        n_steps=args.n_steps,
        seeds=args.seeds,
        output_dir=args.out,
        expert_path=args.expert,
        p0=args.p0,
        q=args.q,
        gn_damping=args.gn_damping,
        learning_rate=args.lr,
        checkpoint_every=args.checkpoint_every,
        reset_nominal=args.reset_nominal,
        record_wall_time=False if args.no_wall_clock else None,
    )


def cmd_expert_gen(args) -> int:
    env = make_env(args.env)
    cfg = mppi_preset(args.env)
    traj = generate_expert(env, cfg, args.n_steps or env.max_steps, args.seed)
    if not args.keep_controls:
        traj = traj.as_demo()
    save_trajectory(traj, args.out)
    floor = zero_control_reward(env, traj.initial_state, len(traj))
    print(f"{env.name}: {len(traj)} records, expert reward {traj.total_reward:.3f}, zero-control {floor:.3f}"
          + (" (truncated at terminal)" if traj.truncated else ""))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, _train_overrides(args))
    curves = run_training(cfg)
    for c in curves:
        print(f"seed {c.seed}: " + " ".join(f"{r.reward_norm:.3f}" for r in c.rows))
    mean, std = summarize(curves)
    print(f"normalized reward (mean over episodes, then seeds): {mean:.3f}±{std:.3f}")
    return 0


def cmd_sweep(args) -> int:
    base = load_config(args.config, _train_overrides(args))
    out = Path(args.out) if args.out else None
    lines = []
    for learner in args.learners:
        cfg = RunConfig(**{**base.__dict__, "learner": learner,
                           "output_dir": str(out / learner) if out else None})
        curves = run_training(cfg)
        mean, std = summarize(curves)
        last_mean, last_std = summarize(curves, episode=-1)
        lines.append(f"{learner}: {mean:.3f}±{std:.3f} (all episodes), {last_mean:.3f}±{last_std:.3f} (last episode)")
    print("\n".join(lines))
    return 0


def _load_theta_or_checkpoint(path: str) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) >= 16 and len(data) > 16 + 8 * int.from_bytes(data[8:16], "little"):
        return load_checkpoint(path).theta_hat
    return load_theta(path)


def cmd_eval(args) -> int:
    """Roll out MPPI under a saved cost and report true reward against the demo."""
    env = make_env(args.env)
    theta = _load_theta_or_checkpoint(args.theta)
    hidden = tuple(args.hidden) if args.hidden else DEFAULT_HIDDEN[env.name]
    net = init_cost_net([env.feature_dim, *hidden, 1], 0).with_theta(theta)
    demo = load_trajectory(args.expert)
    ctrl = MppiController.create(mppi_preset(env.name), args.seed)
    x = demo.initial_state.copy()
    total = 0.0
    for _ in range(len(demo)):
        u, _ = mppi_plan(ctrl, env, x, lambda s: cost_forward_batch(net, env.features(s)))
        x = env.step(x, u)
        total += float(env.true_reward(x))
        mppi_shift(ctrl)
        if env.is_terminal(x):
            break
    floor = zero_control_reward(env, demo.initial_state, len(demo))
    print(f"reward_raw {total:.3f} reward_norm {normalize_reward(total, demo.total_reward, floor):.3f}")
    return 0


def cmd_verify(args) -> int:
    try:
        results = verify(args.suite)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rdirl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    exp = sub.add_parser("expert", help="expert demonstrations")
    exp_sub = exp.add_subparsers(dest="expert_command", required=True)
    gen = exp_sub.add_parser("gen", help="generate a demo with MPPI on the true reward")
    gen.add_argument("--env", choices=sorted(ENVIRONMENTS), required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--n-steps", type=int)
    gen.add_argument("--out", required=True)
    gen.add_argument("--keep-controls", action="store_true", help="store controls (not a valid demo)")
    gen.set_defaults(func=cmd_expert_gen)

    def add_train_args(sp):
        sp.add_argument("--config", help="JSON file with RunConfig fields")
        sp.add_argument("--env", choices=sorted(DEFAULT_HIDDEN))
        sp.add_argument("--learner", choices=["rdirl", "sgd"])
        sp.add_argument("--episodes", type=int)
        sp.add_argument("--n-steps", type=int)
        sp.add_argument("--seeds", type=int, nargs="+")
        sp.add_argument("--expert", help="demo trajectory file (generated if omitted)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--p0", type=float)
        sp.add_argument("--q", type=float)
        sp.add_argument("--gn-damping", type=float)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--checkpoint-every", type=int)
        sp.add_argument("--reset-nominal", choices=["episode", "step"])
        sp.add_argument("--no-wall-clock", action="store_true", help="write wall_s as 0 for byte-reproducible CSVs")

    train = sub.add_parser("train", help="run online IRL")
    add_train_args(train)
    train.set_defaults(func=cmd_train)

    sweep = sub.add_parser("sweep", help="train several learners on the same config")
    add_train_args(sweep)
    sweep.add_argument("--learners", nargs="+", default=["rdirl", "sgd"], choices=["rdirl", "sgd"])
    sweep.set_defaults(func=cmd_sweep)

    ev = sub.add_parser("eval", help="evaluate a saved theta with MPPI")
    ev.add_argument("--env", choices=sorted(DEFAULT_HIDDEN), required=True)
    ev.add_argument("--theta", required=True)
    ev.add_argument("--expert", required=True)
    ev.add_argument("--hidden", type=int, nargs="+")
    ev.add_argument("--seed", type=int, default=0)
    ev.set_defaults(func=cmd_eval)

    ver = sub.add_parser("verify", help="run invariant suites")
    ver.add_argument("suite", help=f"one of {sorted(SUITES) + ['all']}")
    ver.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    _apply_thread_override()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
