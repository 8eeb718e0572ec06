"""Invariant suites behind ``rdirl verify``.

Each suite returns a :class:`SuiteResult` with the measured quantity next to
the tolerance it was checked against.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cost_model import FeatureCost, cost_forward, cost_grad, init_cost_net
from .environments import make_env
from .mppi import MppiConfig, MppiController, mppi_plan, mppi_shift
from .recursive_optimizer import batch_newton_oracle, rdirl_init, rdirl_step, verify_bound


@dataclass
class SuiteResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} (measured {self.measured:.3e}, tol {self.tolerance:.1e}, {self.seconds:.2f}s)"


def central_difference_grad(f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    out = np.empty_like(theta)
    for j in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[j] += h
        tm[j] -= h
        out[j] = (f(tp) - f(tm)) / (2 * h)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Per-coordinate |a-b| / max(|a|, |b|, floor)."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_suite(cases: int = 100, seed: int = 0, tol: float = 1e-4) -> SuiteResult:
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        n_in = int(rng.integers(1, 6))
        dims = [n_in] + [int(h) for h in rng.integers(1, 9, size=rng.integers(0, 3))] + [1]
        net = init_cost_net(dims, int(rng.integers(2**31)))
        x = rng.normal(size=n_in)
        _, g = cost_grad(net, x)
        fd = central_difference_grad(lambda t: cost_forward(net.with_theta(t), x), net.theta.copy())
        worst = max(worst, float(relative_error(g, fd).max()))
    return SuiteResult(
        "gradients", worst < tol, worst, tol, f"{cases} random (net, x) pairs vs central differences",
        time.perf_counter() - start,
    )


def random_bound_instance(rng: np.random.Generator):
    n_in = int(rng.integers(1, 5))
    net = init_cost_net([n_in, int(rng.integers(2, 9)), 1], int(rng.integers(2**31)))
    n = int(rng.integers(2, 8))
    demos = [rng.normal(size=(int(rng.integers(1, 6)), n_in)) for _ in range(n)]
    samps = [rng.normal(size=(int(rng.integers(1, 6)), n_in)) for _ in range(n)]
    q = rng.uniform(0.01, 1.0, size=n)
    return net, demos, samps, q


def bound_suite(cases: int = 100, seed: int = 0, tol: float = 1e-9) -> SuiteResult:
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = np.inf
    passed = 0
    for _ in range(cases):
        cert = verify_bound(*random_bound_instance(rng))
        worst = min(worst, cert.slack)
        passed += cert.slack >= -tol
    return SuiteResult(
        "bound", passed == cases, float(worst), tol, f"{passed}/{cases} randomized Jensen audits pass (min slack)",
        time.perf_counter() - start,
    )


def quadratic_instance(rng: np.random.Generator, d: int, n: int):
    """Per-step quadratic demo/sample costs with PD curvature difference."""
    demo_cost = FeatureCost(linear_weight=1.0, square_weight=1.0)
    samp_cost = FeatureCost(linear_weight=1.0, square_weight=0.0)
    demos, samps = [], []
    for _ in range(n):
        phis = rng.normal(size=(d, d))
        targets = rng.normal(size=d)
        phi_s = rng.normal(size=d)

        def demo(theta, phis=phis, targets=targets):
            total = demo_cost.evaluate(theta, phis[0], targets[0])
            for p, t in zip(phis[1:], targets[1:]):
                total = total + demo_cost.evaluate(theta, p, t)
            return total

        demos.append(demo)
        samps.append(lambda theta, p=phi_s: samp_cost.evaluate(theta, p))
    return demos, samps


def rls_equivalence_suite(seed: int = 0, d: int = 6, steps: int = 20, tol: float = 1e-8) -> SuiteResult:
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    demos, samps = quadratic_instance(rng, d, steps)
    theta0 = rng.normal(size=d)
    p0, q = 1e-2, 1e-4
    worst = 0.0
    state = rdirl_init(d, p0, q, theta0)
    for i in range(steps):
        state = rdirl_step(state, demos[i](state.theta_hat), samps[i](state.theta_hat), project=False)
        batch = batch_newton_oracle(demos[: i + 1], samps[: i + 1], theta0, p0, q)
        worst = max(worst, float(np.max(np.abs(batch - state.theta_hat))))
    return SuiteResult(
        "rls-equivalence", worst < tol, worst, tol, f"{steps} recursive steps vs batch Newton solve (d={d})",
        time.perf_counter() - start,
    )


def lqr_finite_horizon_cost(A, B, Q, R, x0, steps: int) -> float:
    """Optimal cost of sum_{t=1..T} x_t'Qx_t + sum_{t=0..T-1} u_t'Ru_t by backward Riccati."""
    P = Q.copy()
    gains = []
    for _ in range(steps):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        gains.append(K)
        P = Q + A.T @ P @ (A - B @ K)
    # P now includes a Q term for x_0 that the objective does not charge
    return float(x0 @ (P - Q) @ x0)


def double_integrator_trial(seed: int, steps: int = 50, horizon: int = 20, rollouts: int = 500, temperature: float = 0.1, sigma: float = 1.0):
    """Closed-loop MPPI cost vs the optimal finite-horizon LQR cost."""
    env = make_env("double_integrator")
    A = np.array(env.constants["A"])
    B = np.array(env.constants["B"])[:, None]
    Qs = np.eye(2)
    # (lambda/2) u^2 / sigma^2 is the MPPI control penalty
    R = np.array([[0.5 * temperature / sigma**2]])
    cfg = MppiConfig(horizon, rollouts, temperature, (sigma,), (-5.0,), (5.0,))
    ctrl = MppiController.create(cfg, seed)
    x = env.reset(seed)
    total = 0.0
    for _ in range(steps):
        u, _ = mppi_plan(ctrl, env, x, lambda s: np.sum(s**2, axis=-1))
        x = env.step(x, u)
        total += float(x @ Qs @ x + u @ R @ u)
        mppi_shift(ctrl)
    return total, lqr_finite_horizon_cost(A, B, Qs, R, env.reset(seed), steps)


def mppi_suite(seeds: int = 20, tol: float = 0.10) -> SuiteResult:
    start = time.perf_counter()
    ratios = []
    for seed in range(seeds):
        mppi_cost, lqr_cost = double_integrator_trial(seed)
        ratios.append(mppi_cost / lqr_cost - 1.0)
    worst = float(max(ratios))
    return SuiteResult(
        "mppi", worst <= tol, worst, tol, f"closed-loop cost excess over LQR optimum, worst of {seeds} seeds",
        time.perf_counter() - start, {"ratios": ratios},
    )


def envs_suite(tol: float = 1e-6) -> SuiteResult:
    """FIM reward vs a finite-difference Jacobian reconstruction, plus env determinism."""
    from .environments import RADAR_CONSTANTS, fim_reward, radar_measurement

    start = time.perf_counter()
    rng = np.random.default_rng(0)
    c = RADAR_CONSTANTS
    worst = 0.0
    for _ in range(20):
        state = make_env("radar").reset(int(rng.integers(1000)))
        state[6:9] = state[0:3] + rng.uniform(-80, 80, size=3) + np.array([0, 0, 5.0])
        h = 1e-6
        J = np.zeros((3, 3))
        for j in range(3):
            sp, sm = state.copy(), state.copy()
            sp[6 + j] += h
            sm[6 + j] -= h
            J[:, j] = (radar_measurement(sp) - radar_measurement(sm)) / (2 * h)
        d = np.linalg.norm(state[6:9] - state[0:3]) / c["d0"]
        R = np.diag([c["sigma_range"] ** 2 * d**4, c["sigma_azimuth"] ** 2 * d**2, c["sigma_elevation"] ** 2 * d**2])
        fim = J.T @ np.linalg.solve(R, J)
        worst = max(worst, abs(float(fim_reward(state)) - float(np.linalg.slogdet(fim)[1])))

    deterministic = True
    for name in ("cartpole", "mountaincar", "radar"):
        env = make_env(name)
        u = np.full(env.control_dim, 0.3)
        a = env.step(env.reset(3), u)
        b = env.step(env.reset(3), u)
        deterministic &= bool(np.array_equal(a, b))
    return SuiteResult(
        "envs", worst < tol and deterministic, worst, tol,
        "FIM log-det vs numeric Jacobian; deterministic steps" + ("" if deterministic else " (NONDETERMINISTIC)"),
        time.perf_counter() - start,
    )


SUITES: dict[str, Callable[[], SuiteResult]] = {
    "gradients": gradient_suite,
    "bound": bound_suite,
    "rls-equivalence": rls_equivalence_suite,
    "mppi": mppi_suite,
    "envs": envs_suite,
}


def verify(suite_name: str) -> list[SuiteResult]:
    if suite_name == "all":
        return [fn() for fn in SUITES.values()]
    if suite_name not in SUITES:
        raise ValueError(f"unknown suite {suite_name!r}; choose from {sorted(SUITES) + ['all']}")
    return [SUITES[suite_name]()]
