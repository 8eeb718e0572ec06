"""Online first-order baseline: one gradient step on the moment-matching loss
per observed expert record."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost_model import CostEval


@dataclass(frozen=True)
class SgdState:
    theta: np.ndarray
    learning_rate: float = 1e-4
    step_index: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


def sgd_step(state: SgdState, demo_eval: CostEval, samp_eval: CostEval) -> SgdState:
    innovation = demo_eval.grad - samp_eval.grad
    if not np.all(np.isfinite(innovation)):
        raise FloatingPointError("non-finite cost gradients")
    return SgdState(state.theta - state.learning_rate * innovation, state.learning_rate, state.step_index + 1)


def quadratic_benchmark(seed: int, d: int = 6, tol: float = 1e-3, max_iter: int = 5000,
                        p0: float = 1e-2, q: float = 1e-4, learning_rate: float = 1e-4) -> tuple[int, int]:
    """Iterations for RDIRL and SGD to reach ``||theta - theta*|| < tol``.

    Per step the demo cost is 0.5 (theta.phi - theta*.phi)^2 on a fresh
    random feature vector and the sample cost is zero, so the expected
    innovation vanishes exactly at theta*. Returns ``max_iter + 1`` for a
    learner that never gets there.
    """
    from .cost_model import FeatureCost
    from .recursive_optimizer import rdirl_init, rdirl_step

    rng = np.random.default_rng(seed)
    theta_star = rng.normal(size=d)
    theta0 = theta_star + rng.normal(size=d)
    phis = rng.normal(size=(max_iter, d))
    demo_cost = FeatureCost(linear_weight=0.0, square_weight=1.0)
    zero = CostEval(0.0, np.zeros(d), np.zeros((d, d)))

    def run(step, theta_of, state):
        for i in range(max_iter):
            if np.linalg.norm(theta_of(state) - theta_star) < tol:
                return i
            phi = phis[i]
            state = step(state, demo_cost.evaluate(theta_of(state), phi, theta_star @ phi), zero)
        return i + 1 if np.linalg.norm(theta_of(state) - theta_star) < tol else max_iter + 1

    n_rdirl = run(rdirl_step, lambda s: s.theta_hat, rdirl_init(d, p0, q, theta0))
    n_sgd = run(sgd_step, lambda s: s.theta, SgdState(theta0.copy(), learning_rate))
    return n_rdirl, n_sgd
