import numpy as np
import pytest

from rdirl.baselines import SgdState, quadratic_benchmark, sgd_step
from rdirl.cost_model import CostEval, FeatureCost
from rdirl.recursive_optimizer import rdirl_init, rdirl_step


def ev(grad):
    grad = np.atleast_1d(np.asarray(grad, dtype=float))
    return CostEval(0.0, grad, np.eye(grad.size))


def test_equal_gradients_leave_theta():
    s = SgdState(np.array([1.0, 2.0]))
    new = sgd_step(s, ev([0.3, 0.4]), ev([0.3, 0.4]))
    np.testing.assert_array_equal(new.theta, s.theta)
    assert new.step_index == 1


def test_scalar_step():
    new = sgd_step(SgdState(np.array([1.0]), 0.1), ev([3.0]), ev([1.0]))
    assert new.theta[0] == pytest.approx(0.8, abs=1e-15)


def test_validation():
    with pytest.raises(ValueError):
        SgdState(np.zeros(2), 0.0)
    with pytest.raises(FloatingPointError):
        sgd_step(SgdState(np.zeros(1)), ev([np.inf]), ev([0.0]))


def test_shared_fixed_point():
    # zero innovation is stationary for both learners
    theta = np.array([0.2, -0.1, 0.4])
    e = ev([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(sgd_step(SgdState(theta), e, e).theta, theta)
    np.testing.assert_array_equal(rdirl_step(rdirl_init(3, theta0=theta), e, e).theta_hat, theta)


def test_both_learners_reach_the_same_fixed_point():
    rng = np.random.default_rng(0)
    d = 4
    theta_star = rng.normal(size=d)
    cost = FeatureCost(0.0, 1.0)
    zero = CostEval(0.0, np.zeros(d), np.zeros((d, d)))
    sgd, rd = SgdState(np.zeros(d), 0.05), rdirl_init(d, 1e-2, 1e-4)
    for _ in range(3000):
        phi = rng.normal(size=d)
        sgd = sgd_step(sgd, cost.evaluate(sgd.theta, phi, theta_star @ phi), zero)
        rd = rdirl_step(rd, cost.evaluate(rd.theta_hat, phi, theta_star @ phi), zero)
    np.testing.assert_allclose(sgd.theta, theta_star, atol=1e-6)
    np.testing.assert_allclose(rd.theta_hat, theta_star, atol=1e-6)


def test_second_order_needs_fewer_iterations():
    n_rdirl, n_sgd = quadratic_benchmark(0)
    assert n_rdirl < n_sgd
