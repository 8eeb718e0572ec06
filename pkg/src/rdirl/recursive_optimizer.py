"""Recursive second-order update of the cost parameters.

Each expert record and each record sampled from the inner policy contributes
``c(demo) - c(samp)`` to a summation loss that is regularized by a random-walk
prior on the parameters. Minimizing it one record at a time with a Newton
step gives a Kalman-filter-like recursion::

    P_i     = [(P_{i-1} + Q)^-1 + (H_demo - H_samp)]^-1
    theta_i = theta_{i-1} - P_i (g_demo - g_samp)

The curvature difference is indefinite in general, so by default it is
projected onto the PSD cone before it enters the information matrix.

The module also provides the MaxEnt negative log-likelihood, the
moment-matching loss, and a certificate that the latter (plus constants)
upper-bounds the former.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .cost_model import CostEval, CostNet, cost_forward_batch, theta_from_bytes, theta_to_bytes

Array = np.ndarray

PSD_EIG_FLOOR = 1e-8
CHOLESKY_JITTER = 1e-10


class RdirlError(RuntimeError):
    pass


@dataclass(frozen=True)
class RdirlState:
    theta_hat: Array
    p_theta: Array
    q_theta: Array
    step_index: int = 0

    @property
    def d_theta(self) -> int:
        return self.theta_hat.size


def rdirl_init(
    d_theta: int,
    p0_scale: float = 1e-2,
    q_scale: float = 1e-4,
    theta0: Array | None = None,
) -> RdirlState:
    if d_theta < 1:
        raise ValueError("d_theta must be positive")
    if not p0_scale > 0:
        raise ValueError(f"p0_scale must be > 0, got {p0_scale}")
    if not q_scale >= 0:
        raise ValueError(f"q_scale must be >= 0, got {q_scale}")
    theta = np.zeros(d_theta) if theta0 is None else np.array(theta0, dtype=float).ravel()
    if theta.size != d_theta:
        raise ValueError("theta0 does not match d_theta")
    eye = np.eye(d_theta)
    return RdirlState(theta, p0_scale * eye, q_scale * eye, 0)


def reset_covariance(state: RdirlState, p0_scale: float) -> RdirlState:
    """Re-initialize P while keeping theta (start of a new episode)."""
    return replace(state, p_theta=p0_scale * np.eye(state.d_theta))


# ---------------------------------------------------------------------------
# Linear algebra helpers
# ---------------------------------------------------------------------------


def project_psd(M: Array, floor: float = PSD_EIG_FLOOR) -> Array:
    """Symmetrize, then clamp eigenvalues from below at ``floor``."""
    S = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(S)
    return (V * np.maximum(w, floor)) @ V.T


def project_psd_lowrank(
    pos: Array, neg: Array, shift: float = 0.0, floor: float = PSD_EIG_FLOOR
) -> Array:
    """PSD projection of ``pos pos^T - neg neg^T + shift*I``.

    Same result as :func:`project_psd` on the assembled matrix but costs one
    thin QR and an r-by-r eigenproblem, r = number of factor columns.
    """
    d = pos.shape[0]
    U = np.hstack([pos, neg])
    if U.shape[1] == 0:
        return max(shift, floor) * np.eye(d)
    signs = np.concatenate([np.ones(pos.shape[1]), -np.ones(neg.shape[1])])
    Qm, R = np.linalg.qr(U)
    small = (R * signs) @ R.T
    w, V = np.linalg.eigh(0.5 * (small + small.T))
    base = max(shift, floor)
    B = Qm @ V
    out = (B * (np.maximum(w + shift, floor) - base)) @ B.T
    out[np.diag_indices(d)] += base
    return 0.5 * (out + out.T)


def _spd_inverse(A: Array, what: str) -> Array:
    """Inverse of a symmetric PD matrix from its Cholesky factor (LAPACK potrf/potri)."""
    A = 0.5 * (A + A.T)
    for jitter in (0.0, CHOLESKY_JITTER):
        work = A + jitter * np.eye(A.shape[0]) if jitter else A
        c, info = linalg.lapack.dpotrf(work, lower=True, clean=False)
        if info != 0:
            continue
        inv, info = linalg.lapack.dpotri(c, lower=True)
        if info != 0:
            continue
        # potri fills only the lower triangle
        lower = np.tril(inv)
        return lower + np.tril(inv, -1).T
    raise RdirlError(f"{what} is not positive definite (check q_scale / p0_scale)")


def _curvature_innovation(demo: CostEval, samp: CostEval, project: bool) -> Array:
    if not project:
        M = demo.curvature - samp.curvature
        return 0.5 * (M + M.T)
    if demo.factor is not None and samp.factor is not None:
        return project_psd_lowrank(demo.factor, samp.factor, demo.damping - samp.damping)
    return project_psd(demo.curvature - samp.curvature)


# ---------------------------------------------------------------------------
# The recursion
# ---------------------------------------------------------------------------


def rdirl_step(
    state: RdirlState,
    demo_eval: CostEval,
    samp_eval: CostEval,
    project: bool = True,
    check_pd: bool = False,
) -> RdirlState:
    """One recursive Newton update from a demo/sample evaluation pair.

    Both evaluations must be taken at ``state.theta_hat``. ``project=False``
    uses the raw curvature difference (no PD guarantee on P).
    """
    innovation = demo_eval.grad - samp_eval.grad
    if not np.all(np.isfinite(innovation)):
        raise RdirlError("non-finite cost gradients; the cost network has diverged")

    prior_info = _spd_inverse(state.p_theta + state.q_theta, "P + Q")
    info = prior_info + _curvature_innovation(demo_eval, samp_eval, project)
    if project:
        try:
            p_new = _spd_inverse(info, "posterior information")
        except RdirlError as exc:
            scale = float(np.max(np.abs(info)))
            raise RdirlError(f"posterior information is not positive definite (max entry {scale:.1e}); "
                             "curvature this large usually means the cost net is diverging") from exc
    else:
        try:
            p_new = np.linalg.inv(0.5 * (info + info.T))
        except np.linalg.LinAlgError as exc:
            raise RdirlError("posterior information is singular") from exc
        p_new = 0.5 * (p_new + p_new.T)

    if check_pd and np.linalg.eigvalsh(p_new).min() <= 0.0:
        raise RdirlError("covariance lost positive definiteness")

    theta_new = state.theta_hat - p_new @ innovation
    return RdirlState(theta_new, p_new, state.q_theta, state.step_index + 1)


def batch_newton_oracle(
    demos: Sequence[Callable[[Array], CostEval]],
    samps: Sequence[Callable[[Array], CostEval]],
    theta0: Array,
    p0: Array | float,
    q: Array | float,
    return_all: bool = False,
) -> Array:
    """Minimize the regularized summation loss over all parameter snapshots.

    The objective over ``Theta = (theta_0, ..., theta_N)`` is::

        0.5 |theta_0 - theta0|^2_{P0^-1}
          + sum_i [ l_i(theta_i) + 0.5 |theta_i - theta_{i-1}|^2_{Q^-1} ]

    with ``l_i = c(demo_i) - c(samp_i)``. One Newton step from
    ``Theta = theta0`` is taken on the assembled block-tridiagonal system,
    which is the exact minimizer when every ``l_i`` is quadratic. ``Q = 0``
    ties all snapshots together. Returns the last block (or all blocks).
    """
    if len(demos) != len(samps):
        raise ValueError("demo and sample sequences differ in length")
    theta0 = np.asarray(theta0, dtype=float).ravel()
    d = theta0.size
    n = len(demos)
    P0 = p0 * np.eye(d) if np.isscalar(p0) else np.asarray(p0, dtype=float)
    Q = q * np.eye(d) if np.isscalar(q) else np.asarray(q, dtype=float)
    P0_inv = np.linalg.inv(P0)

    step_terms = []
    for demo, samp in zip(demos, samps):
        ed, es = demo(theta0), samp(theta0)
        step_terms.append((ed.grad - es.grad, ed.curvature - es.curvature))

    if n == 0:
        return np.tile(theta0, (1, 1)) if return_all else theta0.copy()

    if not np.any(Q):
        H = P0_inv + sum(h for _, h in step_terms)
        g = sum(gi for gi, _ in step_terms)
        try:
            theta = theta0 - np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise RdirlError("singular Newton system") from exc
        return np.tile(theta, (n + 1, 1)) if return_all else theta

    Q_inv = np.linalg.inv(Q)
    size = (n + 1) * d
    H = np.zeros((size, size))
    g = np.zeros(size)

    def blk(i: int) -> slice:
        return slice(i * d, (i + 1) * d)

    H[blk(0), blk(0)] += P0_inv
    for i, (gi, hi) in enumerate(step_terms, start=1):
        H[blk(i - 1), blk(i - 1)] += Q_inv
        H[blk(i), blk(i)] += Q_inv + hi
        H[blk(i - 1), blk(i)] -= Q_inv
        H[blk(i), blk(i - 1)] -= Q_inv
        g[blk(i)] += gi
    try:
        delta = np.linalg.solve(H, g)
    except np.linalg.LinAlgError as exc:
        raise RdirlError("singular Newton system") from exc
    Theta = np.tile(theta0, n + 1) - delta
    Theta = Theta.reshape(n + 1, d)
    return Theta if return_all else Theta[-1]


# ---------------------------------------------------------------------------
# Losses and the bound certificate
# ---------------------------------------------------------------------------


def _trajectory_costs(net: CostNet, trajectories: Sequence[Array]) -> Array:
    return np.array([float(np.sum(cost_forward_batch(net, np.atleast_2d(t)))) for t in trajectories])


def _log_q(q_probs: Sequence[float] | Array) -> Array:
    q = np.asarray(q_probs, dtype=float)
    if np.any(~(q > 0)) or not np.all(np.isfinite(q)):
        raise ValueError("sampler probabilities must be positive and finite")
    return np.log(q)


def loss_nll(net: CostNet, demos: Sequence[Array], samps: Sequence[Array], q_probs) -> float:
    """Importance-sampled MaxEnt negative log-likelihood.

    ``mean(c(demo)) + log mean(exp(-c(samp)) / q(samp))``, evaluated with
    log-sum-exp. ``demos``/``samps`` are trajectories given as state arrays.
    """
    if len(samps) == 0 or len(demos) == 0:
        raise ValueError("need at least one demo and one sample")
    log_q = _log_q(q_probs)
    if log_q.size != len(samps):
        raise ValueError("one sampler probability per sampled trajectory")
    c_demo = _trajectory_costs(net, demos)
    c_samp = _trajectory_costs(net, samps)
    return float(np.mean(c_demo) + logsumexp(-c_samp - log_q) - np.log(len(samps)))


def loss_ubmm(net: CostNet, demos: Sequence[Array], samps: Sequence[Array]) -> float:
    """Moment-matching loss: sum over pairs of c(demo_i) - c(samp_i)."""
    if len(demos) != len(samps):
        raise ValueError(f"{len(demos)} demos vs {len(samps)} samples")
    return float(np.sum(_trajectory_costs(net, demos) - _trajectory_costs(net, samps)))


@dataclass(frozen=True)
class BoundCertificate:
    nll: float
    ubmm: float
    a: float
    b: float
    k_constant: float
    slack: float
    # the bound with +K instead of -K; it can undercut the nll
    ubmm_plus_k: float
    log_a: float
    log_b: float

    @property
    def holds(self) -> bool:
        return self.slack >= -1e-9


def jensen_constant(log_a: float, log_b: float) -> float:
    """K = log a + log b - 2 log((a+b)/2), computed in the log domain (K <= 0)."""
    log_mid = np.logaddexp(log_a, log_b) - np.log(2.0)
    return float(log_a + log_b - 2.0 * log_mid)


def verify_bound(net: CostNet, demos: Sequence[Array], samps: Sequence[Array], q_probs) -> BoundCertificate:
    """Evaluate both sides of the Jensen-variant bound on the MaxEnt NLL.

    With ``y_n = exp(-c(samp_n)) / q_n`` ranging over ``[a, b]``::

        nll <= mean(c(demo)) + mean(-c(samp) - log q) - K

    where ``K <= 0``; the right-hand side equals
    ``loss_ubmm / N - mean(log q) - K``.
    """
    if len(demos) != len(samps):
        raise ValueError("the bound pairs one demo with one sample")
    log_q = _log_q(q_probs)
    c_demo = _trajectory_costs(net, demos)
    c_samp = _trajectory_costs(net, samps)
    log_y = -c_samp - log_q
    if not np.all(np.isfinite(log_y)):
        raise ValueError("importance ratios must be finite and positive")
    n = len(samps)
    nll = float(np.mean(c_demo) + logsumexp(log_y) - np.log(n))
    log_a, log_b = float(log_y.min()), float(log_y.max())
    K = jensen_constant(log_a, log_b)
    base = float(np.mean(c_demo) + np.mean(log_y))
    ubmm = base - K
    return BoundCertificate(
        nll=nll,
        ubmm=ubmm,
        a=float(np.exp(log_a)),
        b=float(np.exp(log_b)),
        k_constant=K,
        slack=ubmm - nll,
        ubmm_plus_k=base + K,
        log_a=log_a,
        log_b=log_b,
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CKPT = struct.Struct("<4sIQ")  # magic, version, step index
CKPT_MAGIC = b"RDPC"


def save_checkpoint(state: RdirlState, path: str | Path) -> None:
    """theta file, then magic/version/step header, then P and Q (row-major f8)."""
    d = state.d_theta
    blob = theta_to_bytes(state.theta_hat)
    blob += _CKPT.pack(CKPT_MAGIC, 1, state.step_index)
    blob += np.ascontiguousarray(state.p_theta, dtype="<f8").tobytes()
    blob += np.ascontiguousarray(state.q_theta, dtype="<f8").tobytes()
    Path(path).write_bytes(blob)


def load_checkpoint(path: str | Path) -> RdirlState:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise RdirlError("checkpoint too short")
    d = struct.unpack_from("<Q", data, 8)[0]
    theta_len = 16 + 8 * d
    theta = theta_from_bytes(data[:theta_len])
    if len(data) != theta_len + _CKPT.size + 16 * d * d:
        raise RdirlError("checkpoint size does not match its header")
    magic, version, step = _CKPT.unpack_from(data, theta_len)
    if magic != CKPT_MAGIC or version != 1:
        raise RdirlError("bad checkpoint header")
    off = theta_len + _CKPT.size
    mats = np.frombuffer(data[off:], dtype="<f8").astype(float).reshape(2, d, d)
    return RdirlState(theta, mats[0].copy(), mats[1].copy(), int(step))
