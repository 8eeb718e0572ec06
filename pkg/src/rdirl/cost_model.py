"""Scalar state-cost network with analytic gradient and curvature.

Parameters are kept as one flat vector ``theta``. The packing order is fixed:
for each layer, the weight matrix of shape ``(out_dim, in_dim)`` in row-major
order followed by its bias vector. Hidden layers use a rectifier (subgradient
0 at 0), the output layer is affine.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

Array = np.ndarray

DEFAULT_GN_DAMPING = 1e-6


class CostModelError(ValueError):
    pass


@dataclass(frozen=True)
class CostNet:
    layer_dims: tuple[int, ...]
    theta: Array

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise CostModelError(f"invalid layer dims {self.layer_dims}")
        if dims[-1] != 1:
            raise CostModelError("the cost network must have a scalar output")
        theta = np.array(self.theta, dtype=np.float64).ravel()
        if theta.size != param_count(dims):
            raise CostModelError(
                f"theta has {theta.size} entries, layer dims {dims} need {param_count(dims)}"
            )
        theta.setflags(write=False)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "theta", theta)

    @property
    def d_theta(self) -> int:
        return self.theta.size

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def with_theta(self, theta: Array) -> "CostNet":
        return CostNet(self.layer_dims, theta)

    def layers(self) -> list[tuple[Array, Array]]:
        """Views ``(W, b)`` per layer into ``theta``."""
        out = []
        offset = 0
        for n_in, n_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            W = self.theta[offset : offset + n_in * n_out].reshape(n_out, n_in)
            offset += n_in * n_out
            b = self.theta[offset : offset + n_out]
            offset += n_out
            out.append((W, b))
        return out


@dataclass(frozen=True)
class CostEval:
    """Value, gradient and curvature of a cost at one parameter vector.

    Gauss-Newton evaluations also carry ``factor`` (columns F with
    ``curvature == F F^T + damping*I``) so downstream code can work with the
    low-rank form.
    """

    value: float
    grad: Array
    curvature: Array
    factor: Array | None = None
    damping: float = 0.0

    def __add__(self, other: "CostEval") -> "CostEval":
        if self.factor is not None and other.factor is not None:
            factor = np.hstack([self.factor, other.factor])
        else:
            factor = None
        return CostEval(
            self.value + other.value,
            self.grad + other.grad,
            self.curvature + other.curvature,
            factor,
            self.damping + other.damping,
        )

    def scaled(self, k: float) -> "CostEval":
        factor = np.sqrt(k) * self.factor if (self.factor is not None and k >= 0) else None
        return CostEval(k * self.value, k * self.grad, k * self.curvature, factor, k * self.damping)


def param_count(layer_dims: Sequence[int]) -> int:
    return sum((n_in + 1) * n_out for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]))


def init_cost_net(layer_dims: Sequence[int], seed: int) -> CostNet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    dims = list(layer_dims)
    if len(dims) < 2 or any(int(d) < 1 for d in dims):
        raise CostModelError(f"invalid layer dims {layer_dims}")
    rng = np.random.default_rng(seed)
    chunks = []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(n_in)
        chunks.append(rng.uniform(-bound, bound, size=n_in * n_out))
        chunks.append(rng.uniform(-bound, bound, size=n_out))
    return CostNet(tuple(dims), np.concatenate(chunks))


def _check_input(net: CostNet, x: Array) -> Array:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (net.input_dim,):
        raise CostModelError(f"expected state of dimension {net.input_dim}, got shape {x.shape}")
    return x


def cost_forward(net: CostNet, x: Array) -> float:
    """c_theta(x) for a single state."""
    x = _check_input(net, x)
    if x.ndim != 1:
        raise CostModelError("cost_forward takes one state; use cost_forward_batch")
    return float(cost_forward_batch(net, x[None, :])[0])


def cost_forward_batch(net: CostNet, X: Array) -> Array:
    """Costs for a stack of states of shape ``(..., input_dim)``."""
    X = _check_input(net, X)
    lead = X.shape[:-1]
    a = X.reshape(-1, net.input_dim)
    layers = net.layers()
    for W, b in layers[:-1]:
        z = a @ np.ascontiguousarray(W.T)
        z += b
        a = np.maximum(z, 0.0, out=z)
    W, b = layers[-1]
    return (a @ W[0] + b[0]).reshape(lead)


def _forward_cache(net: CostNet, x: Array):
    acts = [x]
    masks = []
    layers = net.layers()
    a = x
    for W, b in layers[:-1]:
        z = W @ a + b
        m = (z > 0.0).astype(np.float64)
        masks.append(m)
        a = z * m
        acts.append(a)
    W, b = layers[-1]
    value = float((W @ a + b)[0])
    return value, acts, masks, layers


def cost_grad(net: CostNet, x: Array) -> tuple[float, Array]:
    """Value and exact reverse-mode gradient w.r.t. theta."""
    x = _check_input(net, x)
    value, acts, masks, layers = _forward_cache(net, x)
    grads: list[Array] = []
    delta = np.ones(1)
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        grads.append(delta.copy())
        grads.append(np.outer(delta, acts[li]).ravel())
        if li > 0:
            delta = (W.T @ delta) * masks[li - 1]
    # collected in reverse as (b_L, W_L, b_{L-1}, ...)
    return value, np.concatenate(grads[::-1])


def cost_hessian(net: CostNet, x: Array) -> Array:
    """Exact Hessian of c_theta(x) w.r.t. theta (forward-over-reverse).

    The rectifier masks are held fixed, which is exact away from kinks.
    """
    x = _check_input(net, x)
    _, acts, masks, layers = _forward_cache(net, x)
    D = net.d_theta
    n_layers = len(layers)

    # tangent of every parameter block along each of the D basis directions
    offsets = []
    offset = 0
    for W, b in layers:
        offsets.append((offset, offset + W.size))
        offset += W.size + b.size

    def dW(li: int) -> Array:
        W, _ = layers[li]
        start = offsets[li][0]
        T = np.zeros((D, W.size))
        T[start : start + W.size, :] = np.eye(W.size)
        return T.reshape(D, *W.shape)

    def db(li: int) -> Array:
        W, b = layers[li]
        start = offsets[li][1]
        T = np.zeros((D, b.size))
        T[start : start + b.size, :] = np.eye(b.size)
        return T

    # forward tangents of activations
    d_acts = [np.zeros((D, x.size))]
    for li in range(n_layers - 1):
        W, _ = layers[li]
        dz = np.einsum("dij,j->di", dW(li), acts[li]) + d_acts[li] @ W.T + db(li)
        d_acts.append(dz * masks[li])

    # reverse pass carrying tangents
    blocks: list[Array] = []
    delta = np.ones(1)
    d_delta = np.zeros((D, 1))
    for li in range(n_layers - 1, -1, -1):
        W, _ = layers[li]
        blocks.append(d_delta.copy())
        blocks.append((d_delta[:, :, None] * acts[li][None, None, :] + delta[None, :, None] * d_acts[li][:, None, :]).reshape(D, -1))
        if li > 0:
            d_delta_a = np.einsum("dij,i->dj", dW(li), delta) + d_delta @ W
            delta_a = W.T @ delta
            d_delta = d_delta_a * masks[li - 1]
            delta = delta_a * masks[li - 1]
    H = np.concatenate(blocks[::-1], axis=1)
    return 0.5 * (H + H.T)


def cost_backward(
    net: CostNet,
    x: Array,
    gn_damping: float = DEFAULT_GN_DAMPING,
    exact_hessian: bool = False,
) -> CostEval:
    """Value, gradient and curvature of c_theta at one state.

    Curvature defaults to the Gauss-Newton surrogate ``g g^T + gn_damping*I``;
    ``exact_hessian=True`` returns the true Hessian instead.
    """
    value, g = cost_grad(net, x)
    if exact_hessian:
        return CostEval(value, g, cost_hessian(net, x))
    curvature = np.outer(g, g)
    curvature[np.diag_indices_from(curvature)] += gn_damping
    return CostEval(value, g, curvature, g[:, None], gn_damping)


def trajectory_cost(
    net: CostNet,
    states: Iterable[Array],
    gn_damping: float = DEFAULT_GN_DAMPING,
    exact_hessian: bool = False,
) -> CostEval:
    """Sum of per-state evaluations over a trajectory's states."""
    total = None
    for x in states:
        ev = cost_backward(net, x, gn_damping, exact_hessian)
        total = ev if total is None else total + ev
    if total is None:
        raise CostModelError("trajectory has no states")
    return total


# ---------------------------------------------------------------------------
# Quadratic-in-theta feature costs (exact curvature, used by the test oracles)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureCost:
    """c_theta(phi) = w_lin * theta.phi + 0.5 * w_sq * (theta.phi - target)^2.

    Gradient and Hessian are exact, which makes the recursive update a true
    Newton step on these costs.
    """

    linear_weight: float = 1.0
    square_weight: float = 0.0

    def evaluate(self, theta: Array, phi: Array, target: float = 0.0) -> CostEval:
        theta = np.asarray(theta, dtype=float)
        phi = np.asarray(phi, dtype=float)
        s = float(theta @ phi)
        value = self.linear_weight * s + 0.5 * self.square_weight * (s - target) ** 2
        grad = (self.linear_weight + self.square_weight * (s - target)) * phi
        return CostEval(value, grad, self.square_weight * np.outer(phi, phi))


# ---------------------------------------------------------------------------
# Theta file format
# ---------------------------------------------------------------------------

THETA_MAGIC = b"RDTH"
THETA_VERSION = 1
_THETA_HEADER = struct.Struct("<4sIQ")  # magic, version (u32), d_theta (u64): 16 bytes


def theta_to_bytes(theta: Array) -> bytes:
    theta = np.ascontiguousarray(theta, dtype="<f8").ravel()
    return _THETA_HEADER.pack(THETA_MAGIC, THETA_VERSION, theta.size) + theta.tobytes()


def theta_from_bytes(data: bytes) -> Array:
    if len(data) < _THETA_HEADER.size:
        raise CostModelError("theta file shorter than its header")
    magic, version, n = _THETA_HEADER.unpack_from(data)
    if magic != THETA_MAGIC:
        raise CostModelError(f"bad theta magic {magic!r}")
    if version != THETA_VERSION:
        raise CostModelError(f"unsupported theta version {version}")
    body = data[_THETA_HEADER.size :]
    if len(body) != 8 * n:
        raise CostModelError(f"theta file declares {n} values but holds {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)


def save_theta(theta: Array, path: str | Path) -> None:
    Path(path).write_bytes(theta_to_bytes(theta))


def load_theta(path: str | Path) -> Array:
    return theta_from_bytes(Path(path).read_bytes())
