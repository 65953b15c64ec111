"""Scalar-output fully connected networks with exact input derivatives.

The learned dissipative Lagrangian is a scalar function of the state vector;
its input gradient, input Hessian and Hessian-vector products (HVPs) enter
the training losses, so the engine must support exact parameter gradients of
losses that themselves contain second input derivatives (third-order
differentiation). Derivatives here are composed from jax transformations:
HVPs are forward-over-reverse (one jvp through the input gradient), and full
Hessians are assembled only where a dense matrix is actually wanted
(extraction, diagnostics).

All arrays are float64. Evaluations are pure functions of (params, input)
and safe to vmap/jit at call sites.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np

ACTIVATIONS: dict[str, Callable] = {
    "tanh": jnp.tanh,
    "identity": lambda z: z,
    # z^2 lets a one-hidden-layer net represent an exact quadratic form; used
    # by the reference ("stub") networks in tests and extraction checks.
    "square": lambda z: z * z,
}


class NonFiniteLossError(RuntimeError):
    """A loss evaluation produced NaN/inf."""


@jax.tree_util.register_pytree_node_class
@dataclass(frozen=True)
class NetworkParams:
    """Weights/biases of a fully connected network plus its architecture.

    layer_sizes: (n_in, hidden..., n_out); weights[i] has shape
    (layer_sizes[i+1], layer_sizes[i]) and biases[i] shape (layer_sizes[i+1],).
    The activation is applied after every layer except the last and must be
    at least twice continuously differentiable for the Hessian-bearing losses.
    """

    layer_sizes: Tuple[int, ...]
    weights: Tuple[jnp.ndarray, ...]
    biases: Tuple[jnp.ndarray, ...]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                f"unknown activation {self.activation!r}; "
                f"expected one of {sorted(ACTIVATIONS)}"
            )
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"layer_sizes must be >=2 positive ints, got {sizes}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError(
                f"{len(sizes) - 1} layers require {len(sizes) - 1} weight/bias "
                f"arrays, got {len(self.weights)}/{len(self.biases)}"
            )
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (sizes[i + 1], sizes[i])
            if tuple(w.shape) != want:
                raise ValueError(f"weights[{i}] has shape {w.shape}, expected {want}")
            if tuple(b.shape) != (sizes[i + 1],):
                raise ValueError(
                    f"biases[{i}] has shape {b.shape}, expected ({sizes[i + 1]},)"
                )

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def tree_flatten(self):
        return (self.weights, self.biases), (self.layer_sizes, self.activation)

    @classmethod
    def tree_unflatten(cls, aux, children):
        weights, biases = children
        layer_sizes, activation = aux
        # Bypass validation: jax may rebuild with tracers / partial values.
        obj = object.__new__(cls)
        object.__setattr__(obj, "layer_sizes", layer_sizes)
        object.__setattr__(obj, "weights", tuple(weights))
        object.__setattr__(obj, "biases", tuple(biases))
        object.__setattr__(obj, "activation", activation)
        return obj


def init_network(
    layer_sizes: Sequence[int], activation: str = "tanh", seed: int = 0
) -> NetworkParams:
    """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(jnp.asarray(rng.uniform(-bound, bound, size=(fan_out, fan_in))))
        biases.append(jnp.zeros(fan_out))
    return NetworkParams(sizes, tuple(weights), tuple(biases), activation)


def quadratic_net(q: np.ndarray) -> NetworkParams:
    """Network computing exactly 0.5 * u^T Q u for symmetric Q.

    Uses the eigendecomposition Q = V diag(lam) V^T: first layer rotates into
    the eigenbasis, the squaring activation produces (v_i^T u)^2, and the
    output layer weights them by lam_i / 2. The input Hessian of the result
    is Q itself, which makes these nets exact references for the matrix
    extraction and residual operations.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ValueError(f"Q must be square, got shape {q.shape}")
    if not np.allclose(q, q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(q).max())):
        raise ValueError("Q must be symmetric")
    lam, vec = np.linalg.eigh(0.5 * (q + q.T))
    n = q.shape[0]
    w1 = jnp.asarray(vec.T)
    w2 = jnp.asarray(0.5 * lam[None, :])
    return NetworkParams(
        (n, n, 1), (w1, w2), (jnp.zeros(n), jnp.zeros(1)), activation="square"
    )


def _check_input(params: NetworkParams, u, name: str = "input"):
    u = jnp.asarray(u, dtype=jnp.float64)
    if u.ndim != 1 or u.shape[0] != params.n_in:
        raise ValueError(
            f"{name} has shape {u.shape}, but the network takes "
            f"({params.n_in},) (layer_sizes={params.layer_sizes})"
        )
    return u


def network_output(params: NetworkParams, u) -> jnp.ndarray:
    """Raw output vector of the network (length layer_sizes[-1])."""
    u = _check_input(params, u)
    act = ACTIVATIONS[params.activation]
    a = u
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = act(w @ a + b)
    return params.weights[-1] @ a + params.biases[-1]


def _check_scalar(params: NetworkParams, op: str):
    if params.n_out != 1:
        raise ValueError(
            f"{op} requires a scalar-output network, got output width "
            f"{params.n_out} (layer_sizes={params.layer_sizes})"
        )


def forward(params: NetworkParams, u) -> jnp.ndarray:
    """Scalar network value at input u."""
    _check_scalar(params, "forward")
    return network_output(params, u)[0]


def input_gradient(params: NetworkParams, u) -> jnp.ndarray:
    """Exact gradient of forward() with respect to the input (not params)."""
    _check_scalar(params, "input_gradient")
    u = _check_input(params, u)
    return jax.grad(lambda x: network_output(params, x)[0])(u)


def input_hvp(params: NetworkParams, u, v) -> jnp.ndarray:
    """Input-Hessian-vector product H(u) @ v at one gradient-like cost.

    Forward-over-reverse: a jvp through the input gradient, so the dense
    Hessian is never materialized.
    """
    _check_scalar(params, "input_hvp")
    u = _check_input(params, u)
    v = jnp.asarray(v, dtype=jnp.float64)
    if v.shape != u.shape:
        raise ValueError(f"direction has shape {v.shape}, expected {u.shape}")
    grad_fn = jax.grad(lambda x: network_output(params, x)[0])
    return jax.jvp(grad_fn, (u,), (v,))[1]


def input_hessian(params: NetworkParams, u) -> jnp.ndarray:
    """Full input Hessian, assembled as HVPs against the basis directions."""
    _check_scalar(params, "input_hessian")
    u = _check_input(params, u)
    return jax.vmap(lambda e: input_hvp(params, u, e))(jnp.eye(u.shape[0]))


def loss_param_gradient(params: NetworkParams, loss_fn: Callable):
    """Value and exact parameter gradient of loss_fn(params).

    loss_fn may contain forward/input_gradient/input_hvp evaluations; the
    gradient is exact through the input-Hessian terms (third-order paths).
    Raises NonFiniteLossError if the loss value is NaN/inf.
    """
    value, grads = jax.value_and_grad(loss_fn)(params)
    if not np.isfinite(float(value)):
        raise NonFiniteLossError(f"loss evaluated to {float(value)!r}")
    return value, grads


@dataclass
class DerivativeBundle:
    """Value, input gradient and (optionally) input Hessian at one input."""

    value: float
    gradient: np.ndarray
    hessian: Optional[np.ndarray] = None


def derivative_bundle(
    params: NetworkParams, u, with_hessian: bool = False
) -> DerivativeBundle:
    value = float(forward(params, u))
    grad = np.asarray(input_gradient(params, u))
    hess = np.asarray(input_hessian(params, u)) if with_hessian else None
    return DerivativeBundle(value, grad, hess)
