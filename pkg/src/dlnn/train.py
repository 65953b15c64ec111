"""Adam optimization of the learned networks against the residual losses.

Both the dissipative-Lagrangian loss and the baseline rate-regression loss
are means of squared residual entries over the batch, so "trained to the
same loss" comparisons between the two model families are meaningful.

One epoch is a full pass over the dataset in mini-batches of
config.batch_size; early stopping checks the full-dataset loss after every
epoch. Runs are deterministic for a fixed (dataset, config, architecture).
"""

from __future__ import annotations

import json
import time
import zipfile
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np

from .datagen import SampleBatch
from .lagrangian import diffusion_residual, mechanics_residual
from .network import NetworkParams, NonFiniteLossError, init_network, network_output

CHECKPOINT_VERSION = 1
DIVERGENCE_LOSS = 1e6


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1000
    max_epochs: int = 1000
    target_loss: float = 0.0
    seed: int = 0
    # optional step decay (0 disables)
    lr_decay_every: int = 0
    lr_decay_factor: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ValueError("Adam betas must be in (0, 1)")
        if self.target_loss < 0:
            raise ValueError("target_loss must be >= 0")


@dataclass
class TrainReport:
    loss_history: np.ndarray
    final_loss: float
    epochs_run: int
    wall_time: float
    epoch_times: Optional[np.ndarray] = None  # cumulative seconds per epoch


class TrainingDiverged(RuntimeError):
    """Loss exceeded the divergence threshold; carries the report so far."""

    def __init__(self, message: str, report: TrainReport):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@jax.tree_util.register_pytree_node_class
@dataclass
class AdamState:
    count: jnp.ndarray
    m: NetworkParams
    v: NetworkParams

    def tree_flatten(self):
        return (self.count, self.m, self.v), None

    @classmethod
    def tree_unflatten(cls, aux, children):
        return cls(*children)


def init_adam_state(params: NetworkParams) -> AdamState:
    zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
    return AdamState(jnp.zeros((), dtype=jnp.int64), zeros, zeros)


def _adam_update(params, grads, state, lr, beta1, beta2, eps):
    count = state.count + 1
    b1t = 1.0 - beta1 ** count
    b2t = 1.0 - beta2 ** count
    m = jax.tree_util.tree_map(
        lambda mi, g: beta1 * mi + (1.0 - beta1) * g, state.m, grads
    )
    v = jax.tree_util.tree_map(
        lambda vi, g: beta2 * vi + (1.0 - beta2) * g * g, state.v, grads
    )
    new_params = jax.tree_util.tree_map(
        lambda p, mi, vi: p - lr * (mi / b1t) / (jnp.sqrt(vi / b2t) + eps),
        params, m, v,
    )
    return new_params, AdamState(count, m, v)


def adam_step(
    params: NetworkParams, param_grads: NetworkParams, adam_state: AdamState,
    config: TrainConfig,
) -> Tuple[NetworkParams, AdamState]:
    """One standard Adam update with bias correction.

    Rejects non-finite gradients: the parameters and optimizer state are
    returned unchanged inside the raised error's context.
    """
    flat, _ = jax.tree_util.tree_flatten(param_grads)
    for g in flat:
        if not np.isfinite(np.asarray(g)).all():
            raise NonFiniteLossError("non-finite gradient; step rejected")
    return _adam_update(
        params, param_grads, adam_state,
        config.learning_rate, config.adam_beta1, config.adam_beta2,
        config.adam_eps,
    )


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def _run_training(params, per_sample_residual, states, rates, config):
    """Shared epoch loop; per_sample_residual(params, state, rate) -> vector."""
    states = jnp.asarray(states, dtype=jnp.float64)
    rates = jnp.asarray(rates, dtype=jnp.float64)
    n_samples = states.shape[0]

    def loss_fn(p, s, r):
        res = jax.vmap(lambda si, ri: per_sample_residual(p, si, ri))(s, r)
        return jnp.mean(res ** 2)

    @jax.jit
    def update(p, opt, s, r, lr):
        value, grads = jax.value_and_grad(loss_fn)(p, s, r)
        p, opt = _adam_update(p, grads, opt, lr, config.adam_beta1,
                              config.adam_beta2, config.adam_eps)
        return p, opt, value

    full_loss = jax.jit(lambda p: loss_fn(p, states, rates))

    opt = init_adam_state(params)
    rng = np.random.default_rng(config.seed)
    batch_size = min(config.batch_size, n_samples)
    n_batches = int(np.ceil(n_samples / batch_size))
    lr = config.learning_rate

    history = []
    stamps = []
    t_start = time.perf_counter()
    for epoch in range(config.max_epochs):
        if n_batches == 1:
            params, opt, _ = update(params, opt, states, rates, lr)
        else:
            perm = rng.permutation(n_samples)
            for b in range(n_batches):
                idx = perm[b * batch_size:(b + 1) * batch_size]
                params, opt, _ = update(params, opt, states[idx], rates[idx], lr)
        loss = float(full_loss(params))
        history.append(loss)
        stamps.append(time.perf_counter() - t_start)
        if not np.isfinite(loss):
            bad = _first_nonfinite_sample(per_sample_residual, params, states, rates)
            raise NonFiniteLossError(
                f"non-finite loss at epoch {epoch + 1}"
                + (f" (first offending sample index {bad})" if bad is not None else "")
            )
        if loss > DIVERGENCE_LOSS:
            report = TrainReport(np.asarray(history), loss, len(history),
                                 stamps[-1], np.asarray(stamps))
            raise TrainingDiverged(
                f"loss {loss:.3e} exceeded {DIVERGENCE_LOSS:.0e} "
                f"at epoch {epoch + 1}", report
            )
        if loss <= config.target_loss:
            break
        if (config.lr_decay_every > 0
                and (epoch + 1) % config.lr_decay_every == 0):
            lr *= config.lr_decay_factor

    report = TrainReport(np.asarray(history), history[-1], len(history),
                         stamps[-1], np.asarray(stamps))
    return params, report


def _first_nonfinite_sample(per_sample_residual, params, states, rates):
    res = jax.vmap(lambda s, r: per_sample_residual(params, s, r))(states, rates)
    bad = np.where(~np.isfinite(np.asarray(res)).all(axis=1))[0]
    return int(bad[0]) if bad.size else None


def train_dlnn(
    batch: SampleBatch,
    arch: Sequence[int],
    config: TrainConfig,
    loss_kind: Optional[str] = None,
    mass_matrix: Optional[np.ndarray] = None,
) -> Tuple[NetworkParams, TrainReport]:
    """Train a scalar dissipative-Lagrangian network on (state, rate) data.

    arch lists the hidden-layer widths; the input width comes from the batch
    and the output is the single scalar. For mechanics batches the state rows
    are (x, x_dot) and the known mass matrix (default: identity) multiplies
    the acceleration in the residual.
    """
    loss_kind = loss_kind or batch.kind
    if loss_kind != batch.kind:
        raise ValueError(f"loss_kind {loss_kind!r} does not match batch kind "
                         f"{batch.kind!r}")
    n_in = batch.states.shape[1]
    params = init_network((n_in, *arch, 1), "tanh", seed=config.seed)

    if loss_kind == "diffusion":
        residual = lambda p, s, r: diffusion_residual(p, s, r)  # noqa: E731
    else:
        n = batch.rates.shape[1]
        if n_in != 2 * n:
            raise ValueError(f"mechanics batch has state width {n_in}, "
                             f"expected 2N = {2 * n}")
        m_mat = jnp.eye(n) if mass_matrix is None else jnp.asarray(mass_matrix)

        def residual(p, s, r):
            return mechanics_residual(p, m_mat, s[:n], s[n:], r)

    return _run_training(params, residual, batch.states, batch.rates, config)


def train_baseline(
    batch: SampleBatch, arch: Sequence[int], config: TrainConfig
) -> Tuple[NetworkParams, TrainReport]:
    """Train the direct state-to-rate regression network.

    Output width equals the rate width (N), against the same mean-squared
    rate-prediction loss as the dissipative-Lagrangian model.
    """
    n_in = batch.states.shape[1]
    n_out = batch.rates.shape[1]
    params = init_network((n_in, *arch, n_out), "tanh", seed=config.seed)
    residual = lambda p, s, r: network_output(p, s) - r  # noqa: E731
    return _run_training(params, residual, batch.states, batch.rates, config)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

class CheckpointError(RuntimeError):
    pass


def save_checkpoint(
    params: NetworkParams, path, report: Optional[TrainReport] = None,
    meta: Optional[dict] = None,
) -> None:
    """npz archive: JSON manifest + flat row-major weight/bias arrays."""
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "layer_sizes": list(params.layer_sizes),
        "activation": params.activation,
        "meta": meta or {},
    }
    if report is not None:
        manifest["training"] = {
            "final_loss": float(report.final_loss),
            "epochs_run": int(report.epochs_run),
            "wall_time": float(report.wall_time),
        }
    arrays = {"manifest": np.array(json.dumps(manifest, sort_keys=True))}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"w{i}"] = np.asarray(w)
        arrays[f"b{i}"] = np.asarray(b)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> NetworkParams:
    try:
        with np.load(path, allow_pickle=False) as data:
            if "manifest" not in data:
                raise CheckpointError(f"{path}: not a checkpoint (no manifest)")
            manifest = json.loads(str(data["manifest"]))
            version = manifest.get("format_version")
            if version != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"{path}: incompatible checkpoint version {version!r} "
                    f"(expected {CHECKPOINT_VERSION})"
                )
            sizes = tuple(int(s) for s in manifest["layer_sizes"])
            weights, biases = [], []
            for i in range(len(sizes) - 1):
                weights.append(jnp.asarray(data[f"w{i}"]))
                biases.append(jnp.asarray(data[f"b{i}"]))
    except (OSError, zipfile.BadZipFile, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    return NetworkParams(sizes, tuple(weights), tuple(biases),
                         manifest["activation"])


def load_checkpoint_meta(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        if "manifest" not in data:
            raise CheckpointError(f"{path}: not a checkpoint (no manifest)")
        return json.loads(str(data["manifest"]))
