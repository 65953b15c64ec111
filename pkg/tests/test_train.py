import numpy as np
import pytest

from dlnn.datagen import SampleBatch, gen_two_pixel_dataset
from dlnn.network import NonFiniteLossError, forward, init_network
from dlnn.train import (
    AdamState,
    CheckpointError,
    TrainConfig,
    adam_step,
    init_adam_state,
    load_checkpoint,
    load_checkpoint_meta,
    save_checkpoint,
    train_baseline,
    train_dlnn,
)

TABLE1_K = np.array([[1.0, -0.4], [-0.4, 1.0]])


def tiny_net(seed=0):
    return init_network((2, 4, 1), "tanh", seed=seed)


def tree_arrays(params):
    return list(params.weights) + list(params.biases)


# ---------------------------------------------------------------------------
# adam_step
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params_unchanged():
    net = tiny_net()
    zeros = init_network((2, 4, 1), "tanh", seed=0)
    zeros = zeros.__class__(
        zeros.layer_sizes,
        tuple(np.zeros_like(np.asarray(w)) for w in zeros.weights),
        tuple(np.zeros_like(np.asarray(b)) for b in zeros.biases),
        "tanh",
    )
    new, _ = adam_step(net, zeros, init_adam_state(net), TrainConfig())
    for a, b in zip(tree_arrays(net), tree_arrays(new)):
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))


def test_adam_first_step_magnitude():
    # hand evaluation at t=1: m_hat = g, v_hat = g^2, so the update is
    # lr * g / (|g| + eps), i.e. magnitude ~= lr in the direction -sign(g)
    cfg = TrainConfig(learning_rate=1e-3)
    net = tiny_net()
    g = 0.37
    grads = net.__class__(
        net.layer_sizes,
        tuple(np.full_like(np.asarray(w), g) for w in net.weights),
        tuple(np.full_like(np.asarray(b), g) for b in net.biases),
        "tanh",
    )
    new, state = adam_step(net, grads, init_adam_state(net), cfg)
    expected = cfg.learning_rate * g / (abs(g) + cfg.adam_eps)
    delta = np.asarray(net.weights[0]) - np.asarray(new.weights[0])
    np.testing.assert_allclose(delta, expected, rtol=1e-12)
    assert int(state.count) == 1


def test_adam_constant_gradient_steady_update_approaches_lr():
    cfg = TrainConfig(learning_rate=2e-3)
    net = tiny_net()
    grads = net.__class__(
        net.layer_sizes,
        tuple(np.full_like(np.asarray(w), -1.3) for w in net.weights),
        tuple(np.full_like(np.asarray(b), -1.3) for b in net.biases),
        "tanh",
    )
    state = init_adam_state(net)
    prev = np.asarray(net.weights[0]).copy()
    params = net
    for _ in range(200):
        params, state = adam_step(params, grads, state, cfg)
    last = np.asarray(params.weights[0])
    # parameters move opposite the (negative) gradient sign, per-step size -> lr
    assert (last > prev).all()
    step_size = (last - prev)[0, 0] / 200
    assert step_size == pytest.approx(cfg.learning_rate, rel=0.05)


def test_adam_rejects_nonfinite_gradient():
    net = tiny_net()
    grads = net.__class__(
        net.layer_sizes,
        tuple(np.full_like(np.asarray(w), np.nan) for w in net.weights),
        net.biases,
        "tanh",
    )
    with pytest.raises(NonFiniteLossError, match="rejected"):
        adam_step(net, grads, init_adam_state(net), TrainConfig())


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(adam_beta1=1.0)
    with pytest.raises(ValueError):
        TrainConfig(target_loss=-1.0)


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def small_two_pixel_batch():
    return gen_two_pixel_dataset(TABLE1_K, t_end=3.0, n_samples_per_traj=20)


def test_train_dlnn_two_pixel_reaches_loss():
    batch = small_two_pixel_batch()
    cfg = TrainConfig(max_epochs=5000, target_loss=1e-4, seed=0)
    params, report = train_dlnn(batch, (64, 64), cfg)
    assert report.final_loss <= 1e-4
    assert report.epochs_run <= 5000
    assert len(report.loss_history) == report.epochs_run


def test_train_dlnn_degenerate_zero_data():
    batch = SampleBatch("diffusion", np.zeros((10, 2)), np.zeros((10, 2)),
                        np.zeros(10))
    cfg = TrainConfig(max_epochs=50, target_loss=1e-10, seed=1)
    _, report = train_dlnn(batch, (8,), cfg)
    assert report.final_loss <= 1e-10


def test_train_dlnn_deterministic():
    batch = gen_two_pixel_dataset(TABLE1_K, t_end=1.0, n_samples_per_traj=5)
    cfg = TrainConfig(max_epochs=30, seed=7, batch_size=16)
    p1, r1 = train_dlnn(batch, (8,), cfg)
    p2, r2 = train_dlnn(batch, (8,), cfg)
    np.testing.assert_array_equal(r1.loss_history, r2.loss_history)
    for a, b in zip(tree_arrays(p1), tree_arrays(p2)):
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))


def test_train_dlnn_smoothed_loss_trend_nonincreasing():
    batch = small_two_pixel_batch()
    cfg = TrainConfig(max_epochs=400, seed=0)
    _, report = train_dlnn(batch, (32,), cfg)
    h = report.loss_history
    smooth = np.convolve(h, np.ones(10) / 10, mode="valid")
    tail = smooth[len(smooth) // 2:]
    assert (np.diff(tail) <= 1e-12 + 1e-3 * tail[:-1]).all()


def test_train_dlnn_kind_mismatch_rejected():
    batch = small_two_pixel_batch()
    with pytest.raises(ValueError, match="kind"):
        train_dlnn(batch, (8,), TrainConfig(max_epochs=1), loss_kind="mechanics")


def test_train_baseline_constant_rate_fits():
    from dlnn.network import network_output

    rng = np.random.default_rng(0)
    states = rng.uniform(0.1, 1.0, size=(40, 2))
    rates = np.tile([0.3, -0.7], (40, 1))
    batch = SampleBatch("diffusion", states, rates, np.zeros(40))
    cfg = TrainConfig(learning_rate=3e-3, max_epochs=12000, target_loss=1e-6,
                      seed=0, lr_decay_every=1500, lr_decay_factor=0.6)
    params, report = train_baseline(batch, (16,), cfg)
    assert report.final_loss <= 1e-6
    pred = np.asarray(network_output(params, states[0]))
    np.testing.assert_allclose(pred, [0.3, -0.7], atol=5e-3)


def test_train_baseline_deterministic():
    batch = gen_two_pixel_dataset(TABLE1_K, t_end=1.0, n_samples_per_traj=5)
    cfg = TrainConfig(max_epochs=20, seed=3)
    _, r1 = train_baseline(batch, (8,), cfg)
    _, r2 = train_baseline(batch, (8,), cfg)
    np.testing.assert_array_equal(r1.loss_history, r2.loss_history)


def test_mechanics_batch_width_validation():
    batch = SampleBatch("mechanics", np.zeros((5, 3)), np.zeros((5, 2)),
                        np.zeros(5))
    with pytest.raises(ValueError, match="2N"):
        train_dlnn(batch, (8,), TrainConfig(max_epochs=1))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    net = init_network((3, 20, 20, 1), "tanh", seed=5)
    path = tmp_path / "net.npz"
    save_checkpoint(net, path, meta={"experiment": "unit"})
    loaded = load_checkpoint(path)
    assert loaded.layer_sizes == net.layer_sizes
    assert loaded.activation == net.activation
    for a, b in zip(tree_arrays(net), tree_arrays(loaded)):
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))
    u = np.array([0.1, -0.2, 0.3])
    assert float(forward(net, u)) == float(forward(loaded, u))
    meta = load_checkpoint_meta(path)
    assert meta["meta"]["experiment"] == "unit"


def test_checkpoint_truncated_file_rejected(tmp_path):
    net = tiny_net()
    path = tmp_path / "net.npz"
    save_checkpoint(net, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError, match="malformed"):
        load_checkpoint(path)


def test_checkpoint_version_mismatch_rejected(tmp_path):
    import json as _json

    net = tiny_net()
    path = tmp_path / "net.npz"
    save_checkpoint(net, path)
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files}
    manifest = _json.loads(str(arrays["manifest"]))
    manifest["format_version"] = 99
    arrays["manifest"] = np.array(_json.dumps(manifest))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)
