import numpy as np
import pytest

from dlnn.network import (
    NetworkParams,
    NonFiniteLossError,
    derivative_bundle,
    forward,
    init_network,
    input_gradient,
    input_hessian,
    input_hvp,
    loss_param_gradient,
    network_output,
    quadratic_net,
)

TABLE1_K = np.array([[1.0, -0.4], [-0.4, 1.0]])


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------

def straight_line_forward(params, u):
    """Re-evaluate the network with plain numpy, no shared code paths."""
    acts = {
        "tanh": np.tanh,
        "identity": lambda z: z,
        "square": lambda z: z * z,
    }
    act = acts[params.activation]
    a = np.asarray(u, dtype=float)
    n_layers = len(params.weights)
    for i in range(n_layers - 1):
        a = act(np.asarray(params.weights[i]) @ a + np.asarray(params.biases[i]))
    out = np.asarray(params.weights[-1]) @ a + np.asarray(params.biases[-1])
    return out[0]


def fd_gradient(f, u, h=1e-4):
    u = np.asarray(u, dtype=float)
    g = np.zeros_like(u)
    for i in range(u.size):
        up, um = u.copy(), u.copy()
        up[i] += h
        um[i] -= h
        g[i] = (f(up) - f(um)) / (2 * h)
    return g


def fd_hessian_of_gradient(grad_f, u, h=1e-3):
    """Central differences of an exact gradient function."""
    u = np.asarray(u, dtype=float)
    n = u.size
    hess = np.zeros((n, n))
    for j in range(n):
        up, um = u.copy(), u.copy()
        up[j] += h
        um[j] -= h
        hess[:, j] = (np.asarray(grad_f(up)) - np.asarray(grad_f(um))) / (2 * h)
    return hess


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / denom


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def test_forward_quadratic_stub():
    net = quadratic_net(np.eye(2))
    assert float(forward(net, [3.0, 4.0])) == pytest.approx(12.5, abs=1e-12)


def test_forward_zero_weight_net():
    sizes = (3, 5, 1)
    zeros_w = tuple(np.zeros((sizes[i + 1], sizes[i])) for i in range(2))
    zeros_b = tuple(np.zeros(sizes[i + 1]) for i in range(2))
    net = NetworkParams(sizes, zeros_w, zeros_b, "tanh")
    assert float(forward(net, [1.0, -2.0, 3.0])) == 0.0


def test_forward_matches_straight_line_reevaluation():
    net = init_network((2, 200, 200, 1), "tanh", seed=7)
    u = np.array([0.37, -1.2])
    assert float(forward(net, u)) == pytest.approx(
        straight_line_forward(net, u), rel=1e-14
    )


def test_forward_shape_mismatch_rejected():
    net = init_network((3, 4, 1), seed=0)
    with pytest.raises(ValueError, match="shape"):
        forward(net, np.ones(2))


def test_forward_requires_scalar_output():
    net = init_network((3, 4, 2), seed=0)
    with pytest.raises(ValueError, match="scalar"):
        forward(net, np.ones(3))
    # the vector path is still usable
    assert network_output(net, np.ones(3)).shape == (2,)


# ---------------------------------------------------------------------------
# input_gradient
# ---------------------------------------------------------------------------

def test_gradient_quadratic_stub():
    net = quadratic_net(np.eye(2))
    np.testing.assert_allclose(input_gradient(net, [3.0, 4.0]), [3.0, 4.0], atol=1e-12)


def test_gradient_constant_net_is_zero():
    sizes = (2, 3, 1)
    zeros_w = tuple(np.zeros((sizes[i + 1], sizes[i])) for i in range(2))
    biases = (np.array([0.3, -0.1, 2.0]), np.array([1.5]))
    net = NetworkParams(sizes, zeros_w, biases, "tanh")
    np.testing.assert_allclose(input_gradient(net, [5.0, -7.0]), 0.0, atol=0.0)


def test_gradient_matches_finite_differences():
    net = init_network((4, 12, 9, 1), "tanh", seed=3)
    u = np.random.default_rng(1).normal(size=4)
    fd = fd_gradient(lambda x: float(forward(net, x)), u, h=1e-4)
    assert rel_err(input_gradient(net, u), fd) < 1e-6


# ---------------------------------------------------------------------------
# input_hvp / input_hessian
# ---------------------------------------------------------------------------

def test_hvp_identity_hessian():
    net = quadratic_net(np.eye(2))
    np.testing.assert_allclose(
        input_hvp(net, [0.4, 0.9], [1.0, 2.0]), [1.0, 2.0], atol=1e-12
    )


def test_hvp_table1_stiffness():
    net = quadratic_net(TABLE1_K)
    np.testing.assert_allclose(
        input_hvp(net, [0.3, 0.3], [1.0, 0.0]), [1.0, -0.4], atol=1e-12
    )


def test_hvp_matches_dense_hessian():
    net = init_network((5, 15, 15, 1), "tanh", seed=11)
    rng = np.random.default_rng(2)
    u = rng.normal(size=5)
    hess = np.asarray(input_hessian(net, u))
    for _ in range(4):
        v = rng.normal(size=5)
        v /= np.linalg.norm(v)
        hv = np.asarray(input_hvp(net, u, v))
        assert np.linalg.norm(hv - hess @ v) <= 1e-10 * np.linalg.norm(hess)


def test_hvp_linear_in_direction():
    net = init_network((3, 10, 1), "tanh", seed=5)
    rng = np.random.default_rng(8)
    u = rng.normal(size=3)
    v, w = rng.normal(size=3), rng.normal(size=3)
    lhs = np.asarray(input_hvp(net, u, v + w))
    rhs = np.asarray(input_hvp(net, u, v)) + np.asarray(input_hvp(net, u, w))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_hvp_dimension_mismatch():
    net = init_network((3, 4, 1), seed=0)
    with pytest.raises(ValueError, match="direction"):
        input_hvp(net, np.ones(3), np.ones(4))


def test_hessian_quadratic_stub_exact():
    net = quadratic_net(TABLE1_K)
    np.testing.assert_allclose(
        input_hessian(net, [0.7, -0.2]), TABLE1_K, atol=1e-12
    )


def test_hessian_affine_net_is_zero():
    net = init_network((4, 6, 1), "identity", seed=9)
    np.testing.assert_allclose(
        input_hessian(net, np.ones(4)), np.zeros((4, 4)), atol=1e-12
    )


def test_hessian_matches_finite_differences():
    net = init_network((3, 14, 10, 1), "tanh", seed=17)
    u = np.random.default_rng(4).normal(size=3)
    fd = fd_hessian_of_gradient(lambda x: input_gradient(net, x), u, h=1e-3)
    assert rel_err(input_hessian(net, u), fd) < 1e-5


def test_hessian_symmetry_random_nets():
    for seed in range(6):
        net = init_network((6, 18, 13, 1), "tanh", seed=seed)
        u = np.random.default_rng(seed).normal(size=6)
        hess = np.asarray(input_hessian(net, u))
        scale = max(np.abs(hess).max(), 1e-12)
        assert np.abs(hess - hess.T).max() <= 1e-10 * scale


# ---------------------------------------------------------------------------
# loss_param_gradient (third-order path)
# ---------------------------------------------------------------------------

def test_param_gradient_final_bias_direct_dependence():
    net = init_network((2, 6, 1), "tanh", seed=1)
    c0 = np.array([0.2, -0.5])
    _, grads = loss_param_gradient(net, lambda p: forward(p, c0))
    np.testing.assert_allclose(np.asarray(grads.biases[-1]), [1.0], atol=1e-14)


def test_param_gradient_of_hvp_loss_matches_param_fd():
    # loss contains an input-HVP, so its parameter gradient exercises the
    # third-order differentiation path; checked against central differences
    # in parameter space.
    net = init_network((2, 5, 1), "tanh", seed=2)
    c0 = np.array([0.7, -0.3])

    def loss(p):
        hv = input_hvp(p, c0, c0)
        return (hv ** 2).sum()

    value, grads = loss_param_gradient(net, loss)
    assert np.isfinite(float(value))

    h = 1e-6
    for li in range(len(net.weights)):
        w = np.asarray(net.weights[li])
        g_exact = np.asarray(grads.weights[li])
        idxs = [(0, 0), (w.shape[0] - 1, w.shape[1] - 1)]
        for idx in idxs:
            wp, wm = w.copy(), w.copy()
            wp[idx] += h
            wm[idx] -= h

            def with_w(wmat):
                ws = list(net.weights)
                ws[li] = wmat
                return NetworkParams(
                    net.layer_sizes, tuple(ws), net.biases, net.activation
                )

            fd = (float(loss(with_w(wp))) - float(loss(with_w(wm)))) / (2 * h)
            assert abs(fd - g_exact[idx]) <= 1e-5 * max(1.0, abs(fd))


def test_param_gradient_zero_at_exact_residual():
    # quadratic stub with the true Hessian: residual c_dot + H c vanishes on
    # exact-dynamics samples, so the parameter gradient of the squared
    # residual is zero at that point.
    net = quadratic_net(TABLE1_K)
    c = np.array([0.4, 0.8])
    c_dot = -TABLE1_K @ c

    def loss(p):
        r = c_dot + input_hvp(p, c, c)
        return (r ** 2).mean()

    value, grads = loss_param_gradient(net, loss)
    assert float(value) == pytest.approx(0.0, abs=1e-28)
    for g in list(grads.weights) + list(grads.biases):
        np.testing.assert_allclose(np.asarray(g), 0.0, atol=1e-13)


def test_param_gradient_rejects_nonfinite_loss():
    net = init_network((2, 4, 1), seed=0)
    with pytest.raises(NonFiniteLossError):
        loss_param_gradient(net, lambda p: forward(p, [1.0, 1.0]) / 0.0)


# ---------------------------------------------------------------------------
# misc surface
# ---------------------------------------------------------------------------

def test_determinism_same_seed_same_outputs():
    u = np.array([0.1, 0.2, 0.3])
    a = init_network((3, 20, 1), seed=42)
    b = init_network((3, 20, 1), seed=42)
    assert float(forward(a, u)) == float(forward(b, u))
    np.testing.assert_array_equal(
        np.asarray(input_gradient(a, u)), np.asarray(input_gradient(b, u))
    )


def test_derivative_bundle_symmetry_invariant():
    net = init_network((4, 9, 1), seed=13)
    bundle = derivative_bundle(net, np.ones(4), with_hessian=True)
    assert np.isfinite(bundle.value)
    assert bundle.gradient.shape == (4,)
    scale = max(np.abs(bundle.hessian).max(), 1e-12)
    assert np.abs(bundle.hessian - bundle.hessian.T).max() <= 1e-10 * scale


def test_network_params_validation():
    with pytest.raises(ValueError, match="activation"):
        NetworkParams((2, 1), (np.zeros((1, 2)),), (np.zeros(1),), "relu")
    with pytest.raises(ValueError, match="expected"):
        NetworkParams((2, 3, 1), (np.zeros((3, 2)), np.zeros((1, 2))),
                      (np.zeros(3), np.zeros(1)), "tanh")


def test_quadratic_net_requires_symmetric():
    with pytest.raises(ValueError, match="symmetric"):
        quadratic_net(np.array([[1.0, 2.0], [0.0, 1.0]]))
