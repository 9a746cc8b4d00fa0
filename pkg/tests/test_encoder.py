import numpy as np

from escgcn import autodiff as ad
from escgcn.autodiff import Tape, Tensor
from escgcn.encoder import bilstm, gcn_layer, init_lstm_params, lstm_direction
from escgcn.gradcheck import check_gradients
from escgcn.graph import adjacency
from escgcn.model import uniform_init


def reference_lstm(x, W, U, b, d_h, reverse=False):
    """Plain step-by-step LSTM, gates ordered i, f, o, g."""
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))
    n = x.shape[0]
    h, c = np.zeros(d_h), np.zeros(d_h)
    out = np.zeros((n, d_h))
    for t in (range(n - 1, -1, -1) if reverse else range(n)):
        z = x[t] @ W + h @ U + b
        i, f, o = sig(z[:d_h]), sig(z[d_h:2 * d_h]), sig(z[2 * d_h:3 * d_h])
        g = np.tanh(z[3 * d_h:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return out


def test_lstm_matches_stepwise_reference():
    rng = np.random.default_rng(5)
    d_h, d_in, n = 2, 3, 3
    params = init_lstm_params(rng, d_in, d_h, uniform_init)
    for t in params.values():
        t.data = rng.uniform(-0.5, 0.5, size=t.shape)
    x = rng.normal(size=(n, d_in))
    h = bilstm(Tensor(x), params).data
    fwd = reference_lstm(x, params["lstm.fwd.W"].data, params["lstm.fwd.U"].data, params["lstm.fwd.b"].data, d_h)
    bwd = reference_lstm(x, params["lstm.bwd.W"].data, params["lstm.bwd.U"].data, params["lstm.bwd.b"].data, d_h,
                         reverse=True)
    np.testing.assert_allclose(h, np.concatenate([fwd, bwd], axis=1), atol=1e-12)


def test_lstm_zero_fixed_point():
    params = init_lstm_params(np.random.default_rng(0), 3, 2, uniform_init)
    for t in params.values():
        t.data[...] = 0.0
    h = bilstm(Tensor(np.zeros((4, 3))), params).data
    assert not h.any()


def test_padding_does_not_change_valid_states():
    rng = np.random.default_rng(2)
    params = init_lstm_params(rng, 3, 4, uniform_init)
    x = rng.normal(size=(1, 5, 3))
    short = bilstm(Tensor(x[:, :3]), params).data
    mask = np.array([[True, True, True, False, False]])
    padded = bilstm(Tensor(x), params, mask).data
    np.testing.assert_allclose(padded[:, :3], short, atol=1e-12)


def test_fused_lstm_gradient():
    rng = np.random.default_rng(9)
    d_h = 3
    xw = Tensor(rng.normal(size=(2, 4, 4 * d_h)), requires_grad=True)
    U = Tensor(rng.normal(scale=0.5, size=(d_h, 4 * d_h)), requires_grad=True)
    mask = np.array([[True] * 4, [True, True, False, False]])
    w = rng.normal(size=(2, 4, d_h))
    for reverse in (False, True):
        err = check_gradients(lambda: ad.sum_all(ad.mul_const(lstm_direction(xw, U, d_h, mask, reverse), w)), [xw, U])
        assert err < 1e-6


def test_gcn_identity_and_two_node_cases():
    I = Tensor(np.eye(2))
    zero = Tensor(np.zeros(2))
    g = Tensor(np.array([[1.0, -2.0], [-3.0, 4.0]]))
    out = gcn_layer(g, adjacency([], 2).normalized(), I, zero).data
    np.testing.assert_array_equal(out, np.maximum(g.data, 0))
    out = gcn_layer(Tensor([[2.0], [4.0]]), adjacency([(1, 2)], 2).normalized(), Tensor([[1.0]]), Tensor([0.0])).data
    np.testing.assert_array_equal(out, [[3.0], [3.0]])


def test_gcn_permutation_equivariance():
    rng = np.random.default_rng(1)
    adj = adjacency([(1, 2), (2, 3), (2, 4)], 4).normalized()
    g = rng.normal(size=(4, 3))
    W, b = Tensor(rng.normal(size=(3, 5))), Tensor(rng.normal(size=5))
    perm = np.array([2, 0, 3, 1])
    base = gcn_layer(Tensor(g), adj, W, b).data
    permuted = gcn_layer(Tensor(g[perm]), adj[perm][:, perm], W, b).data
    np.testing.assert_allclose(permuted, base[perm], atol=1e-12)


def test_gcn_gradient():
    rng = np.random.default_rng(4)
    adj = adjacency([(1, 2), (2, 3)], 3).normalized()
    g = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    W = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=2) + 0.5, requires_grad=True)
    assert check_gradients(lambda: ad.sum_all(ad.square(gcn_layer(g, adj, W, b))), [g, W, b]) < 1e-6
