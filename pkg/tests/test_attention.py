import numpy as np
import pytest

from escgcn import autodiff as ad
from escgcn.attention import (
    attention_head, attention_matrix_export, init_attention_params, load_attention_matrix, offset_index_grid,
    relative_offsets, self_attention_layer,
)
from escgcn.autodiff import BatchNormState, Tensor
from escgcn.gradcheck import check_gradients
from escgcn.model import uniform_init


def head_params(rng, d, w, clip):
    mk = lambda *s: Tensor(rng.normal(scale=0.5, size=s), requires_grad=True)
    return mk(d, w), mk(d, w), mk(d, w), mk(d, w), mk(2 * clip + 1, w)


def test_relative_offsets():
    np.testing.assert_array_equal(relative_offsets(5, 2, 2), [-1, 0, 1, 2, 2])
    grid = offset_index_grid(3, 1)
    np.testing.assert_array_equal(grid, [[1, 2, 2], [0, 1, 2], [0, 0, 1]])
    with pytest.raises(ValueError):
        relative_offsets(3, 4, 2)


def test_head_matches_explicit_formula():
    rng = np.random.default_rng(0)
    n, d, w, clip = 4, 5, 3, 2
    E = Tensor(rng.normal(size=(n, d)))
    wq, wk, wv, wr, m = head_params(rng, d, w, clip)
    out, attn = attention_head(E, wq, wk, wv, wr, m, clip)
    q, k, v, r = (E.data @ p.data for p in (wq, wk, wv, wr))
    S = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            off = int(np.clip(j - i, -clip, clip))
            S[i, j] = (q[i] @ k[j] + r[i] @ m.data[off + clip]) / np.sqrt(w)
    A = np.exp(S - S.max(axis=1, keepdims=True))
    A /= A.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(attn.data, A, atol=1e-12)
    np.testing.assert_allclose(out.data, A @ v, atol=1e-12)


def test_padded_keys_get_zero_weight():
    rng = np.random.default_rng(1)
    E = Tensor(rng.normal(size=(2, 4, 3)))
    params = head_params(rng, 3, 2, 2)
    mask = np.array([[True] * 4, [True, True, False, False]])
    _, attn = attention_head(E, *params, 2, key_mask=mask)
    assert np.all(attn.data[1, :, 2:] == 0)
    np.testing.assert_allclose(attn.data.sum(axis=-1), 1.0, atol=1e-12)


@pytest.mark.parametrize("use_relative", [True, False])
def test_head_gradient(use_relative):
    rng = np.random.default_rng(2)
    E = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    params = head_params(rng, 4, 2, 1)
    w = rng.normal(size=(3, 2))
    f = lambda: ad.sum_all(ad.mul_const(attention_head(E, *params, 1, use_relative=use_relative)[0], w))
    assert check_gradients(f, [E, *params]) < 1e-6


@pytest.mark.parametrize("default_residual,layer_norm", [(False, False), (True, False), (False, True)])
def test_layer_shapes_and_norm_stats(default_residual, layer_norm):
    rng = np.random.default_rng(3)
    widths = [3, 2]
    p = init_attention_params(rng, 6, widths, 2, default_residual, layer_norm, uniform_init)
    norms = {k: BatchNormState(5) for k in ("attn.norm1", "attn.norm2")}
    E = Tensor(rng.normal(size=(2, 4, 6)))
    y, attns = self_attention_layer(E, p, norms, widths, 2, training=True,
                                    default_residual=default_residual, layer_norm=layer_norm)
    assert y.shape == (2, 4, 5) and len(attns) == 2
    if not layer_norm:
        flat = y.data.reshape(-1, 5)
        np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-10)


def test_export_round_trip(tmp_path):
    A = np.random.default_rng(4).dirichlet(np.ones(5), size=5)
    paths = attention_matrix_export([Tensor(A)], tmp_path, "x", length=3)
    back = load_attention_matrix(paths[0])
    np.testing.assert_array_equal(back, A[:3, :3])
