"""BiLSTM over input embeddings followed by stacked graph convolution."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def lstm_direction(xw: Tensor, U: Tensor, d_h: int, mask: np.ndarray, reverse: bool) -> Tensor:
    """Run one direction given precomputed input projections ``xw`` (B, n, 4*d_h).

    Gate layout along the last axis: input, forget, output, candidate.
    Padded steps (mask False) carry the previous state through unchanged.
    The recurrence is a single tape op with a hand-written backward pass.
    """
    B, n, _ = xw.shape
    X, Uw = xw.data, U.data
    steps = list(range(n - 1, -1, -1)) if reverse else list(range(n))
    H = np.zeros((B, n, d_h))
    # per step: gate activations, previous h/c, new c
    cache = []
    h = np.zeros((B, d_h))
    c = np.zeros((B, d_h))
    for t in steps:
        z = X[:, t] + h @ Uw
        sig = ad._stable_sigmoid(z[:, :3 * d_h])
        i, f, o = sig[:, :d_h], sig[:, d_h:2 * d_h], sig[:, 2 * d_h:]
        g = np.tanh(z[:, 3 * d_h:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        valid = mask[:, t][:, None]
        cache.append((h, c, i, f, o, g, tc))
        h = np.where(valid, h_new, h)
        c = np.where(valid, c_new, c)
        H[:, t] = h

    def backward(G):
        dX = np.zeros_like(X) if xw.requires_grad else None
        dU = np.zeros_like(Uw)
        dh = np.zeros((B, d_h))
        dc = np.zeros((B, d_h))
        for t, (h_prev, c_prev, i, f, o, g, tc) in zip(reversed(steps), reversed(cache)):
            dh = dh + G[:, t]
            valid = mask[:, t][:, None]
            dh_new = np.where(valid, dh, 0.0)
            dc_new = np.where(valid, dc, 0.0)
            dc_tot = dc_new + dh_new * o * (1.0 - tc * tc)
            dz = np.concatenate([
                dc_tot * g * i * (1.0 - i),
                dc_tot * c_prev * f * (1.0 - f),
                dh_new * tc * o * (1.0 - o),
                dc_tot * i * (1.0 - g * g),
            ], axis=1)
            if dX is not None:
                dX[:, t] = dz
            dU += h_prev.T @ dz
            dh = np.where(valid, dz @ Uw.T, dh)
            dc = np.where(valid, dc_tot * f, dc)
        if dX is not None:
            ad._accum(xw, dX)
        ad._accum(U, dU)

    return ad._result(H, (xw, U), backward)


def bilstm(x: Tensor, params: dict[str, Tensor], mask: np.ndarray | None = None) -> Tensor:
    """x: (n, d_in) or (B, n, d_in) -> (.., n, 2*d_h), forward states then backward states."""
    squeeze = len(x.shape) == 2
    if squeeze:
        x = ad.reshape(x, (1,) + x.shape)
    B, n, _ = x.shape
    mask = np.ones((B, n), dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(B, n)
    d_h = params["lstm.fwd.U"].shape[0]
    halves = []
    for direction, reverse in (("fwd", False), ("bwd", True)):
        xw = ad.add_bias(ad.matmul(x, params[f"lstm.{direction}.W"]), params[f"lstm.{direction}.b"])
        halves.append(lstm_direction(xw, params[f"lstm.{direction}.U"], d_h, mask, reverse))
    h = ad.concat(halves, axis=-1)
    return ad.reshape(h, h.shape[1:]) if squeeze else h


def gcn_layer(g: Tensor, norm_adj: np.ndarray, W: Tensor, b: Tensor) -> Tensor:
    """relu( (A_tilde / d) @ (g W) + b ) for g of shape (n, d) or (B, n, d)."""
    return ad.relu(ad.add_bias(ad.matmul(Tensor(norm_adj), ad.matmul(g, W)), b))


def init_lstm_params(rng: np.random.Generator, d_in: int, d_h: int, uniform_init) -> dict[str, Tensor]:
    p = {}
    for direction in ("fwd", "bwd"):
        p[f"lstm.{direction}.W"] = uniform_init(rng, d_in, 4 * d_h)
        p[f"lstm.{direction}.U"] = uniform_init(rng, d_h, 4 * d_h)
        b = np.zeros(4 * d_h)
        b[d_h:2 * d_h] = 1.0  # forget gate
        p[f"lstm.{direction}.b"] = Tensor(b, requires_grad=True)
    return p


def init_gcn_params(rng: np.random.Generator, d_in: int, size: int, layers: int, uniform_init) -> dict[str, Tensor]:
    p = {}
    width = d_in
    for layer in range(layers):
        p[f"gcn.{layer}.W"] = uniform_init(rng, width, size)
        p[f"gcn.{layer}.b"] = Tensor(np.zeros(size), requires_grad=True)
        width = size
    return p
