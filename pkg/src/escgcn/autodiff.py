"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable op records a closure on the active :class:`Tape`.
Ops executed with no active tape (or on inputs that do not require grad)
are plain numpy computations, which is how inference runs.

Tensors are rank 0-3. There is no implicit broadcasting: a bias add or a
row expansion is its own op with its own backward rule.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, PoolingDomainError

BN_EPS = 1e-5
LN_EPS = 1e-5

_local = threading.local()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise DimensionError(f"tensor rank {arr.ndim} exceeds 3 (shape {arr.shape})")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed ops; backward replays it in reverse."""

    def __init__(self):
        self.records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        # intermediate grads are rebuilt on every pass; leaves accumulate
        for out, _ in self.records:
            out.grad = None
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self.records):
            if out.grad is not None:
                fn(out.grad)


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        tape.records.append((out, backward))
    return out


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; a may be batched (B, m, k), b either (k, n) or (B, k, n)."""
    if a.data.ndim not in (2, 3) or b.data.ndim not in (2, 3) or (a.data.ndim == 2 and b.data.ndim == 3):
        raise DimensionError(f"matmul: unsupported ranks {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2] or (b.data.ndim == 3 and a.shape[0] != b.shape[0]):
        raise DimensionError(f"matmul: inner dimensions disagree {a.shape} x {b.shape}")
    A, B = a.data, b.data
    if A.ndim == 3 and B.ndim == 2:
        # one flat GEMM is far faster than numpy's broadcast batching
        A2 = A.reshape(-1, A.shape[-1])

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                _accum(a, (g2 @ B.T).reshape(A.shape))
            if b.requires_grad:
                _accum(b, A2.T @ g2)

        return _result((A2 @ B).reshape(A.shape[:-1] + (B.shape[-1],)), (a, b), backward)

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ np.swapaxes(B, -1, -2))
        if b.requires_grad:
            _accum(b, np.swapaxes(A, -1, -2) @ g)

    return _result(A @ B, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return _result(np.swapaxes(x.data, -1, -2), (x,), lambda g: _accum(x, np.swapaxes(g, -1, -2)))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: _accum(x, g.reshape(old)))


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (_accum(a, g), _accum(b, g)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (_accum(a, g), _accum(b, -g)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    A, B = a.data, b.data
    return _result(A * B, (a, b), lambda g: (_accum(a, g * B), _accum(b, g * A)))


def scale(x: Tensor, c: float) -> Tensor:
    return _result(x.data * c, (x,), lambda g: _accum(x, g * c))


def mul_const(x: Tensor, c: np.ndarray) -> Tensor:
    """Elementwise product with a constant (non-differentiable) array of the same shape."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != x.shape:
        raise DimensionError(f"mul_const: shape mismatch {x.shape} vs {c.shape}")
    return _result(x.data * c, (x,), lambda g: _accum(x, g * c))


def add_const(x: Tensor, c: np.ndarray) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    if c.shape != x.shape:
        raise DimensionError(f"add_const: shape mismatch {x.shape} vs {c.shape}")
    return _result(x.data + c, (x,), lambda g: _accum(x, g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a rank-1 ``b`` along the last axis of ``x``."""
    if b.data.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise DimensionError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")
    axes = tuple(range(x.data.ndim - 1))
    return _result(x.data + b.data, (x, b), lambda g: (_accum(x, g), _accum(b, g.sum(axis=axes))))


def expand(x: Tensor, n: int) -> Tensor:
    """Repeat ``x`` of shape (..., d) along a new second-to-last axis: (..., n, d)."""
    data = np.repeat(np.expand_dims(x.data, -2), n, axis=-2)
    return _result(data, (x,), lambda g: _accum(x, g.sum(axis=-2)))


class KinkMonitor:
    """Records how close ReLU inputs and max-pool runner-ups come to a kink.

    Used by gradient checking to reject evaluation points where a central
    difference would straddle a non-differentiable boundary.
    """

    def __init__(self):
        self.margin = np.inf

    def note(self, m: float) -> None:
        self.margin = min(self.margin, float(m))

    def __enter__(self) -> "KinkMonitor":
        _local.kinks = self
        return self

    def __exit__(self, *exc) -> None:
        _local.kinks = None


def _kinks() -> KinkMonitor | None:
    return getattr(_local, "kinks", None)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if (km := _kinks()) is not None and x.data.size:
        km.note(np.abs(x.data).min())
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: _accum(x, g * mask))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: _accum(x, g * (1.0 - y * y)))


def sigmoid(x: Tensor) -> Tensor:
    y = _stable_sigmoid(x.data)
    return _result(y, (x,), lambda g: _accum(x, g * y * (1.0 - y)))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log(x: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log; values below ``floor`` are clamped (gradient zero there)."""
    clamped = x.data < floor
    safe = np.where(clamped, floor, x.data)
    return _result(np.log(safe), (x,), lambda g: _accum(x, np.where(clamped, 0.0, g / safe)))


def square(x: Tensor) -> Tensor:
    X = x.data
    return _result(X * X, (x,), lambda g: _accum(x, 2.0 * g * X))


# ---------------------------------------------------------------- reductions


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.array(x.data.sum()), (x,), lambda g: _accum(x, np.full(shape, float(g))))


def sum_last(x: Tensor) -> Tensor:
    """Sum over the last axis."""
    shape = x.shape
    return _result(x.data.sum(axis=-1), (x,), lambda g: _accum(x, np.broadcast_to(g[..., None], shape)))


def add_scalars(terms: Sequence[Tensor]) -> Tensor:
    for t in terms:
        if t.data.size != 1:
            raise DimensionError(f"add_scalars: expected scalars, got {t.shape}")
    total = np.array(sum(float(t.data) for t in terms))

    def backward(g):
        for t in terms:
            _accum(t, np.full(t.shape, float(g)))

    return _result(total, tuple(terms), backward)


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, max-shifted. ``mask`` False entries get zero mass."""
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != z.shape:
            raise DimensionError(f"softmax_rows: mask {mask.shape} vs input {z.shape}")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        _accum(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _result(y, (x,), backward)


def max_pool(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Maximum over ``axis``; ``mask`` (same shape as x minus nothing, broadcast along
    the reduced axis) selects which positions take part. Ties route to the first index."""
    X = x.data
    ax = axis % X.ndim
    if X.shape[ax] == 0:
        raise PoolingDomainError("max pooling over an empty axis")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), X.shape)
        if not mask.any(axis=ax).all():
            raise PoolingDomainError("max pooling selection is empty for at least one row")
        X = np.where(mask, X, -np.inf)
    idx = np.argmax(X, axis=ax)
    out = np.take_along_axis(X, np.expand_dims(idx, ax), axis=ax).squeeze(ax)
    shape = x.shape
    if (km := _kinks()) is not None and X.shape[ax] > 1:
        # gap to the runner-up; exact ties are left alone (usually identical branches)
        gap = np.expand_dims(out, ax) - X
        gap = gap[np.isfinite(gap) & (gap > 0)]
        if gap.size:
            km.note(gap.min())

    def backward(g):
        full = np.zeros(shape)
        np.put_along_axis(full, np.expand_dims(idx, ax), np.expand_dims(g, ax), axis=ax)
        _accum(x, full)

    return _result(out, (x,), backward)


def max_pool_cols(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Pool a (d, n) matrix over its n columns into a length-d vector."""
    if x.data.ndim != 2:
        raise DimensionError(f"max_pool_cols expects a (d, n) matrix, got {x.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim == 1:
            mask = mask[None, :]
    return max_pool(x, axis=-1, mask=mask)


# ---------------------------------------------------------------- indexing / layout


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in xs]
    out = np.concatenate(datas, axis=axis)
    splits = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def backward(g):
        for t, gi in zip(xs, np.split(g, splits, axis=axis)):
            _accum(t, gi)

    return _result(out, tuple(xs), backward)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        _accum(x, full)

    return _result(x.data[..., start:stop], (x,), backward)


def select(x: Tensor, axis: int, index: int) -> Tensor:
    """Drop ``axis`` by taking one position along it."""
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        full[tuple(sl)] = g
        _accum(x, full)

    return _result(np.take(x.data, index, axis=axis), (x,), backward)


def stack(xs: Sequence[Tensor], axis: int) -> Tensor:
    out = np.stack([t.data for t in xs], axis=axis)

    def backward(g):
        for i, t in enumerate(xs):
            _accum(t, np.take(g, i, axis=axis))

    return _result(out, tuple(xs), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: ids of any shape (rank <= 2) -> ids.shape + (d,)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]}): {ids.min()}..{ids.max()}")
    shape = table.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        _accum(table, full)

    return _result(table.data[ids], (table,), backward)


def take_last(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather along the last axis with an (n, n) index grid shared over the batch:
    out[..., i, j] = x[..., i, index[i, j]]."""
    index = np.asarray(index, dtype=np.int64)
    n = index.shape[0]
    if x.shape[-2] != n:
        raise DimensionError(f"take_last: index rows {n} vs input {x.shape}")
    rows = np.arange(n)[:, None]
    out = x.data[..., rows, index]
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        if len(shape) == 2:
            np.add.at(full, (rows, index), g)
        else:
            for b in range(shape[0]):
                np.add.at(full[b], (rows, index), g[b])
        _accum(x, full)

    return _result(out, (x,), backward)


def masked_blend(new: Tensor, old: Tensor, keep_new: np.ndarray) -> Tensor:
    """Rowwise choice: rows where ``keep_new`` is True take ``new``, others ``old``."""
    _check_same(new, old, "masked_blend")
    m = np.asarray(keep_new, dtype=bool).reshape(new.shape[:-1] + (1,))
    out = np.where(m, new.data, old.data)
    return _result(out, (new, old), lambda g: (_accum(new, g * m), _accum(old, g * ~m)))


# ---------------------------------------------------------------- normalization / noise


class BatchNormState:
    """Learned scale/shift plus running statistics for one normalized feature block."""

    def __init__(self, d: int, momentum: float = 0.1, scale: Tensor | None = None, shift: Tensor | None = None):
        self.scale = scale if scale is not None else Tensor(np.ones(d), requires_grad=True)
        self.shift = shift if shift is not None else Tensor(np.zeros(d), requires_grad=True)
        self.running_mean = np.zeros(d)
        self.running_var = np.ones(d)
        self.momentum = momentum


def batch_norm(x: Tensor, state: BatchNormState, training: bool, row_mask: np.ndarray | None = None) -> Tensor:
    """Per-feature standardization of an (N, d) block.

    In training mode statistics come from the rows selected by ``row_mask``
    (all rows by default) and the running estimates are updated; inference
    uses the running estimates only.
    """
    X = x.data
    if X.ndim != 2:
        raise DimensionError(f"batch_norm expects (N, d), got {x.shape}")
    sel = np.ones(X.shape[0], dtype=bool) if row_mask is None else np.asarray(row_mask, dtype=bool)
    gamma, beta = state.scale, state.shift
    if training:
        count = int(sel.sum())
        if count < 2:
            raise ConfigError(f"batch_norm in training mode needs at least 2 rows, got {count}")
        rows = X[sel]
        mean = rows.mean(axis=0)
        var = rows.var(axis=0)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mean
        state.running_var = (1 - m) * state.running_var + m * var
    else:
        count = None
        mean, var = state.running_mean, state.running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (X - mean) * inv
    out = np.where(sel[:, None], xhat * gamma.data + beta.data, 0.0)

    def backward(g):
        g = np.where(sel[:, None], g, 0.0)
        _accum(beta, g.sum(axis=0))
        _accum(gamma, (g * xhat).sum(axis=0))
        gx = g * gamma.data
        if training:
            gs = gx[sel]
            xs = xhat[sel]
            dx = np.zeros_like(X)
            dx[sel] = inv * (gs - gs.mean(axis=0) - xs * (gs * xs).mean(axis=0))
        else:
            dx = gx * inv
        _accum(x, dx)

    return _result(out, (x, gamma, beta), backward)


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """Standardize each row over its last axis."""
    X = x.data
    mean = X.mean(axis=-1, keepdims=True)
    var = X.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (X - mean) * inv
    out = xhat * scale.data + shift.data
    axes = tuple(range(X.ndim - 1))

    def backward(g):
        _accum(shift, g.sum(axis=axes))
        _accum(scale, (g * xhat).sum(axis=axes))
        gx = g * scale.data
        _accum(x, inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return _result(out, (x, scale, shift), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training or when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs an RNG")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul_const(x, keep)
