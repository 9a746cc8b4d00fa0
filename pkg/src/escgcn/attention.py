"""Multi-head self-attention with learned relative-position scores.

Each head scores query i against key j as
``(q_i . k_j + r_i . m[clip(j - i)]) / sqrt(d_w)``, where ``m`` is one
relative-position table shared by all heads (heads narrower than the table
use its leading columns).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor


def relative_offsets(n: int, i: int, clip: int) -> np.ndarray:
    """Offsets 1-i .. n-i of every position relative to query ``i`` (1-based), clipped."""
    if not 1 <= i <= n:
        raise ValueError(f"query position {i} outside 1..{n}")
    return np.clip(np.arange(1, n + 1) - i, -clip, clip)


def offset_index_grid(n: int, clip: int) -> np.ndarray:
    """(n, n) rows of table indices: row i holds relative_offsets(n, i+1) + clip."""
    return np.stack([relative_offsets(n, i, clip) for i in range(1, n + 1)]) + clip


def attention_head(
    E: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wr: Tensor,
    rel_table: Tensor,
    clip: int,
    key_mask: np.ndarray | None = None,
    use_relative: bool = True,
) -> tuple[Tensor, Tensor]:
    """One head over E of shape (n, d) or (B, n, d). Returns (output, attention)."""
    n = E.shape[-2]
    d_w = wq.shape[1]
    q = ad.matmul(E, wq)
    k = ad.matmul(E, wk)
    v = ad.matmul(E, wv)
    scores = ad.matmul(q, ad.transpose(k))
    if use_relative:
        r = ad.matmul(E, wr)
        table = rel_table if rel_table.shape[1] == d_w else ad.slice_last(rel_table, 0, d_w)
        # r_i . m_o for every offset o, then gather the (i, j) entries
        per_offset = ad.matmul(r, ad.transpose(table))
        scores = ad.add(scores, ad.take_last(per_offset, offset_index_grid(n, clip)))
    scores = ad.scale(scores, 1.0 / np.sqrt(d_w))
    mask = None
    if key_mask is not None:
        mask = np.broadcast_to(np.asarray(key_mask, dtype=bool)[..., None, :], scores.shape)
    attn = ad.softmax_rows(scores, mask)
    return ad.matmul(attn, v), attn


def _normalize(z: Tensor, params: dict[str, Tensor], norms: dict[str, BatchNormState], name: str,
               layer_norm: bool, training: bool, token_mask: np.ndarray | None) -> Tensor:
    if layer_norm:
        return ad.layer_norm(z, params[f"{name}.scale"], params[f"{name}.shift"])
    shape = z.shape
    flat = ad.reshape(z, (-1, shape[-1])) if len(shape) == 3 else z
    rows = None if token_mask is None else np.asarray(token_mask, dtype=bool).reshape(-1)
    out = ad.batch_norm(flat, norms[name], training, rows)
    return ad.reshape(out, shape) if len(shape) == 3 else out


def self_attention_layer(
    E: Tensor,
    params: dict[str, Tensor],
    norms: dict[str, BatchNormState],
    head_widths: list[int],
    clip: int,
    training: bool,
    token_mask: np.ndarray | None = None,
    default_residual: bool = False,
    layer_norm: bool = False,
    residual: bool = True,
    use_relative: bool = True,
) -> tuple[Tensor, list[Tensor]]:
    """Heads -> concat -> output projection -> one skip from the layer input -> norm.

    ``default_residual`` switches to the two-sublayer transformer block
    (add & norm after attention, then a feed-forward sublayer with its own
    add & norm). ``residual=False`` drops the skip entirely.
    """
    outs, attns = [], []
    for a, _ in enumerate(head_widths):
        o, att = attention_head(
            E, params[f"attn.h{a}.Wq"], params[f"attn.h{a}.Wk"], params[f"attn.h{a}.Wv"],
            params[f"attn.h{a}.Wr"], params["emb.relpos"], clip, token_mask, use_relative,
        )
        outs.append(o)
        attns.append(att)
    heads = outs[0] if len(outs) == 1 else ad.concat(outs, axis=-1)
    z = ad.add_bias(ad.matmul(heads, params["attn.Wo"]), params["attn.bo"])
    if residual:
        skip = ad.matmul(E, params["attn.Wres"]) if "attn.Wres" in params else E
        z = ad.add(z, skip)
    y = _normalize(z, params, norms, "attn.norm1", layer_norm, training, token_mask)
    if default_residual:
        ff = ad.relu(ad.add_bias(ad.matmul(y, params["attn.ff.W1"]), params["attn.ff.b1"]))
        ff = ad.add_bias(ad.matmul(ff, params["attn.ff.W2"]), params["attn.ff.b2"])
        y = _normalize(ad.add(y, ff), params, norms, "attn.norm2", layer_norm, training, token_mask)
    return y, attns


def init_attention_params(rng: np.random.Generator, d_model: int, head_widths: list[int], clip: int,
                          default_residual: bool, layer_norm: bool, uniform_init) -> dict[str, Tensor]:
    size = sum(head_widths)
    p: dict[str, Tensor] = {}
    for a, w in enumerate(head_widths):
        for m in ("Wq", "Wk", "Wv", "Wr"):
            p[f"attn.h{a}.{m}"] = uniform_init(rng, d_model, w)
    p["emb.relpos"] = Tensor(rng.uniform(-1.0, 1.0, size=(2 * clip + 1, max(head_widths))), requires_grad=True)
    p["attn.Wo"] = uniform_init(rng, size, size)
    p["attn.bo"] = Tensor(np.zeros(size), requires_grad=True)
    if d_model != size:
        p["attn.Wres"] = uniform_init(rng, d_model, size)
    norms = ["attn.norm1"] + (["attn.norm2"] if default_residual else [])
    if default_residual:
        p["attn.ff.W1"] = uniform_init(rng, size, size)
        p["attn.ff.b1"] = Tensor(np.zeros(size), requires_grad=True)
        p["attn.ff.W2"] = uniform_init(rng, size, size)
        p["attn.ff.b2"] = Tensor(np.zeros(size), requires_grad=True)
    for name in norms:
        p[f"{name}.scale"] = Tensor(np.ones(size), requires_grad=True)
        p[f"{name}.shift"] = Tensor(np.zeros(size), requires_grad=True)
    return p


def attention_matrix_export(attns: list[Tensor], out_dir: str | Path, prefix: str, length: int | None = None) -> list[Path]:
    """Write each head's (n, n) post-softmax matrix as a whitespace grid."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for a, att in enumerate(attns):
        m = att.data
        if length is not None:
            m = m[:length, :length]
        path = out_dir / f"{prefix}.head{a}.txt"
        np.savetxt(path, m, fmt="%.17g")
        paths.append(path)
    return paths


def load_attention_matrix(path: str | Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, ndmin=2))
