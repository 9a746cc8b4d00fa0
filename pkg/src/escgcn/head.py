"""Pooling, entity-aware attention, fusion classifier and training objective.

Tensors here carry a leading batch axis: token features are (B, n, d),
pooled vectors (B, d).
"""

from __future__ import annotations

import logging

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def pool_sentence(g: Tensor, kept: np.ndarray) -> Tensor:
    """Max over token positions whose ``kept`` flag is set."""
    return ad.max_pool(g, axis=-2, mask=np.asarray(kept, dtype=bool)[..., None])


def pool_entity(g: Tensor, span_mask: np.ndarray) -> Tensor:
    """Max over the rows flagged by ``span_mask`` (one entity span per batch row)."""
    return ad.max_pool(g, axis=-2, mask=np.asarray(span_mask, dtype=bool)[..., None])


def span_mask(n: int, span: tuple[int, int]) -> np.ndarray:
    m = np.zeros(n, dtype=bool)
    m[span[0] - 1:span[1]] = True
    return m


def entity_attention(
    s: Tensor | None,
    g_sent: Tensor,
    pos: Tensor,
    params: dict[str, Tensor],
    token_mask: np.ndarray,
) -> Tensor:
    """alpha_i = softmax_i( v . tanh(W_s s_i + W_g g_sent + W_p p_i) ).

    ``s`` may be None when the self-attention branch is ablated; the W_s
    term is then dropped.
    """
    n = pos.shape[-2]
    u = ad.add(ad.expand(ad.matmul(g_sent, params["head.Wg"]), n), ad.matmul(pos, params["head.Wp"]))
    if s is not None:
        u = ad.add(u, ad.matmul(s, params["head.Ws"]))
    u = ad.tanh(u)
    scores = ad.reshape(ad.matmul(u, params["head.v"]), u.shape[:-1])
    return ad.softmax_rows(scores, np.asarray(token_mask, dtype=bool))


def attend(alpha: Tensor, g: Tensor) -> Tensor:
    """sum_i alpha_i g_i for alpha (B, n), g (B, n, d) -> (B, d)."""
    B, n = alpha.shape
    pooled = ad.matmul(ad.reshape(alpha, (B, 1, n)), g)
    return ad.reshape(pooled, (B, g.shape[-1]))


def fuse_and_classify(
    g_hat: Tensor,
    g_s: Tensor | None,
    g_o: Tensor | None,
    params: dict[str, Tensor],
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> tuple[Tensor, Tensor]:
    """FFNN over [g_hat; g_s; g_o] (or g_hat alone when the entity pools are
    ablated), dropout, then a softmax classifier. Returns (logits, probs)."""
    if g_s is not None:
        z = ad.concat([g_hat, g_s, g_o], axis=-1)
        z = ad.relu(ad.add_bias(ad.matmul(z, params["head.ff.W"]), params["head.ff.b"]))
    else:
        z = g_hat
    z = ad.dropout(z, dropout, rng, training)
    logits = ad.add_bias(ad.matmul(z, params["cls.W"]), params["cls.b"])
    return logits, ad.softmax_rows(logits)


class ClampCounter:
    """Counts gold probabilities that hit the log floor."""

    def __init__(self):
        self.count = 0


def l2_penalty(params: dict[str, Tensor]) -> Tensor | None:
    """Sum of squares over weight matrices (embedding tables and vectors excluded)."""
    terms = [ad.sum_all(ad.square(t)) for name, t in params.items() if is_regularized(name, t)]
    if not terms:
        return None
    return terms[0] if len(terms) == 1 else ad.add_scalars(terms)


def is_regularized(name: str, t: Tensor) -> bool:
    return len(t.shape) == 2 and not name.startswith("emb.")


def loss(
    probs: Tensor,
    gold: np.ndarray,
    params: dict[str, Tensor] | None = None,
    beta: float = 0.0,
    counter: ClampCounter | None = None,
) -> Tensor:
    """Mean negative log-likelihood of ``gold`` plus beta * ||W||^2."""
    gold = np.asarray(gold, dtype=np.int64)
    B, L = probs.shape
    onehot = np.zeros((B, L))
    onehot[np.arange(B), gold] = 1.0
    p_gold = ad.sum_last(ad.mul_const(probs, onehot))
    clamped = int((p_gold.data < PROB_FLOOR).sum())
    if clamped:
        log.warning("%d gold probabilities clamped at %g", clamped, PROB_FLOOR)
        if counter is not None:
            counter.count += clamped
    nll = ad.scale(ad.sum_all(ad.log(p_gold, floor=PROB_FLOOR)), -1.0 / B)
    if beta > 0 and params:
        penalty = l2_penalty(params)
        if penalty is not None:
            return ad.add_scalars([nll, ad.scale(penalty, beta)])
    return nll


def init_head_params(rng, d_attn: int | None, d_g: int, d_pos2: int, d_u: int, ffnn: int | None,
                     n_labels: int, uniform_init) -> dict[str, Tensor]:
    p = {
        "head.Wg": uniform_init(rng, d_g, d_u),
        "head.Wp": uniform_init(rng, d_pos2, d_u),
        "head.v": uniform_init(rng, d_u, 1),
    }
    if d_attn is not None:
        p["head.Ws"] = uniform_init(rng, d_attn, d_u)
    if ffnn is not None:
        p["head.ff.W"] = uniform_init(rng, 3 * d_g, ffnn)
        p["head.ff.b"] = Tensor(np.zeros(ffnn), requires_grad=True)
        cls_in = ffnn
    else:
        cls_in = d_g
    p["cls.W"] = uniform_init(rng, cls_in, n_labels)
    p["cls.b"] = Tensor(np.zeros(n_labels), requires_grad=True)
    return p
