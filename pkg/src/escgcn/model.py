"""Parameter container, batch assembly and the end-to-end forward pass."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .attention import init_attention_params, self_attention_layer
from .autodiff import BatchNormState, Tensor
from .config import ModelConfig
from .data import Instance, Vocabs, mask_entities, position_buckets
from .encoder import bilstm, gcn_layer, init_gcn_params, init_lstm_params
from .graph import DepTree, adjacency, prune
from .head import (
    attend,
    entity_attention,
    fuse_and_classify,
    init_head_params,
    pool_entity,
    pool_sentence,
    span_mask,
)


def uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int, scheme: str = "he") -> Tensor:
    """``he``: U(+-sqrt(6/fan_in)); ``fan_in``: U(+-1/sqrt(fan_in))."""
    bound = np.sqrt(6.0 / fan_in) if scheme == "he" else 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


class ModelParams:
    """Named learnable tensors plus batch-norm running statistics."""

    def __init__(self, tensors: dict[str, Tensor], norms: dict[str, BatchNormState]):
        self.tensors = tensors
        self.norms = norms

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def items(self):
        return self.tensors.items()

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    @classmethod
    def init(cls, config: ModelConfig, vocabs: Vocabs, rng: np.random.Generator,
             word_table: Tensor | None = None) -> "ModelParams":
        c = config
        p: dict[str, Tensor] = {}
        if word_table is None:
            word_table = random_word_table(len(vocabs.word), c.d_word, c.word_init_scale, rng)
        winit = functools.partial(uniform_init, scheme=c.weight_init)
        if word_table.shape != (len(vocabs.word), c.d_word):
            raise ValueError(f"word table shape {word_table.shape} != ({len(vocabs.word)}, {c.d_word})")
        p["emb.word"] = word_table
        for name, vocab, d in (("ner", vocabs.ner, c.d_ner), ("pos", vocabs.pos, c.d_pos)):
            table = rng.uniform(-1.0, 1.0, size=(len(vocab), d))
            table[0] = 0.0
            p[f"emb.{name}"] = Tensor(table, requires_grad=True)
        p["emb.position"] = Tensor(rng.uniform(-1.0, 1.0, size=(2 * c.position_clip + 1, c.d_position)),
                                   requires_grad=True)
        d_x = input_width(c)
        if not c.no_self_attention:
            d_model = d_x if c.attention_input == "x" else 2 * c.d_h
            p.update(init_attention_params(rng, d_model, c.head_widths, c.rel_clip,
                                           c.no_residual_simplify, c.layer_norm_instead, winit))
            if c.no_residual:
                p.pop("attn.Wres", None)
        if c.no_bilstm:
            p["gcn.in.W"] = winit(rng, d_x, 2 * c.d_h)
            p["gcn.in.b"] = Tensor(np.zeros(2 * c.d_h), requires_grad=True)
        else:
            p.update(init_lstm_params(rng, d_x, c.d_h, winit))
        p.update(init_gcn_params(rng, 2 * c.d_h, c.gcn_size, c.gcn_layers, winit))
        d_g = graph_width(c)
        p.update(init_head_params(
            rng,
            None if c.no_self_attention else c.attn_size,
            d_g,
            2 * c.d_position,
            c.entity_attn_size,
            None if c.no_entity_pools_ffnn else c.ffnn_size,
            len(vocabs.relations),
            winit,
        ))
        norms = {}
        if not c.no_self_attention and not c.layer_norm_instead:
            for name in ("attn.norm1", "attn.norm2"):
                if f"{name}.scale" in p:
                    norms[name] = BatchNormState(c.attn_size, c.bn_momentum, p[f"{name}.scale"], p[f"{name}.shift"])
        return cls(p, norms)


def random_word_table(rows: int, dim: int, scale: float, rng: np.random.Generator) -> Tensor:
    """Word table used when no pretrained vectors are given: U(-scale, scale), padding row zero."""
    table = rng.uniform(-scale, scale, size=(rows, dim))
    table[0] = 0.0
    return Tensor(table, requires_grad=True)


def input_width(c: ModelConfig) -> int:
    return c.d_word + c.d_ner + c.d_pos + (2 * c.d_position if c.position_in_input else 0)


def graph_width(c: ModelConfig) -> int:
    return c.gcn_size if c.gcn_layers > 0 else 2 * c.d_h


# ---------------------------------------------------------------- batching


@dataclass
class EncodedInstance:
    inst: Instance
    words: np.ndarray
    ner: np.ndarray
    pos: np.ndarray
    subj_bucket: np.ndarray
    obj_bucket: np.ndarray
    norm_adj: np.ndarray
    kept: np.ndarray
    label: int


def encode_instance(inst: Instance, vocabs: Vocabs, config: ModelConfig, tree: DepTree | None = None) -> EncodedInstance:
    tree = tree or DepTree(inst.head, validate=False)
    pg = prune(tree, inst.spans(), config.prune_k)
    adj = adjacency(pg, inst.n)
    kept = np.zeros(inst.n, dtype=bool)
    kept[[v - 1 for v in pg.kept_nodes]] = True
    sb, ob = position_buckets(inst, config.position_clip)
    label = vocabs.relation_id(inst.relation) if inst.relation in vocabs.relations else -1
    return EncodedInstance(
        inst=inst,
        words=np.array(mask_entities(inst, vocabs.word), dtype=np.int64),
        ner=np.array(vocabs.ner.lookup(inst.ner), dtype=np.int64),
        pos=np.array(vocabs.pos.lookup(inst.pos), dtype=np.int64),
        subj_bucket=sb + config.position_clip,
        obj_bucket=ob + config.position_clip,
        norm_adj=adj.normalized(),
        kept=kept,
        label=label,
    )


@dataclass
class Batch:
    words: np.ndarray
    ner: np.ndarray
    pos: np.ndarray
    subj_bucket: np.ndarray
    obj_bucket: np.ndarray
    mask: np.ndarray
    kept: np.ndarray
    subj_mask: np.ndarray
    obj_mask: np.ndarray
    norm_adj: np.ndarray
    labels: np.ndarray
    lengths: np.ndarray
    items: list[EncodedInstance] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.words.shape[0]


def collate(items: Sequence[EncodedInstance], position_clip: int = 9) -> Batch:
    B = len(items)
    n = max(e.inst.n for e in items)
    ints = lambda fill=0: np.full((B, n), fill, dtype=np.int64)  # noqa: E731
    words, ner, pos = ints(), ints(), ints()
    sb, ob = ints(position_clip), ints(position_clip)
    mask = np.zeros((B, n), dtype=bool)
    kept = np.zeros((B, n), dtype=bool)
    smask = np.zeros((B, n), dtype=bool)
    omask = np.zeros((B, n), dtype=bool)
    adj = np.zeros((B, n, n))
    for b, e in enumerate(items):
        m = e.inst.n
        words[b, :m], ner[b, :m], pos[b, :m] = e.words, e.ner, e.pos
        sb[b, :m], ob[b, :m] = e.subj_bucket, e.obj_bucket
        mask[b, :m] = True
        kept[b, :m] = e.kept
        smask[b, :m] = span_mask(m, e.inst.subj_span)
        omask[b, :m] = span_mask(m, e.inst.obj_span)
        adj[b, :m, :m] = e.norm_adj
        adj[b, m:, m:] = np.eye(n - m)
    return Batch(words, ner, pos, sb, ob, mask, kept, smask, omask, adj,
                 np.array([e.label for e in items], dtype=np.int64),
                 np.array([e.inst.n for e in items], dtype=np.int64), list(items))


# ---------------------------------------------------------------- forward


@dataclass
class ForwardOutput:
    logits: Tensor
    probs: Tensor
    alpha: Tensor | None
    attentions: list[Tensor]
    s: Tensor | None
    g: Tensor
    x: Tensor
    g_sent: Tensor


def embed(params: ModelParams, batch: Batch, config: ModelConfig) -> tuple[Tensor, Tensor]:
    """Input rows [word; ner; pos] (optionally with positions) and position features."""
    t = params.tensors
    x = ad.concat([ad.embedding(t["emb.word"], batch.words),
                   ad.embedding(t["emb.ner"], batch.ner),
                   ad.embedding(t["emb.pos"], batch.pos)], axis=-1)
    p = ad.concat([ad.embedding(t["emb.position"], batch.subj_bucket),
                   ad.embedding(t["emb.position"], batch.obj_bucket)], axis=-1)
    if config.position_in_input:
        x = ad.concat([x, p], axis=-1)
    return x, p


def encode(params: ModelParams, batch: Batch, config: ModelConfig, training: bool,
           rng: np.random.Generator | None = None):
    """Both encoder branches. Returns (s, attentions, g, x, position features)."""
    c = config
    t = params.tensors
    x, pfeat = embed(params, batch, c)
    x = ad.dropout(x, c.dropout, rng, training)
    if c.no_bilstm:
        h = ad.add_bias(ad.matmul(x, t["gcn.in.W"]), t["gcn.in.b"])
    else:
        h = bilstm(x, t, batch.mask)
    g = h
    for layer in range(c.gcn_layers):
        g = gcn_layer(g, batch.norm_adj, t[f"gcn.{layer}.W"], t[f"gcn.{layer}.b"])
    s, attns = None, []
    if not c.no_self_attention:
        source = x if c.attention_input == "x" else h
        s, attns = self_attention_layer(
            source, t, params.norms, c.head_widths, c.rel_clip, training, batch.mask,
            default_residual=c.no_residual_simplify, layer_norm=c.layer_norm_instead,
            residual=not c.no_residual,
        )
    return s, attns, g, x, pfeat


def forward(params: ModelParams, batch: Batch, config: ModelConfig, training: bool = False,
            rng: np.random.Generator | None = None) -> ForwardOutput:
    c = config
    t = params.tensors
    s, attns, g, x, pfeat = encode(params, batch, c, training, rng)
    g_sent = pool_sentence(g, batch.kept & batch.mask)
    alpha = None
    if c.no_entity_aware:
        g_hat = g_sent
    else:
        att_mask = batch.mask & batch.kept if c.mask_pruned_attention else batch.mask
        alpha = entity_attention(s, g_sent, pfeat, t, att_mask)
        g_hat = attend(alpha, g)
    if c.no_entity_pools_ffnn:
        g_s = g_o = None
    else:
        g_s = pool_entity(g, batch.subj_mask)
        g_o = pool_entity(g, batch.obj_mask)
    logits, probs = fuse_and_classify(g_hat, g_s, g_o, t, c.dropout, rng, training)
    return ForwardOutput(logits, probs, alpha, attns, s, g, x, g_sent)
