"""Central-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import KinkMonitor, Tape, Tensor
from .errors import NumericalError

# Relative error is |analytic - numeric| / max(|analytic|, |numeric|, ABS_FLOOR).
# The floor keeps coordinates whose true gradient is ~0 from dividing roundoff by ~0.
ABS_FLOOR = 1e-6
# A point is accepted for whole-model checks when no kink lies within KINK_MARGIN * h.
KINK_MARGIN = 100
KINK_REDRAWS = 20


def relative_error(analytic: float, numeric: float, floor: float = ABS_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    f: Callable[[], Tensor],
    params: Sequence[Tensor] | dict[str, Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    name: str = "f",
) -> float:
    """Compare tape gradients of scalar ``f()`` against central differences.

    ``f`` must rebuild its computation from the current parameter values on
    each call (and reseed any randomness it uses). At most ``max_coords``
    coordinates per tensor are sampled. Returns the largest relative error.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(f"param{i}", p) for i, p in enumerate(params)]
    for _, p in named:
        p.data = np.ascontiguousarray(p.data)
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    _check_finite(loss, name)
    tape.backward(loss)
    rng = rng or np.random.default_rng(0)

    worst = 0.0
    for pname, p in named:
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = _value(f, name)
            flat[c] = orig - h
            down = _value(f, name)
            flat[c] = orig
            numeric = (up - down) / (2 * h)
            worst = max(worst, relative_error(float(analytic.reshape(-1)[c]), numeric))
    return worst


def _value(f, name) -> float:
    out = f()
    _check_finite(out, name)
    return float(out.data)


def _check_finite(t: Tensor, name: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NumericalError(f"non-finite loss from {name}: {t.data}")


# ---------------------------------------------------------------- whole-model check


def random_tree_instance(rng: np.random.Generator, n: int, relations: Sequence[str], ident: str):
    """A random valid instance of ``n`` tokens with two disjoint single/double-token spans."""
    from .data import Instance

    order = rng.permutation(n) + 1
    head = [0] * n
    for k in range(1, n):
        head[order[k] - 1] = int(order[rng.integers(0, k)])
    cut = int(rng.integers(1, n))
    s_len = int(rng.integers(1, min(2, cut) + 1))
    o_len = int(rng.integers(1, min(2, n - cut) + 1))
    subj = (cut - s_len + 1, cut)
    obj = (cut + 1, cut + o_len)
    if rng.random() < 0.5:
        subj, obj = obj, subj
    words = [f"w{int(rng.integers(0, 5))}" for _ in range(n)]
    ner = ["O"] * n
    for i in range(subj[0], subj[1] + 1):
        ner[i - 1] = "PERSON"
    for i in range(obj[0], obj[1] + 1):
        ner[i - 1] = "ORG"
    return Instance(
        id=ident, tokens=words, pos=[str(rng.choice(["NN", "VB", "DT"])) for _ in range(n)], ner=ner,
        head=head, deprel=["dep"] * n, subj_span=subj, obj_span=obj,
        relation=str(rng.choice(list(relations))),
    )


def random_tiny_config(rng: np.random.Generator, flags: Sequence[str] | None = None):
    from .config import ABLATION_FLAGS, ModelConfig

    if flags is None:
        flags = [f for f in ABLATION_FLAGS if rng.random() < 0.3]
    w = lambda: int(rng.integers(2, 9))  # noqa: E731
    heads = int(rng.integers(1, 3))
    return ModelConfig(
        d_word=w(), d_ner=w(), d_pos=w(), d_position=w(), d_h=w(),
        attn_size=max(heads, w()), heads=heads, gcn_size=w(), ffnn_size=w(), entity_attn_size=w(),
        gcn_layers=int(rng.integers(1, 3)), prune_k=[0, 1, 2, None][int(rng.integers(0, 4))],
        dropout=0.3, beta=1e-2, seed=int(rng.integers(0, 2**31)),
        position_clip=3, rel_clip=2,
    ).with_ablations(flags)


def model_gradient_check(config, instances, h: float = 1e-5, seed: int = 0,
                         max_coords: int | None = None) -> float:
    """Max relative error of d(loss)/d(theta) over every parameter of a freshly initialised model.

    Zero-initialised vectors (biases, norm shifts) are redrawn at random first:
    at exactly zero a ReLU whose input column is dead sits on its kink, where
    central differences see slope 1/2.
    """
    from .data import build_vocabs
    from .head import loss
    from .model import ModelParams, collate, encode_instance, forward

    vocabs = build_vocabs(instances, config.negative_label)
    init_rng = np.random.default_rng(config.seed)
    params = ModelParams.init(config, vocabs, init_rng)
    zero_init = [t for t in params.tensors.values() if t.data.ndim == 1]
    base = [t.data.copy() for t in zero_init]
    batch = collate([encode_instance(i, vocabs, config) for i in instances], config.position_clip)

    def f():
        rng = np.random.default_rng(seed)
        out = forward(params, batch, config, training=True, rng=rng)
        return loss(out.probs, batch.labels, params.tensors, config.beta)

    # Redraw the point until every ReLU input and max-pool gap clears the
    # step by a wide margin; central differences are meaningless across a kink.
    for _ in range(KINK_REDRAWS):
        for t, b in zip(zero_init, base):
            t.data = b + init_rng.uniform(-0.5, 0.5, size=t.shape)
        with KinkMonitor() as km:
            f()
        if km.margin > KINK_MARGIN * h:
            break

    return check_gradients(f, params.tensors, h=h, max_coords=max_coords,
                           rng=np.random.default_rng(seed), name="model loss")


def random_gradient_checks(count: int = 20, seed: int = 0, max_tokens: int = 6,
                           all_flag_subsets: bool = True, max_coords: int | None = 12) -> list[tuple[dict, float]]:
    """Run ``count`` whole-model checks on random tiny configs.

    With ``all_flag_subsets`` the first 2**6 flag subsets are walked in order
    (cycling) so every combination appears once ``count`` reaches 64.
    """
    from .config import ABLATION_FLAGS

    rng = np.random.default_rng(seed)
    results = []
    for k in range(count):
        flags = None
        if all_flag_subsets:
            mask = k % (1 << len(ABLATION_FLAGS))
            flags = [f for j, f in enumerate(ABLATION_FLAGS) if mask >> j & 1]
        cfg = random_tiny_config(rng, flags)
        insts = [random_tree_instance(rng, int(rng.integers(2, max_tokens + 1)), ["r1", "r2", "no_relation"], f"g{k}.{b}")
                 for b in range(2)]
        err = model_gradient_check(cfg, insts, seed=int(rng.integers(0, 2**31)), max_coords=max_coords)
        results.append(({"ablations": cfg.ablations, "prune_k": cfg.prune_k, "heads": cfg.heads,
                         "gcn_layers": cfg.gcn_layers}, err))
    return results
