"""Seeded generator of small tree-annotated relation corpora.

Every sentence has a root predicate with the two entity spans attached to
it, so the entity path is ``subject - predicate - object``. The relation is
decided by one trigger word whose tree position depends on the mode:

``sdp``
    the predicate itself is the trigger (on the entity path).
``one_hop``
    the trigger is a dependent of the predicate (distance 1 from the path).
``off_path``
    the trigger sits in a side clause, two edges from the path, and is
    placed outside the entity window.

Decoy clauses carry trigger words of other relations two edges from the
path. ``trigger_placement`` and ``decoy_placement`` can pin the trigger unit
between the entities or the decoys outside them. A negation word directly before the true trigger (attached to it)
turns the label into the negative class; decoys are negated at the same
rate so that a negation word alone is uninformative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Instance
from .errors import ConfigError

NEUTRAL_VERBS = ["met", "saw", "visited", "joined", "left", "called", "reached", "praised"]
CLAUSE_HEADS = ["said", "thought", "reported", "claimed", "added", "heard"]
NEGATIONS = ["not", "never"]
NEGATIVE_TRIGGERS = ["mentioned", "noted", "discussed"]
TRIGGER_STEMS = ["founded", "married", "employed", "born", "owned", "led", "sued", "funded", "taught", "hosted"]
NAMES = {
    "PERSON": ["John", "Mary", "Ahmed", "Li", "Olga", "Pedro", "Kofi", "Anna"],
    "ORGANIZATION": ["Acme", "Initech", "Globex", "Umbrella", "Hooli", "Vandelay"],
    "LOCATION": ["Paris", "Lagos", "Lima", "Oslo", "Hanoi", "Perth"],
}
FILLER_POS = ["NN", "JJ", "DT", "IN", "RB", "NNS"]


@dataclass
class SyntheticConfig:
    n_relations: int = 3
    n_instances: int = 200
    length_min: int = 12
    length_max: int = 30
    length_weights: list[float] | None = None
    distance_min: int = 2
    distance_max: int = 8
    trigger_mode: str = "sdp"
    decoy_clauses: int = 1
    negation_prob: float = 0.0
    negative_fraction: float = 0.2
    # "any", "between" (inside the entity window) or "outside"
    trigger_placement: str = "any"
    decoy_placement: str = "any"
    triggers_per_relation: int = 3
    filler_vocab: int = 40
    negative_label: str = "no_relation"
    id_prefix: str = "syn"
    subj_types: list[str] = field(default_factory=lambda: ["PERSON", "ORGANIZATION"])
    obj_types: list[str] = field(default_factory=lambda: ["PERSON", "ORGANIZATION", "LOCATION"])

    @property
    def labels(self) -> list[str]:
        return [self.negative_label] + relation_names(self.n_relations)

    def length_support(self) -> tuple[np.ndarray, np.ndarray]:
        lengths = np.arange(self.length_min, self.length_max + 1)
        if self.length_weights is None:
            w = np.ones(len(lengths))
        else:
            w = np.asarray(self.length_weights, dtype=float)
            if w.shape != lengths.shape or (w < 0).any() or w.sum() == 0:
                raise ConfigError("length_weights must give one nonnegative weight per length in range")
        return lengths, w / w.sum()

    def unit_tokens(self) -> int:
        """Worst-case tokens taken by the trigger unit and decoy clauses."""
        neg = 1 if self.negation_prob > 0 else 0
        trigger = {"sdp": neg, "one_hop": 1 + neg, "off_path": 2 + neg}[self.trigger_mode]
        return trigger + self.decoy_clauses * (2 + neg)

    def validate(self) -> None:
        if self.trigger_mode not in ("sdp", "one_hop", "off_path"):
            raise ConfigError(f"unknown trigger_mode {self.trigger_mode!r}")
        for name in ("trigger_placement", "decoy_placement"):
            if getattr(self, name) not in PLACEMENTS:
                raise ConfigError(f"{name} must be one of {', '.join(PLACEMENTS)}")
        if self.trigger_mode == "off_path" and self.trigger_placement == "between":
            raise ConfigError("off_path triggers are always placed outside the entity window")
        if self.n_relations < 1 or self.n_instances < 1:
            raise ConfigError("n_relations and n_instances must be positive")
        if self.n_relations * self.triggers_per_relation > len(_trigger_pool()):
            raise ConfigError("too many relations/triggers for the trigger lexicon")
        if self.distance_min < 2:
            raise ConfigError("distance_min must be >= 2 (the predicate sits between the entities)")
        if self.distance_max < self.distance_min or self.length_max < self.length_min:
            raise ConfigError("empty length or distance range")
        if not 0 <= self.negation_prob <= 1 or not 0 <= self.negative_fraction < 1:
            raise ConfigError("probabilities must lie in [0, 1]")
        self.length_support()
        # two 2-token entities at the minimum distance plus every unit placed outside
        need = 4 + self.distance_min - 1 + self.unit_tokens()
        if self.length_min < need:
            raise ConfigError(f"length_min {self.length_min} is infeasible: sentences may need {need} tokens")


def relation_names(k: int) -> list[str]:
    return [f"rel_{r + 1}" for r in range(k)]


def _trigger_pool() -> list[str]:
    return TRIGGER_STEMS + [f"{w}{i}" for i in range(1, 10) for w in TRIGGER_STEMS]


def trigger_lexicon(cfg: SyntheticConfig) -> dict[str, list[str]]:
    pool = _trigger_pool()
    t = cfg.triggers_per_relation
    return {name: pool[r * t:(r + 1) * t] for r, name in enumerate(relation_names(cfg.n_relations))}


class _Builder:
    """Accumulates tokens; heads refer to builder-local token ids resolved at the end."""

    def __init__(self):
        self.tok: list[tuple[str, str, str, str]] = []  # form, pos, ner, deprel
        self.head: list[int | None] = []

    def add(self, form, pos, ner="O", deprel="dep", head=None) -> int:
        self.tok.append((form, pos, ner, deprel))
        self.head.append(head)
        return len(self.tok) - 1


def generate_synthetic(cfg: SyntheticConfig, seed: int) -> list[Instance]:
    cfg.validate()
    rng = np.random.default_rng(seed)
    lex = trigger_lexicon(cfg)
    rels = relation_names(cfg.n_relations)
    lengths, weights = cfg.length_support()
    fillers = [f"w{i}" for i in range(cfg.filler_vocab)]
    out = []
    for k in range(cfg.n_instances):
        L = int(rng.choice(lengths, p=weights))
        out.append(_sentence(cfg, rng, L, lex, rels, fillers, f"{cfg.id_prefix}{seed}-{k}"))
    return out


def _entity(b: _Builder, rng, types, length) -> list[int]:
    etype = str(rng.choice(types))
    names = NAMES.get(etype, NAMES["ORGANIZATION"])
    ids = [b.add(str(rng.choice(names)), "NNP", etype, "compound") for _ in range(length)]
    for i in ids[:-1]:
        b.head[i] = ids[-1]
    return ids


def _sentence(cfg, rng, L, lex, rels, fillers, sid) -> Instance:
    b = _Builder()
    # label and trigger choice
    if rng.random() < cfg.negative_fraction:
        trig_word, label = str(rng.choice(NEGATIVE_TRIGGERS)), cfg.negative_label
    else:
        rel = str(rng.choice(rels))
        trig_word, label = str(rng.choice(lex[rel])), rel
    negated = rng.random() < cfg.negation_prob
    if negated:
        label = cfg.negative_label

    subj_first = rng.random() < 0.5
    subj_len, obj_len = int(rng.integers(1, 3)), int(rng.integers(1, 3))

    verb = b.add(trig_word if cfg.trigger_mode == "sdp" else str(rng.choice(NEUTRAL_VERBS)), "VBD", deprel="root")
    subj = _entity(b, rng, cfg.subj_types, subj_len)
    obj = _entity(b, rng, cfg.obj_types, obj_len)
    b.head[subj[-1]] = verb
    b.head[obj[-1]] = verb
    b.tok[subj[-1]] = b.tok[subj[-1]][:3] + ("nsubj",)
    b.tok[obj[-1]] = b.tok[obj[-1]][:3] + ("obj",)

    # units: contiguous token groups hanging off the predicate, (ids, placement)
    units: list[tuple[list[int], str]] = []

    def negatable(word, pos, head, deprel, neg) -> list[int]:
        ids = []
        if neg:
            ids.append(b.add(str(rng.choice(NEGATIONS)), "RB", deprel="neg"))
        t = b.add(word, pos, deprel=deprel, head=head)
        if neg:
            b.head[ids[0]] = t
        return ids + [t]

    if cfg.trigger_mode == "sdp":
        if negated:
            n_id = b.add(str(rng.choice(NEGATIONS)), "RB", deprel="neg", head=verb)
            units.append(([n_id], "any"))
    elif cfg.trigger_mode == "one_hop":
        units.append((negatable(trig_word, "VBN", verb, "xcomp", negated), cfg.trigger_placement))
    else:
        c = b.add(str(rng.choice(CLAUSE_HEADS)), "VBD", deprel="ccomp", head=verb)
        units.append(([c] + negatable(trig_word, "VBN", c, "xcomp", negated), "outside"))
    for _ in range(cfg.decoy_clauses):
        other = [r for r in rels if r != label] or rels
        decoy = str(rng.choice(lex[str(rng.choice(other))]))
        c = b.add(str(rng.choice(CLAUSE_HEADS)), "VBD", deprel="ccomp", head=verb)
        units.append(([c] + negatable(decoy, "VBN", c, "xcomp", rng.random() < cfg.negation_prob),
                      cfg.decoy_placement))

    fixed = subj_len + obj_len + 1 + sum(len(u) for u, _ in units)
    if fixed > L:
        raise ConfigError(f"sentence length {L} cannot hold {fixed} required tokens")

    # entity distance d = tokens strictly between the spans + 1; the predicate is one of them
    d_lo, d_hi = cfg.distance_min, min(cfg.distance_max, L - subj_len - obj_len + 1)
    if d_hi < d_lo:
        raise ConfigError(f"no entity distance in [{cfg.distance_min}, {cfg.distance_max}] fits length {L}")
    mid_free = outside_free = 0
    for _ in range(100):
        d = int(rng.integers(d_lo, d_hi + 1))
        mid_cap = d - 2
        outside_cap = L - subj_len - obj_len - (d - 1)
        mid, outside = [], []
        order = rng.permutation(len(units))
        ok = True
        for ui in order:
            ids, place = units[ui]
            choices = []
            if place != "outside" and len(ids) <= mid_cap - sum(len(u) for u in mid):
                choices.append("mid")
            if place != "between" and len(ids) <= outside_cap - sum(len(u) for u in outside):
                choices.append("out")
            if not choices:
                ok = False
                break
            (mid if rng.choice(choices) == "mid" else outside).append(ids)
        if ok:
            mid_free = mid_cap - sum(len(u) for u in mid)
            outside_free = outside_cap - sum(len(u) for u in outside)
            break
    else:
        raise ConfigError(f"could not place {len(units)} units in a sentence of length {L}")

    def filler_group(count) -> list[list[int]]:
        groups = []
        for _ in range(count):
            f = b.add(str(rng.choice(fillers)), str(rng.choice(FILLER_POS)))
            if groups and rng.random() < 0.5:
                b.head[f] = groups[-1][-1]
                groups[-1].append(f)
            else:
                b.head[f] = verb
                groups.append([f])
        return groups

    mid_units = mid + filler_group(mid_free)
    rng.shuffle(mid_units)
    insert_at = int(rng.integers(0, len(mid_units) + 1))
    mid_units.insert(insert_at, [verb])
    out_units = outside + filler_group(outside_free)
    pre, post = [], []
    for u in out_units:
        (pre if rng.random() < 0.5 else post).append(u)

    first, second = (subj, obj) if subj_first else (obj, subj)
    sequence = [i for u in pre for i in u] + first + [i for u in mid_units for i in u] + second + [i for u in post for i in u]
    assert len(sequence) == L, (len(sequence), L)
    position = {tok: p + 1 for p, tok in enumerate(sequence)}
    head = [0 if b.head[t] is None else position[b.head[t]] for t in sequence]
    s_span = (position[subj[0]], position[subj[-1]])
    o_span = (position[obj[0]], position[obj[-1]])
    inst = Instance(
        tokens=[b.tok[t][0] for t in sequence],
        pos=[b.tok[t][1] for t in sequence],
        ner=[b.tok[t][2] for t in sequence],
        head=head,
        deprel=[b.tok[t][3] for t in sequence],
        subj_span=s_span,
        obj_span=o_span,
        relation=label,
        id=sid,
    )
    inst.validate()
    return inst


def entity_distance(inst: Instance) -> int:
    """Smallest token-index gap between the subject and object spans."""
    (s1, s2), (o1, o2) = inst.subj_span, inst.obj_span
    return o1 - s2 if s2 < o1 else s1 - o2


def trigger_position(inst: Instance, cfg: SyntheticConfig) -> int | None:
    """1-based index of the label-deciding trigger token, for analysis."""
    lex = trigger_lexicon(cfg)
    words = {w for ws in lex.values() for w in ws} | set(NEGATIVE_TRIGGERS)
    tree_root = inst.head.index(0) + 1
    for i, (w, h) in enumerate(zip(inst.tokens, inst.head), start=1):
        if w not in words:
            continue
        if cfg.trigger_mode == "sdp" and i == tree_root:
            return i
        if cfg.trigger_mode == "one_hop" and h == tree_root:
            return i
        if cfg.trigger_mode == "off_path" and h != 0 and inst.head[h - 1] == tree_root and cfg.decoy_clauses == 0:
            return i
    return None


PLACEMENTS = ("any", "between", "outside")

PRESETS = {
    "sdp": dict(trigger_mode="sdp", decoy_clauses=0, negation_prob=0.0),
    "one_hop": dict(trigger_mode="one_hop", decoy_clauses=1, negation_prob=0.0, length_min=12, length_max=30,
                    trigger_placement="between", decoy_placement="outside"),
    "off_path": dict(trigger_mode="off_path", decoy_clauses=0, negation_prob=0.0, length_min=16, length_max=30),
}


def preset(name: str, **overrides) -> SyntheticConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown synthetic preset {name!r}; choose from {', '.join(PRESETS)}")
    return SyntheticConfig(**{**PRESETS[name], **overrides})


def load_synthetic_config(text: str) -> SyntheticConfig:
    """``key=value`` lines; ``preset=<name>`` selects a starting point."""
    values: dict[str, object] = {}
    base = None
    fields_ = SyntheticConfig.__dataclass_fields__
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"synthetic config line {line!r} is not key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k == "preset":
            base = v
            continue
        if k not in fields_:
            raise ConfigError(f"unknown synthetic config key {k!r}")
        typ = fields_[k].type
        try:
            if typ == "int":
                values[k] = int(v)
            elif typ == "float":
                values[k] = float(v)
            elif k in ("subj_types", "obj_types"):
                values[k] = [t for t in v.split(",") if t]
            elif k == "length_weights":
                values[k] = [float(t) for t in v.split(",") if t]
            else:
                values[k] = v
        except ValueError:
            raise ConfigError(f"bad value for {k}: {v!r}") from None
    cfg = preset(base, **values) if base else SyntheticConfig(**values)
    cfg.validate()
    return cfg
