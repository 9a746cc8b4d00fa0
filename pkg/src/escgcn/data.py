"""Corpus ingestion, vocabularies, entity masking and position buckets.

Corpus blocks look like::

    # id=ex1 subj=1-1 obj=3-3 relation=per:city_of_residence
    1	John	NNP	PERSON	2	nsubj
    2	visited	VBD	O	0	root
    3	Paris	NNP	LOCATION	2	obj

Header keys: ``id``, ``subj``, ``obj``, ``relation`` (required), ``ent3`` for a
third entity span, and ``multi_sentence=1`` to allow several roots, which are
then joined under a synthetic document root appended after the last token.
Token indices, heads and spans are 1-based.
"""

from __future__ import annotations

import io
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import FormatError, ParseError

log = logging.getLogger(__name__)

N_COLUMNS = 6
POSITION_CLIP = 9
DOC_ROOT_TOKEN = "<DOCROOT>"

PAD, UNK = "<PAD>", "<UNK>"


@dataclass
class Instance:
    tokens: list[str]
    pos: list[str]
    ner: list[str]
    head: list[int]
    deprel: list[str]
    subj_span: tuple[int, int]
    obj_span: tuple[int, int]
    relation: str
    id: str = ""
    ent3_span: tuple[int, int] | None = None
    multi_sentence: bool = False

    @property
    def n(self) -> int:
        return len(self.tokens)

    @property
    def subj_type(self) -> str:
        return self.ner[self.subj_span[0] - 1]

    @property
    def obj_type(self) -> str:
        return self.ner[self.obj_span[0] - 1]

    def spans(self) -> list[tuple[int, int]]:
        out = [self.subj_span, self.obj_span]
        if self.ent3_span is not None:
            out.append(self.ent3_span)
        return out

    def validate(self) -> None:
        n = self.n
        for name, seq in (("pos", self.pos), ("ner", self.ner), ("head", self.head), ("deprel", self.deprel)):
            if len(seq) != n:
                raise ParseError(f"instance {self.id!r}: {name} has {len(seq)} entries for {n} tokens")
        if n == 0:
            raise ParseError(f"instance {self.id!r}: no tokens")
        spans = self.spans()
        for s1, s2 in spans:
            if not 1 <= s1 <= s2 <= n:
                raise ParseError(f"instance {self.id!r}: span ({s1},{s2}) out of range 1..{n}")
        for a in range(len(spans)):
            for b in range(a + 1, len(spans)):
                (a1, a2), (b1, b2) = spans[a], spans[b]
                if a1 <= b2 and b1 <= a2:
                    raise ParseError(f"instance {self.id!r}: spans ({a1},{a2}) and ({b1},{b2}) overlap")
        check_tree(self.head, where=f"instance {self.id!r}")


def check_tree(head: Sequence[int], where: str = "tree") -> None:
    """Exactly one root, heads in range, no cycles."""
    n = len(head)
    for i, h in enumerate(head, start=1):
        if not 0 <= h <= n or h == i:
            raise ParseError(f"{where}: token {i} has invalid head {h}")
    state = [0] * (n + 1)  # 0 unvisited, 1 on stack, 2 done
    for start in range(1, n + 1):
        trail = []
        v = start
        while v != 0 and state[v] == 0:
            state[v] = 1
            trail.append(v)
            v = head[v - 1]
        if v != 0 and state[v] == 1:
            cyc = trail[trail.index(v):]
            raise ParseError(f"{where}: cyclic heads among tokens {min(cyc)}-{max(cyc)} {sorted(cyc)}")
        for t in trail:
            state[t] = 2
    roots = [i + 1 for i, h in enumerate(head) if h == 0]
    if len(roots) != 1:
        raise ParseError(f"{where}: expected exactly one root, found {len(roots)} {roots}")


# ---------------------------------------------------------------- corpus format


def _parse_span(value: str, key: str, path, line_no) -> tuple[int, int]:
    try:
        a, b = value.split("-")
        return int(a), int(b)
    except ValueError:
        raise ParseError(f"malformed {key} span {value!r}", path, line_no) from None


def _parse_header(line: str, path, line_no) -> dict[str, str]:
    fields = {}
    for item in line.lstrip("#").split():
        if "=" not in item:
            raise ParseError(f"header item {item!r} is not key=value", path, line_no)
        k, v = item.split("=", 1)
        fields[k] = v
    for req in ("subj", "obj", "relation"):
        if req not in fields:
            raise ParseError(f"header lacks {req}=", path, line_no)
    return fields


def parse_corpus(source: str | Path | io.TextIOBase, path_label: str | None = None) -> list[Instance]:
    """Read every block in a corpus file (a path, or any text stream)."""
    if isinstance(source, (str, Path)):
        path_label = path_label or str(source)
        with open(source, encoding="utf-8") as fh:
            return parse_corpus_text(fh.read(), path_label)
    return parse_corpus_text(source.read(), path_label)


def parse_corpus_text(text: str, path: str | None = None) -> list[Instance]:
    instances: list[Instance] = []
    header: dict[str, str] | None = None
    header_line = 0
    rows: list[tuple[int, list[str]]] = []

    def flush():
        nonlocal header, rows
        if header is None:
            if rows:
                raise ParseError("token lines before any header", path, rows[0][0])
            return
        instances.append(_build_instance(header, rows, path, header_line, len(instances)))
        header, rows = None, []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n\r")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            if header is not None and rows:
                flush()
            if header is not None and not rows:
                raise ParseError("two headers without tokens between them", path, line_no)
            header = _parse_header(line, path, line_no)
            header_line = line_no
            continue
        cols = line.split("\t")
        if len(cols) != N_COLUMNS:
            raise ParseError(f"expected {N_COLUMNS} tab-separated columns, got {len(cols)}", path, line_no, len(cols))
        rows.append((line_no, cols))
    flush()
    return instances


def _build_instance(header, rows, path, header_line, ordinal) -> Instance:
    if not rows:
        raise ParseError("header without token lines", path, header_line)
    tokens, pos, ner, head, deprel = [], [], [], [], []
    for expect, (line_no, cols) in enumerate(rows, start=1):
        try:
            idx = int(cols[0])
        except ValueError:
            raise ParseError(f"token index {cols[0]!r} is not an integer", path, line_no, 1) from None
        if idx != expect:
            raise ParseError(f"token index {idx} out of sequence (expected {expect})", path, line_no, 1)
        try:
            h = int(cols[4])
        except ValueError:
            raise ParseError(f"head {cols[4]!r} is not an integer", path, line_no, 5) from None
        tokens.append(cols[1])
        pos.append(cols[2])
        ner.append(cols[3])
        head.append(h)
        deprel.append(cols[5])
    multi = header.get("multi_sentence", "0") == "1"
    inst = Instance(
        tokens=tokens,
        pos=pos,
        ner=ner,
        head=head,
        deprel=deprel,
        subj_span=_parse_span(header["subj"], "subj", path, header_line),
        obj_span=_parse_span(header["obj"], "obj", path, header_line),
        relation=header["relation"],
        id=header.get("id", f"{ordinal}"),
        ent3_span=_parse_span(header["ent3"], "ent3", path, header_line) if "ent3" in header else None,
        multi_sentence=multi,
    )
    if multi:
        inst = join_sentences(inst)
    try:
        inst.validate()
    except ParseError as e:
        raise ParseError(str(e), path, header_line) from None
    return inst


def join_sentences(inst: Instance) -> Instance:
    """Attach every sentence root to one synthetic root token appended at the end."""
    roots = [i for i, h in enumerate(inst.head) if h == 0]
    if len(roots) <= 1 or (inst.tokens and inst.tokens[-1] == DOC_ROOT_TOKEN):
        return inst
    n = inst.n
    head = [n + 1 if h == 0 else h for h in inst.head] + [0]
    return Instance(
        tokens=inst.tokens + [DOC_ROOT_TOKEN],
        pos=inst.pos + ["ROOT"],
        ner=inst.ner + ["O"],
        head=head,
        deprel=inst.deprel + ["root"],
        subj_span=inst.subj_span,
        obj_span=inst.obj_span,
        relation=inst.relation,
        id=inst.id,
        ent3_span=inst.ent3_span,
        multi_sentence=True,
    )


def format_instance(inst: Instance) -> str:
    parts = [f"id={inst.id}", f"subj={inst.subj_span[0]}-{inst.subj_span[1]}",
             f"obj={inst.obj_span[0]}-{inst.obj_span[1]}", f"relation={inst.relation}"]
    if inst.ent3_span is not None:
        parts.append(f"ent3={inst.ent3_span[0]}-{inst.ent3_span[1]}")
    if inst.multi_sentence:
        parts.append("multi_sentence=1")
    lines = ["# " + " ".join(parts)]
    for i in range(inst.n):
        lines.append("\t".join([str(i + 1), inst.tokens[i], inst.pos[i], inst.ner[i], str(inst.head[i]), inst.deprel[i]]))
    return "\n".join(lines) + "\n"


def write_corpus(instances: Iterable[Instance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(format_instance(i) for i in instances))


# ---------------------------------------------------------------- vocabularies


def subj_mask_token(ner_type: str) -> str:
    return f"<SUBJ:{ner_type}>"


def obj_mask_token(ner_type: str) -> str:
    return f"<OBJ:{ner_type}>"


def ent3_mask_token(ner_type: str) -> str:
    return f"<ENT3:{ner_type}>"


class Vocab:
    """String <-> id map. Id 0 is padding and id 1 the unknown symbol."""

    def __init__(self, symbols: Iterable[str] = ()):
        self.itos: list[str] = [PAD, UNK]
        self.stoi: dict[str, int] = {PAD: 0, UNK: 1}
        for s in symbols:
            self.add(s)

    def add(self, s: str) -> int:
        if s not in self.stoi:
            self.stoi[s] = len(self.itos)
            self.itos.append(s)
        return self.stoi[s]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, s: str) -> bool:
        return s in self.stoi

    def __getitem__(self, s: str) -> int:
        return self.stoi.get(s, 1)

    def lookup(self, symbols: Iterable[str]) -> list[int]:
        return [self.stoi.get(s, 1) for s in symbols]

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: list[str]) -> "Vocab":
        v = cls()
        for s in itos[2:]:
            v.add(s)
        return v


class WordVocab(Vocab):
    """Word vocabulary with one masked-entity symbol per (role, NER type)."""

    def __init__(self, words: Iterable[str] = (), ner_types: Iterable[str] = ()):
        super().__init__()
        self.mask_ids: set[int] = set()
        for t in ner_types:
            self.add_mask_type(t)
        for w in words:
            self.add(w)

    def add_mask_type(self, ner_type: str) -> None:
        for tok in (subj_mask_token(ner_type), obj_mask_token(ner_type), ent3_mask_token(ner_type)):
            self.mask_ids.add(self.add(tok))

    @classmethod
    def from_list(cls, itos: list[str]) -> "WordVocab":
        v = cls()
        for s in itos[2:]:
            idx = v.add(s)
            if s.startswith(("<SUBJ:", "<OBJ:", "<ENT3:")):
                v.mask_ids.add(idx)
        return v


@dataclass
class Vocabs:
    word: WordVocab
    pos: Vocab
    ner: Vocab
    deprel: Vocab
    relations: list[str]
    negative_label: str = "no_relation"

    def relation_id(self, label: str) -> int:
        try:
            return self.relations.index(label)
        except ValueError:
            raise KeyError(label) from None

    @property
    def negative_id(self) -> int | None:
        return self.relations.index(self.negative_label) if self.negative_label in self.relations else None

    def to_dict(self) -> dict:
        return {
            "word": self.word.to_list(),
            "pos": self.pos.to_list(),
            "ner": self.ner.to_list(),
            "deprel": self.deprel.to_list(),
            "relations": list(self.relations),
            "negative_label": self.negative_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabs":
        return cls(
            word=WordVocab.from_list(d["word"]),
            pos=Vocab.from_list(d["pos"]),
            ner=Vocab.from_list(d["ner"]),
            deprel=Vocab.from_list(d["deprel"]),
            relations=list(d["relations"]),
            negative_label=d["negative_label"],
        )


def build_vocabs(
    instances: Sequence[Instance],
    negative_label: str = "no_relation",
    min_count: int = 1,
    extra_relations: Iterable[str] = (),
) -> Vocabs:
    """Collect word/tag/label inventories from (training) instances.

    Entity tokens are counted after masking, so raw entity strings never
    enter the word vocabulary through their spans.
    """
    ner = Vocab(sorted({t for inst in instances for t in inst.ner}))
    word = WordVocab(ner_types=ner.itos[2:])
    counts: Counter[str] = Counter()
    for inst in instances:
        masked = _masked_positions(inst)
        counts.update(tok for i, tok in enumerate(inst.tokens) if i not in masked)
    for w, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if c >= min_count:
            word.add(w)
    pos = Vocab(sorted({t for inst in instances for t in inst.pos}))
    deprel = Vocab(sorted({t for inst in instances for t in inst.deprel}))
    labels = sorted({inst.relation for inst in instances} | set(extra_relations) | {negative_label})
    labels.remove(negative_label)
    return Vocabs(word, pos, ner, deprel, [negative_label] + labels, negative_label)


def _masked_positions(inst: Instance) -> set[int]:
    out = set()
    for s1, s2 in inst.spans():
        out.update(range(s1 - 1, s2))
    return out


def mask_entities(inst: Instance, vocab: WordVocab) -> list[int]:
    """Word ids with subject/object (and third-entity) spans replaced by typed mask ids."""
    ids = vocab.lookup(inst.tokens)
    s1, s2 = inst.subj_span
    o1, o2 = inst.obj_span
    subj_id = vocab[subj_mask_token(inst.subj_type)]
    obj_id = vocab[obj_mask_token(inst.obj_type)]
    for i in range(s1 - 1, s2):
        ids[i] = subj_id
    for i in range(o1 - 1, o2):
        ids[i] = obj_id
    if inst.ent3_span is not None:
        e1, e2 = inst.ent3_span
        e_id = vocab[ent3_mask_token(inst.ner[e1 - 1])]
        for i in range(e1 - 1, e2):
            ids[i] = e_id
    return ids


# ---------------------------------------------------------------- positions


def binary_position(i: int, s1: int, s2: int) -> int:
    """Signed integer-log distance of token ``i`` to the span [s1, s2] (1-based)."""
    if i < s1:
        return -((s1 - i).bit_length() - 1) - 1
    if i > s2:
        return (i - s2).bit_length() - 1 + 1
    return 0


def position_bucket(i: int, s1: int, s2: int, clip: int = POSITION_CLIP) -> int:
    return max(-clip, min(clip, binary_position(i, s1, s2)))


def position_buckets(inst: Instance, clip: int = POSITION_CLIP) -> tuple[np.ndarray, np.ndarray]:
    """Per-token subject- and object-relative buckets, clipped to [-clip, clip]."""
    n = inst.n
    s = np.array([position_bucket(i, *inst.subj_span, clip=clip) for i in range(1, n + 1)], dtype=np.int64)
    o = np.array([position_bucket(i, *inst.obj_span, clip=clip) for i in range(1, n + 1)], dtype=np.int64)
    return s, o


def position_embedding(inst: Instance, table: Tensor, clip: int = POSITION_CLIP) -> Tensor:
    """Rows are [table[subject bucket]; table[object bucket]] for each token."""
    from .autodiff import concat, embedding

    if table.shape[0] != 2 * clip + 1:
        raise ValueError(f"position table has {table.shape[0]} rows, need {2 * clip + 1}")
    s, o = position_buckets(inst, clip)
    return concat([embedding(table, s + clip), embedding(table, o + clip)], axis=-1)


# ---------------------------------------------------------------- pretrained vectors


@dataclass
class Coverage:
    found: int
    total: int
    missing: list[str] = field(default_factory=list)

    @property
    def ratio(self) -> float:
        return self.found / self.total if self.total else 0.0


def load_pretrained(
    path: str | Path | None,
    vocab: Vocab,
    dim: int,
    rng: np.random.Generator,
    allow_random: bool = False,
) -> tuple[Tensor, Coverage]:
    """Word table initialized from a ``token v1 ... vd`` text file.

    Rows of words absent from the file are drawn from uniform(-0.1, 0.1);
    the padding row is zero. Special symbols (padding, unknown, entity masks)
    are excluded from the coverage count.
    """
    table = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    table[0] = 0.0
    countable = [w for w in vocab.itos[2:] if not (w.startswith("<") and w.endswith(">"))]
    if path is None or not Path(path).exists():
        if not allow_random:
            raise FileNotFoundError(f"pretrained vector file not found: {path}")
        if path is not None:
            log.warning("no pretrained vectors at %s; using random initialization", path)
        return Tensor(table, requires_grad=True), Coverage(0, len(countable), countable)
    found = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip().split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise FormatError(f"vector has {len(parts) - 1} values, expected {dim}", str(path), line_no)
            word = parts[0]
            if word in vocab.stoi and vocab.stoi[word] > 1:
                try:
                    table[vocab.stoi[word]] = [float(v) for v in parts[1:]]
                except ValueError:
                    raise FormatError("non-numeric vector entry", str(path), line_no) from None
                found.add(word)
    missing = [w for w in countable if w not in found]
    cov = Coverage(len(countable) - len(missing), len(countable), missing)
    log.info("pretrained coverage %d/%d", cov.found, cov.total)
    return Tensor(table, requires_grad=True), cov
