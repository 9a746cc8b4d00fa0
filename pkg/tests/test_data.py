import io

import numpy as np
import pytest

from escgcn.data import (
    DOC_ROOT_TOKEN, Vocabs, binary_position, build_vocabs, format_instance, load_pretrained, mask_entities,
    parse_corpus, parse_corpus_text, position_bucket, position_buckets, position_embedding, write_corpus,
)
from escgcn.autodiff import Tensor
from escgcn.errors import FormatError, ParseError

from conftest import make_instance

SAMPLE = """# id=ex1 subj=1-1 obj=3-3 relation=per:city_of_residence
1\tJohn\tNNP\tPERSON\t2\tnsubj
2\tvisited\tVBD\tO\t0\troot
3\tParis\tNNP\tLOCATION\t2\tobj

# id=ex2 subj=1-2 obj=4-4 relation=no_relation
1\tMary\tNNP\tPERSON\t2\tcompound
2\tSmith\tNNP\tPERSON\t3\tnsubj
3\tleft\tVBD\tO\t0\troot
4\tIBM\tNNP\tORGANIZATION\t3\tobj
"""


def test_parse_sample():
    insts = parse_corpus_text(SAMPLE, "mem")
    assert [i.id for i in insts] == ["ex1", "ex2"]
    assert insts[1].subj_span == (1, 2) and insts[1].head == [2, 3, 0, 3]
    assert insts[0].relation == "per:city_of_residence"


def test_round_trip_through_file(tmp_path):
    insts = parse_corpus_text(SAMPLE)
    path = tmp_path / "c.txt"
    write_corpus(insts, path)
    assert parse_corpus(path) == insts
    assert parse_corpus(io.StringIO(format_instance(insts[0]))) == insts[:1]


@pytest.mark.parametrize("text,match", [
    ("# subj=1-1 obj=2-2 relation=r\n1\ta\tN\tO\t0\troot\n2\tb\tN\tO\t0\troot\n", "one root"),
    ("# subj=1-1 obj=2-2 relation=r\n1\ta\tN\tO\t2\tdep\n2\tb\tN\tO\t1\tdep\n", "cyclic"),
    ("# subj=1-1 obj=2-2\n1\ta\tN\tO\t0\troot\n", "relation"),
    ("# subj=1-1 obj=2-2 relation=r\n1\ta\tN\tO\t0\n", "columns"),
    ("# subj=1-1 obj=3-3 relation=r\n1\ta\tN\tO\t0\troot\n2\tb\tN\tO\t1\tdep\n", "out of range"),
    ("# subj=1-2 obj=2-2 relation=r\n1\ta\tN\tO\t0\troot\n2\tb\tN\tO\t1\tdep\n", "overlap"),
    ("# subj=1-1 obj=2-2 relation=r\n2\ta\tN\tO\t0\troot\n", "out of sequence"),
])
def test_malformed_blocks(text, match):
    with pytest.raises(ParseError, match=match):
        parse_corpus_text(text, "bad.txt")


def test_error_location_reported():
    bad = SAMPLE.replace("3\tParis\tNNP\tLOCATION\t2\tobj", "3\tParis\tNNP\tLOCATION\tx\tobj")
    with pytest.raises(ParseError) as exc:
        parse_corpus_text(bad, "c.txt")
    assert exc.value.path == "c.txt" and exc.value.line == 4 and exc.value.column == 5


def test_multi_sentence_joined_under_doc_root():
    text = ("# subj=1-1 obj=3-3 relation=r multi_sentence=1\n"
            "1\ta\tN\tO\t0\troot\n2\tb\tN\tO\t1\tdep\n3\tc\tN\tO\t0\troot\n")
    inst = parse_corpus_text(text)[0]
    assert inst.tokens[-1] == DOC_ROOT_TOKEN
    assert inst.head == [4, 1, 4, 0]


def test_entity_masking_and_vocab():
    insts = parse_corpus_text(SAMPLE)
    vocabs = build_vocabs(insts)
    assert "John" not in vocabs.word and "Smith" not in vocabs.word
    assert vocabs.relations[0] == "no_relation"
    ids = mask_entities(insts[1], vocabs.word)
    assert ids[0] == ids[1] == vocabs.word["<SUBJ:PERSON>"]
    assert ids[3] == vocabs.word["<OBJ:ORGANIZATION>"]
    assert Vocabs.from_dict(vocabs.to_dict()).to_dict() == vocabs.to_dict()


def test_binary_position_examples():
    assert binary_position(5, 5, 6) == 0
    assert binary_position(4, 5, 6) == -1
    assert binary_position(10, 5, 6) == 3
    assert binary_position(1, 5, 6) == -3


def test_binary_position_sign_and_monotonicity():
    for s1, s2 in [(3, 3), (5, 8), (20, 21)]:
        vals = [binary_position(i, s1, s2) for i in range(1, 60)]
        for i, v in enumerate(vals, start=1):
            assert (v < 0) == (i < s1) and (v > 0) == (i > s2)
        for i in range(1, s1 - 1):
            assert abs(vals[i - 1]) >= abs(vals[i])
        for i in range(s2 + 1, 58):
            assert abs(vals[i]) >= abs(vals[i - 1])


def test_position_buckets_clip_and_embedding():
    n = 20
    inst = make_instance(["w"] * n, [0] + [1] * (n - 1), (2, 2), (19, 20))
    s, o = position_buckets(inst, clip=3)
    assert list(s) == [position_bucket(i, 2, 2, 3) for i in range(1, n + 1)]
    assert o.min() == -3 and s.max() == 3
    table = Tensor(np.arange(7 * 2, dtype=float).reshape(7, 2))
    emb = position_embedding(inst, table, clip=3)
    assert emb.shape == (n, 4)
    np.testing.assert_array_equal(emb.data[1, :2], table.data[3])


def test_load_pretrained(tmp_path, np_rng):
    insts = parse_corpus_text(SAMPLE)
    vocabs = build_vocabs(insts)
    vec = tmp_path / "v.txt"
    vec.write_text("visited 1 2\nleft 3 4\nunused 5 6\n")
    table, cov = load_pretrained(vec, vocabs.word, 2, np_rng)
    np.testing.assert_array_equal(table.data[vocabs.word["left"]], [3, 4])
    np.testing.assert_array_equal(table.data[0], [0, 0])
    assert (cov.found, cov.total) == (2, 2)
    vec.write_text("visited 1 2 3\n")
    with pytest.raises(FormatError):
        load_pretrained(vec, vocabs.word, 2, np_rng)
    with pytest.raises(FileNotFoundError):
        load_pretrained(tmp_path / "missing.txt", vocabs.word, 2, np_rng)
