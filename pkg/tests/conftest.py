import random
from collections import deque

import numpy as np
import pytest

from escgcn.data import Instance

# criterion number -> (passed, detail); filled by test_acceptance.py
CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_heads(rng: random.Random, n: int) -> list[int]:
    """Uniform random recursive tree over a shuffled node order."""
    order = list(range(1, n + 1))
    rng.shuffle(order)
    head = [0] * n
    for k, v in enumerate(order[1:], start=1):
        head[v - 1] = order[rng.randrange(k)]
    return head


def random_spans(rng: random.Random, n: int) -> tuple[tuple[int, int], tuple[int, int]]:
    while True:
        a1 = rng.randint(1, n)
        a2 = min(n, a1 + rng.randint(0, 2))
        b1 = rng.randint(1, n)
        b2 = min(n, b1 + rng.randint(0, 2))
        if a2 < b1 or b2 < a1:
            return (a1, a2), (b1, b2)


def bfs_ball(head: list[int], seeds: set[int], k):
    """Independent oracle: nodes within undirected distance k of ``seeds``."""
    n = len(head)
    nbr = {v: [] for v in range(1, n + 1)}
    for i, h in enumerate(head, start=1):
        if h:
            nbr[i].append(h)
            nbr[h].append(i)
    if k is None:
        return set(range(1, n + 1))
    dist = {v: 0 for v in seeds}
    q = deque(seeds)
    while q:
        v = q.popleft()
        for w in nbr[v]:
            if w not in dist:
                dist[w] = dist[v] + 1
                q.append(w)
    return {v for v, d in dist.items() if d <= k}


def path_oracle(head: list[int], u: int, v: int) -> set[int]:
    def up(x):
        out = [x]
        while head[out[-1] - 1]:
            out.append(head[out[-1] - 1])
        return out

    pu, pv = up(u), up(v)
    common = set(pu) & set(pv)
    meet = next(x for x in pu if x in common)
    return set(pu[: pu.index(meet) + 1]) | set(pv[: pv.index(meet) + 1])


def make_instance(tokens, head, subj, obj, relation="rel_a", ner=None, ident="x") -> Instance:
    n = len(tokens)
    return Instance(
        tokens=list(tokens), pos=["NN"] * n, ner=list(ner or ["O"] * n), head=list(head),
        deprel=["dep" if h else "root" for h in head], subj_span=subj, obj_span=obj,
        relation=relation, id=ident,
    )


@pytest.fixture
def tiny_instances():
    return [
        make_instance(["Ann", "met", "Bob"], [2, 0, 2], (1, 1), (3, 3), "rel_a", ["PERSON", "O", "PERSON"], "a"),
        make_instance(["Ann", "saw", "the", "Bob"], [2, 0, 4, 2], (1, 1), (4, 4), "no_relation",
                      ["PERSON", "O", "O", "PERSON"], "b"),
        make_instance(["Cy", "led", "Dee", "now"], [2, 0, 2, 2], (1, 1), (3, 3), "rel_b",
                      ["PERSON", "O", "ORG", "O"], "c"),
    ]


@pytest.fixture
def np_rng():
    return np.random.default_rng(0)
