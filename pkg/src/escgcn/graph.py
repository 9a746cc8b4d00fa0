"""Dependency-tree algorithms: LCA, entity paths, path-centric pruning, adjacency.

Nodes are the 1-based token indices used by :class:`~escgcn.data.Instance`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from .data import check_tree

FULL = None  # pruning distance sentinel: keep the whole tree

Span = tuple[int, int]


class DepTree:
    def __init__(self, head: Sequence[int], validate: bool = True):
        if validate:
            check_tree(head)
        self.n = len(head)
        self.head = list(head)
        self.children: list[list[int]] = [[] for _ in range(self.n + 1)]
        self.root = 0
        for i, h in enumerate(self.head, start=1):
            if h == 0:
                self.root = i
            else:
                self.children[h].append(i)
        self.depth = [0] * (self.n + 1)
        order = deque([self.root])
        while order:
            v = order.popleft()
            for c in self.children[v]:
                self.depth[c] = self.depth[v] + 1
                order.append(c)

    def parent(self, v: int) -> int:
        return self.head[v - 1]

    def edges(self) -> list[tuple[int, int]]:
        """(head, dependent) pairs."""
        return [(h, i) for i, h in enumerate(self.head, start=1) if h != 0]

    def neighbors(self, v: int) -> list[int]:
        p = self.parent(v)
        return self.children[v] + ([p] if p else [])

    def ancestors(self, v: int) -> list[int]:
        """v, parent(v), ..., root."""
        out = [v]
        while self.parent(out[-1]) != 0:
            out.append(self.parent(out[-1]))
        return out

    def path(self, u: int, v: int) -> list[int]:
        """Nodes on the unique tree path from u to v, inclusive."""
        up, vp = [], []
        while u != v:
            if self.depth[u] >= self.depth[v]:
                up.append(u)
                u = self.parent(u)
            else:
                vp.append(v)
                v = self.parent(v)
        return up + [u] + vp[::-1]


def _span_nodes(span: Span) -> range:
    return range(span[0], span[1] + 1)


def _lca2(tree: DepTree, u: int, v: int) -> int:
    while u != v:
        if tree.depth[u] >= tree.depth[v]:
            u = tree.parent(u)
        else:
            v = tree.parent(v)
    return u


def lca(tree: DepTree, spans: Sequence[Span]) -> int:
    """Deepest node that is an ancestor (inclusive) of every token in every span."""
    nodes = [v for s in spans for v in _span_nodes(s)]
    if not nodes:
        raise ValueError("lca needs at least one non-empty span")
    return reduce(lambda a, b: _lca2(tree, a, b), nodes)


def sdp_nodes(tree: DepTree, span_a: Span, span_b: Span) -> set[int]:
    """Union of tree paths between every token of span_a and every token of span_b."""
    out: set[int] = set()
    for u in _span_nodes(span_a):
        for v in _span_nodes(span_b):
            out.update(tree.path(u, v))
    return out


def multi_sdp_nodes(tree: DepTree, spans: Sequence[Span]) -> set[int]:
    """Path nodes joining all spans pairwise (covers ternary instances)."""
    if len(spans) == 1:
        return set(_span_nodes(spans[0]))
    out: set[int] = set()
    for a in range(len(spans)):
        for b in range(a + 1, len(spans)):
            out |= sdp_nodes(tree, spans[a], spans[b])
    return out


@dataclass(frozen=True)
class PrunedGraph:
    kept_nodes: frozenset[int]
    kept_edges: frozenset[tuple[int, int]]  # (head, dependent)
    k: int | None


def prune(tree: DepTree, spans: Sequence[Span], k: int | None) -> PrunedGraph:
    """Keep nodes within undirected tree distance ``k`` of the entity path.

    ``k=FULL`` (None) keeps the whole tree. Kept edges are the tree edges
    whose endpoints are both kept.
    """
    if k is FULL:
        kept = frozenset(range(1, tree.n + 1))
    else:
        if k < 0:
            raise ValueError(f"pruning distance must be >= 0, got {k}")
        seeds = multi_sdp_nodes(tree, spans)
        dist = {v: 0 for v in seeds}
        frontier = deque(seeds)
        while frontier:
            v = frontier.popleft()
            if dist[v] == k:
                continue
            for w in tree.neighbors(v):
                if w not in dist:
                    dist[w] = dist[v] + 1
                    frontier.append(w)
        kept = frozenset(dist)
    edges = frozenset((h, d) for h, d in tree.edges() if h in kept and d in kept)
    return PrunedGraph(kept, edges, k)


@dataclass
class NormAdjacency:
    A: np.ndarray
    A_tilde: np.ndarray
    degree: np.ndarray

    def normalized(self) -> np.ndarray:
        """Row-normalized A_tilde / d, the operator applied by graph convolution."""
        return self.A_tilde / self.degree[:, None]


def adjacency(pg: PrunedGraph | Iterable[tuple[int, int]], n: int) -> NormAdjacency:
    """Symmetric 0/1 adjacency over all n tokens plus self-loops and degrees."""
    edges = pg.kept_edges if isinstance(pg, PrunedGraph) else pg
    A = np.zeros((n, n))
    for u, v in edges:
        A[u - 1, v - 1] = 1.0
        A[v - 1, u - 1] = 1.0
    A_tilde = A + np.eye(n)
    return NormAdjacency(A, A_tilde, A_tilde.sum(axis=1))


def format_graph(pg: PrunedGraph, adj: NormAdjacency) -> str:
    """Plain-text dump: kept nodes, kept edges, then the A_tilde rows."""
    lines = [f"k={'full' if pg.k is None else pg.k}",
             "nodes " + " ".join(str(v) for v in sorted(pg.kept_nodes)),
             "edges"]
    lines += [f"{h}\t{d}" for h, d in sorted(pg.kept_edges)]
    lines.append("A_tilde")
    lines += [" ".join(str(int(x)) for x in row) for row in adj.A_tilde]
    lines.append("degree " + " ".join(str(int(x)) for x in adj.degree))
    return "\n".join(lines) + "\n"
