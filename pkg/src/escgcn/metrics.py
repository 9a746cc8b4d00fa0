"""Precision/recall/F1 for relation classification.

Micro scores pool counts over positive classes: a prediction of the
negative label is never a true or false positive, and a gold negative is
never a false negative. Macro F1 averages per-class F1 over positive
classes that occur in gold or predictions.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

from .errors import UsageError


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float
    accuracy: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    support: int = 0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def confusion_counts(pred: Sequence[Hashable], gold: Sequence[Hashable], negative: Hashable | None):
    """(tp, fp, fn) pooled over positive classes."""
    tp = fp = fn = 0
    for p, g in zip(pred, gold):
        if p == g:
            if g != negative:
                tp += 1
            continue
        if p != negative:
            fp += 1
        if g != negative:
            fn += 1
    return tp, fp, fn


def metrics(pred: Sequence[Hashable], gold: Sequence[Hashable], scheme: str = "micro",
            negative: Hashable | None = "no_relation") -> Scores:
    if len(pred) != len(gold):
        raise UsageError(f"prediction count {len(pred)} != gold count {len(gold)}")
    n = len(gold)
    acc = sum(p == g for p, g in zip(pred, gold)) / n if n else 0.0
    tp, fp, fn = confusion_counts(pred, gold, negative)
    if scheme == "micro":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        return Scores(p, r, _f1(p, r), acc, tp, fp, fn, n)
    if scheme == "macro":
        labels = sorted({*pred, *gold} - {negative}, key=str)
        tpc, fpc, fnc = Counter(), Counter(), Counter()
        for pl, gl in zip(pred, gold):
            if pl == gl:
                tpc[gl] += 1
            else:
                fpc[pl] += 1
                fnc[gl] += 1
        ps, rs, fs = [], [], []
        for lab in labels:
            pc = tpc[lab] / (tpc[lab] + fpc[lab]) if tpc[lab] + fpc[lab] else 0.0
            rc = tpc[lab] / (tpc[lab] + fnc[lab]) if tpc[lab] + fnc[lab] else 0.0
            ps.append(pc)
            rs.append(rc)
            fs.append(_f1(pc, rc))
        k = len(labels)
        if not k:
            return Scores(0.0, 0.0, 0.0, acc, tp, fp, fn, n)
        return Scores(sum(ps) / k, sum(rs) / k, sum(fs) / k, acc, tp, fp, fn, n)
    raise UsageError(f"unknown scheme {scheme!r}; use 'micro' or 'macro'")
