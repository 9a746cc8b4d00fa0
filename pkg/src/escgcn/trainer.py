"""Training loop, evaluation with length/distance breakdowns, prediction, data-size study."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .attention import attention_matrix_export
from .autodiff import Tape
from .checkpoint import Checkpoint
from .config import ModelConfig
from .data import Instance, Vocabs, build_vocabs, load_pretrained
from .errors import NumericalError, UsageError
from .head import ClampCounter, loss as objective
from .metrics import Scores, metrics
from .model import Batch, EncodedInstance, ModelParams, collate, encode_instance, forward
from .synthetic import entity_distance

log = logging.getLogger(__name__)

LENGTH_BUCKETS = [(0, 25), (25, 50), (50, math.inf)]
DISTANCE_BUCKETS = [(0, 10), (10, 15), (15, 20), (20, 25), (25, 30), (30, 35), (35, math.inf)]


def bucket_label(lo: float, hi: float) -> str:
    return f"({lo},{'inf' if hi == math.inf else hi}]"


def find_bucket(value: float, buckets) -> tuple[float, float]:
    for lo, hi in buckets:
        if lo < value <= hi:
            return lo, hi
    raise ValueError(f"{value} falls outside every bucket")


def epoch_lr(config: ModelConfig, epoch: int) -> float:
    """Learning rate used during 0-based ``epoch`` under the per-epoch schedule."""
    return config.lr * config.decay ** epoch


def batches(items: Sequence[EncodedInstance], size: int, order: Sequence[int] | None = None,
            position_clip: int = 9) -> list[Batch]:
    order = range(len(items)) if order is None else order
    idx = list(order)
    return [collate([items[i] for i in idx[k:k + size]], position_clip) for k in range(0, len(idx), size)]


def clip_gradients(params: ModelParams, max_norm: float) -> float:
    grads = [t.grad for t in params.tensors.values() if t.grad is not None]
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log_lines: list[str] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    dev_scores: list[float] = field(default_factory=list)
    final_params: ModelParams | None = None


def encode_corpus(instances: Sequence[Instance], vocabs: Vocabs, config: ModelConfig) -> list[EncodedInstance]:
    return [encode_instance(inst, vocabs, config) for inst in instances]


def check_labels(instances: Sequence[Instance], vocabs: Vocabs) -> None:
    unknown = sorted({i.relation for i in instances} - set(vocabs.relations))
    if unknown:
        raise UsageError(f"corpus uses labels unknown to the model: {', '.join(unknown)}")


def train(
    config: ModelConfig,
    train_corpus: Sequence[Instance],
    dev_corpus: Sequence[Instance] | None = None,
    vectors: str | Path | None = None,
    metric: str = "micro",
    log_path: str | Path | None = None,
    extra_relations: Sequence[str] = (),
    on_epoch: Callable[[int, float, float], bool | None] | None = None,
) -> TrainResult:
    """SGD with gradient clipping and per-epoch (or on-plateau) learning-rate decay.

    The returned checkpoint holds the parameters from the epoch with the best
    dev score (metric ``micro``/``macro`` F1 or ``accuracy``). Without a dev
    corpus the last epoch is kept. ``on_epoch(epoch, loss, dev_score)`` runs
    after every epoch; a truthy return value ends training early.
    """
    if not train_corpus:
        raise UsageError("training corpus is empty")
    rng = np.random.default_rng(config.seed)
    vocabs = build_vocabs(train_corpus, config.negative_label,
                          extra_relations=[*extra_relations, *(i.relation for i in dev_corpus or [])])
    word_table = None
    if vectors is not None:
        word_table, coverage = load_pretrained(vectors, vocabs.word, config.d_word, rng)
        log.info("pretrained vectors cover %d/%d words", coverage.found, coverage.total)
    params = ModelParams.init(config, vocabs, rng, word_table)
    train_items = encode_corpus(train_corpus, vocabs, config)
    dev_items = encode_corpus(dev_corpus, vocabs, config) if dev_corpus else None

    result = TrainResult(checkpoint=None)  # type: ignore[arg-type]
    best_score, best_epoch, best_state = -1.0, -1, None
    lr = config.lr
    stale = 0
    counter = ClampCounter()
    velocity: dict[str, np.ndarray] = {}
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(config.epochs):
            if config.schedule == "epoch":
                lr = epoch_lr(config, epoch)
            order = rng.permutation(len(train_items))
            total, seen = 0.0, 0
            for b_idx, batch in enumerate(batches(train_items, config.batch_size, order, config.position_clip)):
                params.zero_grad()
                with Tape() as tape:
                    out = forward(params, batch, config, training=True, rng=rng)
                    J = objective(out.probs, batch.labels, params.tensors, config.beta, counter)
                if not np.isfinite(J.data):
                    raise NumericalError(f"non-finite loss at epoch {epoch} batch {b_idx}")
                tape.backward(J)
                grad_max = max((float(np.abs(t.grad).max()) for t in params.tensors.values() if t.grad is not None),
                               default=0.0)
                if not np.isfinite(grad_max):
                    raise NumericalError(f"non-finite gradient at epoch {epoch} batch {b_idx} (max |grad| {grad_max})")
                clip_gradients(params, config.grad_clip)
                for name, t in params.tensors.items():
                    if t.grad is None:
                        continue
                    step = t.grad
                    if config.momentum:
                        v = velocity.get(name)
                        step = velocity[name] = step if v is None else config.momentum * v + step
                    t.data -= lr * step
                total += float(J.data) * batch.size
                seen += batch.size
            epoch_loss = total / seen
            if dev_items:
                dev = evaluate_items(params, dev_items, config, vocabs)
                score = _pick(dev, metric)
            else:
                score = float("nan")
            line = f"epoch={epoch + 1} loss={epoch_loss:.6f} dev_f1={score:.6f} lr={lr:.6g}"
            log.info(line)
            result.log_lines.append(line)
            result.losses.append(epoch_loss)
            result.dev_scores.append(score)
            if log_fh:
                log_fh.write(line + "\n")
            stop = bool(on_epoch(epoch, epoch_loss, score)) if on_epoch else False
            improved = not dev_items or score > best_score
            if improved:
                best_score, best_epoch = score, epoch
                best_state = _snapshot(params)
                stale = 0
            else:
                stale += 1
            if config.schedule == "plateau" and stale >= config.plateau_patience:
                lr *= config.decay
                stale = 0
            if stop:
                log.info("stopping after epoch %d on request", epoch + 1)
                break
    finally:
        if log_fh:
            log_fh.close()

    final_params = params
    best_params = _restore(best_state)
    result.final_params = final_params
    result.checkpoint = Checkpoint(
        config=config,
        vocabs=vocabs,
        params=best_params,
        epoch=best_epoch + 1,
        best_metric=best_score if dev_items else float("nan"),
        rng_state=rng.bit_generator.state,
        extra={"clamped_probabilities": counter.count},
    )
    return result


def _pick(scores: Scores, metric: str) -> float:
    return scores.accuracy if metric == "accuracy" else scores.f1


def _snapshot(params: ModelParams) -> ModelParams:
    return copy.deepcopy(params)


def _restore(state: ModelParams) -> ModelParams:
    return state


# ---------------------------------------------------------------- inference


def predict_items(params: ModelParams, items: Sequence[EncodedInstance], config: ModelConfig,
                  batch_size: int = 100, keep_outputs: bool = False):
    """Inference-mode probabilities (N, labels); optionally the per-batch forward outputs."""
    probs, outs = [], []
    for batch in batches(items, batch_size, position_clip=config.position_clip):
        out = forward(params, batch, config, training=False)
        probs.append(out.probs.data)
        if keep_outputs:
            outs.append((batch, out))
    P = np.concatenate(probs, axis=0) if probs else np.zeros((0, 0))
    return (P, outs) if keep_outputs else P


def evaluate_items(params, items, config, vocabs, scheme: str = "micro") -> Scores:
    P = predict_items(params, items, config)
    pred = P.argmax(axis=1)
    gold = np.array([e.label for e in items])
    return metrics(list(pred), list(gold), scheme, vocabs.negative_id)


@dataclass
class EvalReport:
    overall: Scores
    by_length: dict[str, Scores | None]
    by_distance: dict[str, Scores | None]
    predictions: list[str]
    probabilities: list[float]

    def rows(self) -> list[dict]:
        out = [{"group": "overall", "bucket": "all", **_score_dict(self.overall)}]
        for group, table in (("length", self.by_length), ("distance", self.by_distance)):
            for bucket, s in table.items():
                row = {"group": group, "bucket": bucket}
                row.update(_score_dict(s) if s else {"precision": None, "recall": None, "f1": None,
                                                     "accuracy": None, "tp": 0, "fp": 0, "fn": 0, "support": 0})
                out.append(row)
        return out

    def table(self) -> str:
        lines = [f"{'group':<10}{'bucket':<12}{'n':>6}{'P':>9}{'R':>9}{'F1':>9}{'acc':>9}"]
        for r in self.rows():
            if r["support"] == 0:
                lines.append(f"{r['group']:<10}{r['bucket']:<12}{0:>6}{'-':>9}{'-':>9}{'-':>9}{'-':>9}")
            else:
                lines.append(f"{r['group']:<10}{r['bucket']:<12}{r['support']:>6}{r['precision']:>9.4f}"
                             f"{r['recall']:>9.4f}{r['f1']:>9.4f}{r['accuracy']:>9.4f}")
        return "\n".join(lines)


def _score_dict(s: Scores) -> dict:
    return {"precision": s.precision, "recall": s.recall, "f1": s.f1, "accuracy": s.accuracy,
            "tp": s.tp, "fp": s.fp, "fn": s.fn, "support": s.support}


def evaluate(checkpoint: Checkpoint, corpus: Sequence[Instance], scheme: str = "micro") -> EvalReport:
    check_labels(corpus, checkpoint.vocabs)
    cfg, vocabs = checkpoint.config, checkpoint.vocabs
    items = encode_corpus(corpus, vocabs, cfg)
    P = predict_items(checkpoint.params, items, cfg)
    pred = [vocabs.relations[i] for i in P.argmax(axis=1)]
    gold = [i.relation for i in corpus]
    neg = vocabs.negative_label
    overall = metrics(pred, gold, scheme, neg)

    def breakdown(key, buckets):
        table = {}
        for lo, hi in buckets:
            sel = [k for k, inst in enumerate(corpus) if lo < key(inst) <= hi]
            table[bucket_label(lo, hi)] = (
                metrics([pred[k] for k in sel], [gold[k] for k in sel], scheme, neg) if sel else None
            )
        return table

    return EvalReport(
        overall=overall,
        by_length=breakdown(lambda i: i.n, LENGTH_BUCKETS),
        by_distance=breakdown(entity_distance, DISTANCE_BUCKETS),
        predictions=pred,
        probabilities=[float(P[k].max()) for k in range(len(corpus))],
    )


def predict(checkpoint: Checkpoint, corpus: Sequence[Instance],
            export_attention: str | Path | None = None) -> list[tuple[str, str, float]]:
    """(instance id, predicted label, probability) per instance; optionally write
    each instance's per-head attention matrices under ``export_attention``."""
    cfg, vocabs = checkpoint.config, checkpoint.vocabs
    items = encode_corpus(corpus, vocabs, cfg)
    P, outs = predict_items(checkpoint.params, items, cfg, keep_outputs=True)
    if export_attention is not None:
        for batch, out in outs:
            for b, item in enumerate(batch.items):
                heads = [type(a)(a.data[b]) for a in out.attentions]
                attention_matrix_export(heads, export_attention, _safe_name(item.inst.id), item.inst.n)
    return [(inst.id, vocabs.relations[int(P[k].argmax())], float(P[k].max())) for k, inst in enumerate(corpus)]


def _safe_name(s: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in s) or "instance"


def format_predictions(rows) -> str:
    return "".join(f"{i}\t{label}\t{p:.6f}\n" for i, label, p in rows)


# ---------------------------------------------------------------- data-size study


def nested_subsets(n: int, fractions: Sequence[float], seed: int) -> dict[float, list[int]]:
    """Index subsets in corpus order; smaller fractions are prefixes of one permutation."""
    perm = np.random.default_rng([seed, 0xDA7A]).permutation(n)
    return {f: sorted(perm[: int(round(f * n))].tolist()) for f in fractions}


def data_size_study(
    config: ModelConfig,
    train_corpus: Sequence[Instance],
    dev_corpus: Sequence[Instance],
    fractions: Sequence[float] = (0.2, 0.4, 0.6, 0.8, 1.0),
    metric: str = "micro",
) -> list[tuple[float, int, float]]:
    """(fraction, subset size, best dev score) for each fraction that covers every label."""
    labels = {i.relation for i in train_corpus}
    rows = []
    for f, idx in nested_subsets(len(train_corpus), fractions, config.seed).items():
        subset = [train_corpus[i] for i in idx]
        missing = labels - {i.relation for i in subset}
        if missing:
            log.warning("fraction %.2f lacks label(s) %s; skipped", f, ", ".join(sorted(missing)))
            continue
        res = train(config, subset, dev_corpus, metric=metric, extra_relations=sorted(labels))
        rows.append((f, len(subset), res.checkpoint.best_metric))
    return rows


def format_curve(rows) -> str:
    return "fraction\tsize\tdev_metric\n" + "".join(f"{f:.2f}\t{n}\t{s:.6f}\n" for f, n, s in rows)
