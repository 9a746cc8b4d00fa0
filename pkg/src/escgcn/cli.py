"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import Checkpoint
from .config import ModelConfig, parse_overrides
from .data import parse_corpus, write_corpus
from .errors import DataError, EscGcnError, UsageError
from .graph import DepTree, adjacency, format_graph, prune

log = logging.getLogger("escgcn")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _k(raw: str):
    if raw.lower() in ("full", "none"):
        return None
    try:
        k = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--k expects an integer or 'full', got {raw!r}") from None
    if k < 0:
        raise argparse.ArgumentTypeError("--k must be >= 0")
    return k


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="escgcn", description="Relation extraction with entity-aware self-attention and graph convolution.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def model_opts(sp):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE", help="config overrides")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--k", type=_k, default=argparse.SUPPRESS, help="pruning distance (integer or 'full')")
        sp.add_argument("--ablate", default="", help="comma-separated ablation flags")
        sp.add_argument("--vectors", help="pretrained word vectors (token v1 ... vd)")

    def data_opts(sp, dev=True):
        sp.add_argument("--train", help="training corpus")
        if dev:
            sp.add_argument("--dev", help="development corpus")
        sp.add_argument("--synthetic-config", help="generate train/dev from a synthetic key=value config")

    t = sub.add_parser("train", help="train a model")
    model_opts(t)
    data_opts(t)
    t.add_argument("--checkpoint", required=True, help="output checkpoint file")
    t.add_argument("--log", help="write the per-epoch log here as well")
    t.add_argument("--metric", choices=["micro", "macro", "accuracy"], default="micro")

    e = sub.add_parser("eval", help="evaluate a checkpoint with length/distance breakdowns")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--scheme", choices=["micro", "macro"], default="micro")
    e.add_argument("--json", action="store_true", help="machine-readable rows instead of a table")

    pr = sub.add_parser("predict", help="label instances")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--test", required=True)
    pr.add_argument("--export-attention", metavar="DIR", help="write per-head attention matrices")
    pr.add_argument("--output", help="prediction file (default stdout)")

    g = sub.add_parser("graph", help="dependency-graph utilities")
    gsub = g.add_subparsers(dest="graph_command", parser_class=_Parser)
    gd = gsub.add_parser("dump", help="print pruned graphs and adjacency")
    gd.add_argument("--test", required=True, help="corpus to read")
    gd.add_argument("--k", type=_k, default=1)
    gd.add_argument("--id", help="only this instance id")

    gc = sub.add_parser("gradcheck", help="finite-difference check of the whole model")
    gc.add_argument("--count", type=int, default=20, help="number of random tiny configs")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tolerance", type=float, default=1e-4)

    d = sub.add_parser("datasize", help="dev metric as a function of training-set fraction")
    model_opts(d)
    data_opts(d)
    d.add_argument("--fractions", default="0.2,0.4,0.6,0.8,1.0")
    d.add_argument("--metric", choices=["micro", "macro", "accuracy"], default="micro")
    d.add_argument("--output", help="curve file (default stdout)")

    s = sub.add_parser("synth", help="write a synthetic corpus")
    s.add_argument("--synthetic-config", help="key=value synthetic config (preset=<name> allowed)")
    s.add_argument("--preset", default="sdp")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out", required=True)

    sv = sub.add_parser("serve", help="run the HTTP service")
    sv.add_argument("--checkpoint", required=True)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8000)
    return p


# ---------------------------------------------------------------- helpers


def load_config(args) -> ModelConfig:
    cfg = ModelConfig.load(args.config) if getattr(args, "config", None) else ModelConfig()
    overrides = parse_overrides(list(args.set or []))
    if args.seed is not None:
        overrides["seed"] = args.seed
    if hasattr(args, "k"):
        overrides["prune_k"] = args.k
    cfg = cfg.replace(**overrides)
    flags = [f.strip() for f in args.ablate.split(",") if f.strip()]
    return cfg.with_ablations(flags) if flags else cfg


def read_corpus(path: str | None, what: str):
    if not path:
        raise UsageError(f"missing --{what}")
    if not Path(path).exists():
        raise DataError(f"{what} corpus not found: {path}")
    return parse_corpus(path)


def load_corpora(args, need_dev: bool = True):
    if args.synthetic_config:
        from .synthetic import generate_synthetic, load_synthetic_config

        text = Path(args.synthetic_config).read_text(encoding="utf-8")
        cfg = load_synthetic_config(text)
        seed = args.seed if args.seed is not None else 1
        train = generate_synthetic(cfg, seed)
        dev = generate_synthetic(cfg.__class__(**{**cfg.__dict__, "n_instances": max(1, cfg.n_instances // 2)}),
                                 seed + 1000)
        return train, dev
    train = read_corpus(args.train, "train")
    dev = read_corpus(args.dev, "dev") if (need_dev and args.dev) else None
    return train, dev


def load_checkpoint_arg(path: str) -> Checkpoint:
    if not Path(path).exists():
        raise DataError(f"checkpoint not found: {path}")
    return Checkpoint.load(path)


def _write(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    from .trainer import train

    cfg = load_config(args)
    train_c, dev_c = load_corpora(args)
    res = train(cfg, train_c, dev_c, vectors=args.vectors, metric=args.metric, log_path=args.log)
    res.checkpoint.save(args.checkpoint)
    print(f"saved {args.checkpoint} (epoch {res.checkpoint.epoch}, dev {res.checkpoint.best_metric:.6f})")
    return 0


def cmd_eval(args) -> int:
    from .trainer import evaluate

    ckpt = load_checkpoint_arg(args.checkpoint)
    report = evaluate(ckpt, read_corpus(args.test, "test"), args.scheme)
    if args.json:
        print(json.dumps(report.rows(), indent=1))
    else:
        print(report.table())
    return 0


def cmd_predict(args) -> int:
    from .trainer import format_predictions, predict

    ckpt = load_checkpoint_arg(args.checkpoint)
    rows = predict(ckpt, read_corpus(args.test, "test"), args.export_attention)
    _write(format_predictions(rows), args.output)
    return 0


def cmd_graph(args) -> int:
    if args.graph_command != "dump":
        raise UsageError("graph needs a subcommand: dump")
    insts = read_corpus(args.test, "test")
    if args.id is not None:
        insts = [i for i in insts if i.id == args.id]
        if not insts:
            raise DataError(f"no instance with id {args.id!r}")
    for inst in insts:
        pg = prune(DepTree(inst.head), inst.spans(), args.k)
        print(f"# id={inst.id}")
        print(format_graph(pg, adjacency(pg, inst.n)))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import random_gradient_checks

    if args.count < 1:
        raise UsageError("--count must be positive")
    worst = 0.0
    for info, err in random_gradient_checks(args.count, args.seed):
        worst = max(worst, err)
        print(f"{'ok  ' if err < args.tolerance else 'FAIL'} rel_err={err:.3e} {json.dumps(info)}")
    print(f"max_rel_err={worst:.3e}")
    return 0 if worst < args.tolerance else 3


def cmd_datasize(args) -> int:
    from .trainer import data_size_study, format_curve

    cfg = load_config(args)
    train_c, dev_c = load_corpora(args)
    if dev_c is None:
        raise UsageError("datasize needs a dev corpus")
    try:
        fractions = [float(f) for f in args.fractions.split(",") if f.strip()]
    except ValueError:
        raise UsageError(f"bad --fractions {args.fractions!r}") from None
    if not fractions or any(not 0 < f <= 1 for f in fractions):
        raise UsageError("fractions must lie in (0, 1]")
    _write(format_curve(data_size_study(cfg, train_c, dev_c, fractions, args.metric)), args.output)
    return 0


def cmd_synth(args) -> int:
    from .synthetic import generate_synthetic, load_synthetic_config, preset

    if args.synthetic_config:
        cfg = load_synthetic_config(Path(args.synthetic_config).read_text(encoding="utf-8"))
    else:
        cfg = preset(args.preset)
    write_corpus(generate_synthetic(cfg, args.seed), args.out)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(args.checkpoint), host=args.host, port=args.port)
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "graph": cmd_graph,
    "gradcheck": cmd_gradcheck,
    "datasize": cmd_datasize,
    "synth": cmd_synth,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(message)s", stream=sys.stderr)
        if not args.command:
            parser.print_usage(sys.stderr)
            return 1
        return COMMANDS[args.command](args)
    except EscGcnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
