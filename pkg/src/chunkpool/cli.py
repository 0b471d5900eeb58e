"""Command-line entry point: ``chunkpool {gen-corpus,train,eval,predict,grad-check}``.

Exit codes: 0 success, 1 verification failure, 2 user error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import decide
from .config import load_config
from .data import generate_synthetic_corpus, load_jsonl_corpus, load_unlabeled, synthetic_vocab, write_jsonl_corpus
from .errors import ChunkPoolError, NumericError
from .evaluation import evaluate
from .model import DocumentClassifier
from .tokenizer import load_vocab
from .training import fit
from .verification import format_table, run_grad_checks

EXIT_OK, EXIT_VERIFY, EXIT_USER, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("chunkpool")


def _config(args):
    cfg = load_config(args.config)
    return cfg.with_seed(args.seed) if getattr(args, "seed", None) is not None else cfg


def cmd_gen_corpus(args) -> int:
    cfg = _config(args)
    if cfg.synthetic is None:
        print("error: config has no synthetic section", file=sys.stderr)
        return EXIT_USER
    spec = cfg.synthetic
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    vocab = synthetic_vocab(spec)
    train, test = generate_synthetic_corpus(spec, vocab, cfg.chunking.content_len)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(cfg.vocab_path)
    write_jsonl_corpus(train, cfg.train_path, cfg.labels)
    write_jsonl_corpus(test, cfg.test_path, cfg.labels)
    print(f"wrote {len(train)} train and {len(test)} test documents, vocabulary of {len(vocab)} entries, "
          f"to {cfg.output_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    vocab = load_vocab(cfg.vocab_path)
    corpus = load_jsonl_corpus(cfg.train_path, cfg.labels)
    model = DocumentClassifier.build(cfg.model_config(len(vocab)), vocab, cfg.train.seed)
    history = fit(model, corpus, cfg.train,
                  on_epoch=lambda e, loss: log.info("epoch %d/%d mean loss %.6f", e, cfg.train.epochs, loss))
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.checkpoint) if args.checkpoint else cfg.output_dir / "model.ckpt"
    save_checkpoint(model, ckpt)
    (cfg.output_dir / "train_log.csv").write_text(history.to_csv(), encoding="utf-8")
    print(f"trained {history.steps} steps over {cfg.train.epochs} epochs; "
          f"final mean loss {history.epoch_losses[-1]:.6f}; checkpoint {ckpt}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    corpus = load_jsonl_corpus(args.corpus, model.config.labels)
    report = evaluate(model, corpus, args.threshold)
    text = report.to_json()
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name("report.json")
    out.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    docs = load_unlabeled(args.input)
    chunked = [model.prepare(doc.text) for doc in docs]
    probs = model.predict_proba(chunked)
    space, theta = model.config.labels, model.config.classifier.threshold
    lines = []
    for doc, p in zip(docs, probs):
        rec = {"id": doc.id, "labels": list(decide(p, space, theta)),
               "probabilities": {name: float(v) for name, v in zip(space.names, p)}}
        lines.append(json.dumps(rec) + "\n")
    if args.output:
        Path(args.output).write_text("".join(lines), encoding="utf-8")
    else:
        sys.stdout.write("".join(lines))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    results = run_grad_checks(args.seed or 0)
    print(format_table(results))
    failed = [r.component for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_VERIFY
    print(f"all {len(results)} checks below tolerance")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chunkpool", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write a synthetic corpus and vocabulary")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train a model and write a checkpoint plus loss log")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint", help="checkpoint path (default: <output_dir>/model.ckpt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="micro-F1 report for a labelled corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", help="report path (default: report.json beside the checkpoint)")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="label unlabelled JSONL documents")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="output JSONL path (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    p.add_argument("config", nargs="?", help="accepted for symmetry; the suite uses built-in tiny models")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ChunkPoolError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
