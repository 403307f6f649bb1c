"""Command-line entry point: train, eval, grid, parse-dump and sigtest.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from rnsent.analysis import dump_trees
from rnsent.data import (
    Vocabulary,
    attach_heads,
    load_pretrained_embeddings,
    read_conllu_heads,
    read_pair_tsv,
    read_single_sentence_tsv,
)
from rnsent.errors import DataFormatError, DomainError, NumericError
from rnsent.model import RelationNetModel
from rnsent.sigtest import approx_randomization_test, correctness
from rnsent.tasks import LabelSet, read_predictions, write_predictions
from rnsent.training import Datasets, TrainConfig, evaluate_full, grid_search, predict, seed_streams, train

log = logging.getLogger("rnsent")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _is_pair_file(path) -> bool:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                return line.rstrip("\r\n ").count("\t") == 2
    return False


def read_corpus(path, labels=None):
    """Examples from a TSV file plus heads from a sibling ``.conllu`` file when present."""
    path = Path(path)
    pair = _is_pair_file(path)
    examples = (read_pair_tsv if pair else read_single_sentence_tsv)(path, labels)
    conllu = path.with_suffix(".conllu")
    if conllu.exists():
        attach_heads(examples, read_conllu_heads(conllu))
    second = path.with_suffix(".2.conllu")
    if pair and second.exists():
        attach_heads(examples, read_conllu_heads(second), second=True)
    return examples


def load_datasets(config: TrainConfig, data_dir) -> Datasets:
    data_dir = Path(data_dir)
    train_path = data_dir / "train.tsv"
    if not train_path.exists():
        raise DataFormatError("missing train.tsv", path=data_dir)
    train_ex = read_corpus(train_path)
    labels = LabelSet(sorted({e.label for e in train_ex}))
    test_ex = read_corpus(data_dir / "test.tsv", labels) if (data_dir / "test.tsv").exists() else None
    if (data_dir / "dev.tsv").exists():
        data = Datasets(train_ex, read_corpus(data_dir / "dev.tsv", labels), labels, test_ex)
    else:
        data = Datasets.from_train(train_ex, labels, config.seed, config.dev_size, test_ex)
    if config.embeddings:
        emb_path = Path(config.embeddings)
        if not emb_path.is_absolute():
            emb_path = data_dir / emb_path
        sents = [e.tokens for e in data.train] + [e.tokens2 for e in data.train if e.is_pair]
        vocab = Vocabulary.build(sents, min_freq=config.min_freq, lowercase=config.lowercase)
        table = load_pretrained_embeddings(
            emb_path, vocab, config.encoder.embedding_dim, rng=seed_streams(config.seed)["init"]
        )
        data.vocab, data.embeddings = vocab, table.vectors
    return data


def load_model(path):
    model, meta = RelationNetModel.load(path)
    if "vocab" not in meta or "labels" not in meta:
        raise DataFormatError("checkpoint metadata lacks vocabulary or labels", path=str(path) + ".json")
    model.vocab = Vocabulary.from_dict(meta["vocab"])
    model.labels = LabelSet(meta["labels"])
    return model


def _write_report(report, out_dir: Path, stem="report"):
    (out_dir / f"{stem}.json").write_text(report.to_json())
    (out_dir / f"{stem}.txt").write_text(report.table() + "\n")


def cmd_train(args):
    config = TrainConfig.from_json(args.config)
    data = load_datasets(config, args.data_dir)
    out = Path(args.out)
    report, model = train(config, data, out)
    _write_report(report, out)
    if data.test:
        probs = predict(model, data.test, model.vocab, data.labels)
        write_predictions(out / "test_predictions.tsv", [e.id for e in data.test],
                          [e.label for e in data.test], probs, data.labels)
    print(report.table())
    return EXIT_OK


def cmd_eval(args):
    model = load_model(args.checkpoint)
    examples = read_corpus(args.data, model.labels)
    acc, nll = evaluate_full(model, examples, model.vocab, model.labels)
    if args.out:
        probs = predict(model, examples, model.vocab, model.labels)
        write_predictions(args.out, [e.id for e in examples], [e.label for e in examples], probs, model.labels)
    print(json.dumps({"accuracy": acc, "loss": nll, "examples": len(examples)}))
    return EXIT_OK


def cmd_grid(args):
    config = TrainConfig.from_json(args.config)
    data = load_datasets(config, args.data_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    best, reports, index = grid_search(config, data, out)
    summary = {
        "best_index": index,
        "best_config": best.to_dict(),
        "reports": [r.to_dict() for r in reports],
    }
    (out / "grid.json").write_text(json.dumps(summary, indent=2))
    rows = [("point", "best_epoch", "dev_acc", "test_acc")]
    for i, r in enumerate(reports):
        test = "n/a" if r.test_accuracy is None else f"{r.test_accuracy:.4f}"
        rows.append((f"{i}{' *' if i == index else ''}", str(r.best_epoch), f"{r.best_dev_accuracy:.4f}", test))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    table = "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)
    (out / "grid.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def _read_sentences(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            text = line.split("\t", 1)[1] if "\t" in line else line
            toks = text.split()
            if not toks:
                raise DataFormatError("empty sentence", path, lineno)
            out.append(toks)
    return out


def cmd_parse_dump(args):
    model = load_model(args.checkpoint)
    sentences = _read_sentences(args.input)
    marg = args.marginals or str(args.out) + ".marginals.tsv"
    dump_trees(model, sentences, model.vocab, args.out, marg)
    print(f"wrote {len(sentences)} trees to {args.out} and marginals to {marg}")
    return EXIT_OK


def cmd_sigtest(args):
    ids_a, gold_a, pred_a, _ = read_predictions(args.a)
    ids_b, gold_b, pred_b, _ = read_predictions(args.b)
    if ids_a != ids_b or gold_a != gold_b:
        raise DataFormatError("prediction files cover different examples or gold labels")
    a, b = correctness(pred_a, gold_a), correctness(pred_b, gold_b)
    p = approx_randomization_test(a, b, R=args.R, seed=args.seed)
    print(json.dumps({"accuracy_a": a.mean(), "accuracy_b": b.mean(), "p_value": p, "R": args.R}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rnsent", description="Relation-network sentence encoders with latent trees.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a TSV corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write per-example predictions here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="grid search over the config's grid axes")
    p.add_argument("--config", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("parse-dump", help="dump CLE trees and marginals from a latent-tree model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--marginals")
    p.set_defaults(func=cmd_parse_dump)

    p = sub.add_parser("sigtest", help="approximate randomisation test on two prediction files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--R", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sigtest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (NumericError, DomainError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataFormatError, OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
