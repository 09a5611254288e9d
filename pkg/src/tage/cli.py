"""Operator entry points: train, eval, predict, generate, stats.

Every command reads an optional JSON config file (--config) whose keys
match the long flag names; explicit flags override the file.  Runs that
write outputs also write a ``manifest.json`` beside them (merged config,
seed, code and torch versions) so a run can be reproduced.

Exit codes: 0 success, 2 usage error, 3 missing file, 4 checkpoint or
vocabulary mismatch, 5 invalid data, 1 anything else.  Errors print one
machine-parsable line to stderr: ``tage: error code=<n> <type>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import torch

from . import __version__
from .corpus import CorpusFormatError, corpus_stats, load_corpus, save_corpus
from .decoder import DecodeLimits
from .encoder import EncoderConfig, TokenizationError
from .evaluation import score
from .generator import generate_synthetic_corpus
from .model import ModelConfig
from .pipeline import predict, predict_annotated, prediction_to_dict, prediction_to_instruction
from .training import CheckpointMismatchError, TrainingConfig, load_checkpoint, train
from .vocabulary import LabelVocabularies, VocabularyError, load_vocabularies, save_vocabularies

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CHECKPOINT_MISMATCH = 4
EXIT_BAD_DATA = 5
EXIT_OTHER = 1


DEFAULTS = {
    "train": {
        "seed": 13, "encoder_preset": "mini", "max_tasks": 8, "max_args": 8,
        "batch_size": 16, "learning_rate": 1e-4, "epochs": 100, "patience": 20, "quiet": False,
    },
    "generate": {"seed": 13, "size": 200, "splits": "0.8,0.1,0.1"},
    "stats": {"seed": 13},
    "predict": {"seed": 13, "max_args": 8},
    "eval": {"seed": 13},
}


def _merged_config(args: argparse.Namespace) -> dict:
    """defaults < config file < explicitly passed flags."""
    merged = dict(DEFAULTS[args.command])
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(str(path))
        merged.update(json.loads(path.read_text(encoding="utf-8")))
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        merged[key] = value
    return merged


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise ValueError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _write_manifest(out_dir: Path, command: str, config: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": {k: v for k, v in config.items() if not k.startswith("_")},
        "seed": config.get("seed"),
        "version": __version__,
        "torch": torch.__version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_vocab(cfg: dict) -> LabelVocabularies:
    labels = cfg.get("labels_config")
    if labels:
        return load_vocabularies(labels, cfg.get("objects_config"))
    return LabelVocabularies()


def _resolve_splits(corpus_arg: str, vocab: LabelVocabularies):
    """A directory with train/dev JSONL, or one file used for both splits."""
    path = Path(corpus_arg)
    if path.is_dir():
        train_path = path / "train.jsonl"
        if not train_path.exists():
            raise FileNotFoundError(str(train_path))
        train_set = load_corpus(train_path, vocab)
        dev_path = path / "dev.jsonl"
        dev_set = load_corpus(dev_path, vocab) if dev_path.exists() else train_set
        return train_set, dev_set
    if not path.exists():
        raise FileNotFoundError(str(path))
    data = load_corpus(path, vocab)
    return data, data


def _cmd_train(args) -> int:
    cfg = _merged_config(args)
    _require(cfg, "corpus")
    vocab = _load_vocab(cfg)
    train_set, dev_set = _resolve_splits(cfg["corpus"], vocab)
    out_dir = Path(cfg.get("out") or "runs/train")
    out_dir.mkdir(parents=True, exist_ok=True)
    model_cfg = ModelConfig(
        encoder=EncoderConfig(preset=cfg["encoder_preset"], dropout=cfg.get("dropout", 0.0),
                              freeze=cfg.get("freeze_encoder", False), pretrained=cfg.get("pretrained")),
        limits=DecodeLimits(cfg["max_tasks"], cfg["max_args"]),
    )
    train_cfg = TrainingConfig(
        model=model_cfg,
        batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
        weight_decay=cfg.get("weight_decay", 0.01),
        max_epochs=cfg["epochs"],
        early_stop_patience=min(cfg["patience"], cfg["epochs"]),
        seed=cfg["seed"],
        grad_clip=cfg.get("grad_clip"),
    )
    _write_manifest(out_dir, "train", cfg)
    quiet = cfg.get("quiet", False)

    def log(record):
        if not quiet:
            print(
                f"epoch {record.epoch}: loss {record.total_loss:.4f} "
                f"dev-F1 {record.dev_f1_with_grounding:.4f} ({record.seconds:.1f}s)"
            )

    result = train(
        train_cfg, train_set, dev_set, vocab,
        checkpoint_path=out_dir / "checkpoint.pt",
        log_path=out_dir / "train_log.jsonl",
        log_fn=log,
    )
    print(f"best dev F1 {result.best_dev_f1:.4f} at epoch {result.best_epoch}; checkpoint: {result.checkpoint_path}")
    return EXIT_OK


def _cmd_generate(args) -> int:
    cfg = _merged_config(args)
    out_dir = Path(cfg.get("out") or "data")
    out_dir.mkdir(parents=True, exist_ok=True)
    fractions = [float(x) for x in str(cfg["splits"]).split(",")]
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-6:
        raise ValueError(f"--splits must be three fractions summing to 1, got {cfg['splits']}")
    size = cfg["size"]
    corpus = generate_synthetic_corpus(cfg["seed"], size)
    n_train = round(size * fractions[0])
    n_dev = round(size * fractions[1])
    splits = {
        "train": corpus[:n_train],
        "dev": corpus[n_train : n_train + n_dev],
        "test": corpus[n_train + n_dev :],
    }
    for name, part in splits.items():
        for inst in part:
            inst.split_hint = name
        save_corpus(part, out_dir / f"{name}.jsonl")
    vocab = LabelVocabularies()
    save_vocabularies(vocab, out_dir / "labels.json", out_dir / "objects.json")
    stats = corpus_stats(corpus)
    (out_dir / "stats.json").write_text(json.dumps(stats.as_json_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out_dir / "stats.txt").write_text(stats.as_text() + "\n", encoding="utf-8")
    _write_manifest(out_dir, "generate", cfg)
    print(f"wrote {size} instructions to {out_dir} (train/dev/test = {[len(p) for p in splits.values()]})")
    return EXIT_OK


def _cmd_stats(args) -> int:
    cfg = _merged_config(args)
    _require(cfg, "corpus")
    path = Path(cfg["corpus"])
    if path.is_dir():
        corpus = []
        for name in ("train", "dev", "test"):
            part = path / f"{name}.jsonl"
            if part.exists():
                corpus.extend(load_corpus(part))
        if not corpus:
            raise FileNotFoundError(f"no train/dev/test JSONL under {path}")
    else:
        if not path.exists():
            raise FileNotFoundError(str(path))
        corpus = load_corpus(path)
    stats = corpus_stats(corpus)
    print(stats.as_text())
    if cfg.get("out"):
        out_dir = Path(cfg["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "stats.json").write_text(json.dumps(stats.as_json_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out_dir / "stats.txt").write_text(stats.as_text() + "\n", encoding="utf-8")
        _write_manifest(out_dir, "stats", cfg)
    return EXIT_OK


def _cmd_predict(args) -> int:
    cfg = _merged_config(args)
    _require(cfg, "checkpoint")
    loaded = load_checkpoint(cfg["checkpoint"])
    limits = DecodeLimits(cfg["max_tasks"], cfg["max_args"]) if cfg.get("max_tasks") else None
    if cfg.get("text"):
        result = predict(cfg["text"], loaded.model, limits)
        print(json.dumps(prediction_to_dict(result), indent=2))
        if cfg.get("out"):
            out = Path(cfg["out"])
            out.parent.mkdir(parents=True, exist_ok=True)
            save_corpus([prediction_to_instruction(result)], out)
            _write_manifest(out.parent, "predict", cfg)
        return EXIT_OK
    if not cfg.get("corpus"):
        raise ValueError("predict needs --text or --corpus")
    corpus = load_corpus(cfg["corpus"])
    predictions = predict_annotated(loaded.model, corpus, limits)
    records = [prediction_to_instruction(p) for p in predictions]
    if cfg.get("out"):
        out = Path(cfg["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        save_corpus(records, out)
        _write_manifest(out.parent, "predict", cfg)
        print(f"wrote {len(records)} predictions to {out}")
    else:
        for p in predictions:
            print(json.dumps(prediction_to_dict(p)))
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _merged_config(args)
    _require(cfg, "pred", "gold")
    for key in ("pred", "gold"):
        if not Path(cfg[key]).exists():
            raise FileNotFoundError(cfg[key])
    predictions = load_corpus(cfg["pred"])
    golds = load_corpus(cfg["gold"])
    report = score(predictions, golds)
    print(report.as_text())
    if cfg.get("out"):
        out_dir = Path(cfg["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(report.as_json_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out_dir / "report.txt").write_text(report.as_text() + "\n", encoding="utf-8")
        _write_manifest(out_dir, "eval", cfg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tage", description="Grounded-instruction parsing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its keys")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory or file")

    p = sub.add_parser("train", help="train a model on a corpus")
    common(p)
    p.add_argument("--corpus", help="corpus directory (train.jsonl[/dev.jsonl]) or a single JSONL file")
    p.add_argument("--encoder-preset", dest="encoder_preset", help="mini|small|medium|base|large")
    p.add_argument("--max-tasks", dest="max_tasks", type=int)
    p.add_argument("--max-args", dest="max_args", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--quiet", action="store_const", const=True)

    p = sub.add_parser("generate", help="generate a synthetic annotated corpus")
    common(p)
    p.add_argument("--size", type=int)
    p.add_argument("--splits", help="train,dev,test fractions")

    p = sub.add_parser("stats", help="report corpus statistics")
    common(p)
    p.add_argument("--corpus")

    p = sub.add_parser("predict", help="parse instruction text with a trained model")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--text", help="one instruction to parse")
    p.add_argument("--corpus", help="JSONL corpus to parse instead of --text")
    p.add_argument("--max-tasks", dest="max_tasks", type=int)
    p.add_argument("--max-args", dest="max_args", type=int)

    p = sub.add_parser("eval", help="score predictions against gold annotations")
    common(p)
    p.add_argument("--pred", help="predictions JSONL (corpus format)")
    p.add_argument("--gold", help="gold JSONL (corpus format)")
    return parser


_COMMANDS = {
    "train": _cmd_train,
    "generate": _cmd_generate,
    "stats": _cmd_stats,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
}

_ERROR_CODES = (
    (CheckpointMismatchError, EXIT_CHECKPOINT_MISMATCH),
    (FileNotFoundError, EXIT_MISSING_FILE),
    (CorpusFormatError, EXIT_BAD_DATA),
    (VocabularyError, EXIT_BAD_DATA),
    (TokenizationError, EXIT_BAD_DATA),
    (ValueError, EXIT_BAD_DATA),
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:
        code = EXIT_OTHER
        for exc_type, exc_code in _ERROR_CODES:
            if isinstance(exc, exc_type):
                code = exc_code
                break
        print(f"tage: error code={code} {type(exc).__name__}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
