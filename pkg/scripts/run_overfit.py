#!/usr/bin/env python3
"""Overfit sanity experiment: memorize a small synthetic corpus.

Trains on a seeded synthetic corpus used as both train and dev with the
standard hyperparameters (batch 16, AdamW, lr 1e-4) and reports how fast
the combined with-grounding strict F1 climbs.  A healthy build crosses
0.95 well before epoch 200 on the 32-instruction default.
"""

import argparse
import time

from tage.encoder import EncoderConfig
from tage.generator import generate_synthetic_corpus
from tage.model import ModelConfig
from tage.training import TrainingConfig, train


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=101)
    parser.add_argument("--epochs", type=int, default=200)
    parser.add_argument("--preset", default="mini")
    parser.add_argument("--learning-rate", type=float, default=1e-4)
    parser.add_argument("--checkpoint", help="optional checkpoint output path")
    args = parser.parse_args()

    corpus = generate_synthetic_corpus(args.seed, args.size)
    config = TrainingConfig(
        model=ModelConfig(encoder=EncoderConfig(preset=args.preset)),
        learning_rate=args.learning_rate,
        max_epochs=args.epochs,
        early_stop_patience=min(20, args.epochs),
        seed=args.seed,
    )
    started = time.perf_counter()
    crossed = {}

    def log(record):
        for bar in (0.5, 0.8, 0.95, 1.0):
            if record.dev_f1_with_grounding >= bar and bar not in crossed:
                crossed[bar] = record.epoch
        print(f"epoch {record.epoch:4d}  loss {record.total_loss:8.4f}  F1 {record.dev_f1_with_grounding:.4f}")

    result = train(config, corpus, corpus, checkpoint_path=args.checkpoint, log_fn=log)
    minutes = (time.perf_counter() - started) / 60
    print(f"\nbest F1 {result.best_dev_f1:.4f} at epoch {result.best_epoch} in {minutes:.1f} min")
    for bar, epoch in sorted(crossed.items()):
        print(f"  crossed {bar:.2f} at epoch {epoch}")


if __name__ == "__main__":
    main()
