#!/usr/bin/env python3
"""Encoder-size ablation: train every preset briefly, report sizes and timings."""

import argparse
import json
from pathlib import Path

import torch

from tage.generator import generate_synthetic_corpus
from tage.training import encoder_ablation


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=16, help="synthetic corpus size")
    parser.add_argument("--epochs", type=int, default=2)
    parser.add_argument("--seed", type=int, default=13)
    parser.add_argument("--presets", default="mini,small,medium,base,large")
    parser.add_argument("--out", help="optional JSON output path")
    args = parser.parse_args()

    torch.set_num_threads(max(torch.get_num_threads(), 1))
    corpus = generate_synthetic_corpus(args.seed, args.size)
    print(f"{'preset':10s}{'params':>14s}{'s/epoch':>10s}{'loss':>10s}{'F1':>8s}")

    def report(row):
        print(f"{row.preset:10s}{row.parameters:14,d}{row.seconds_per_epoch:10.1f}"
              f"{row.final_loss:10.3f}{row.dev_f1_with_grounding:8.3f}")

    rows = encoder_ablation(
        corpus, presets=tuple(args.presets.split(",")), epochs=args.epochs, seed=args.seed, log_fn=report
    )
    if args.out:
        Path(args.out).write_text(json.dumps([r.as_dict() for r in rows], indent=2) + "\n")


if __name__ == "__main__":
    main()
