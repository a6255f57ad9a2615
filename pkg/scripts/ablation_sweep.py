#!/usr/bin/env python3
"""Run every ablation on one corpus and print the comparison table.

Each row trains from scratch with exactly one ingredient disabled, fine-tunes
(unless fine-tuning itself is the ablated ingredient), and reports validation
and test perplexity of the deliverable weights.

    python3 scripts/ablation_sweep.py --data data/markov --profile tiny --epochs 20
"""
import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from awdlm.config import make_config
from awdlm.training import ABLATIONS, ablate, train, fine_tune, params_from_weights
from awdlm.training import evaluate_ids, load_split_tokens
from awdlm.corpus import build_vocab


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data", required=True)
    ap.add_argument("--profile", default="tiny")
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    overrides = dict(data_dir=args.data, seed=args.seed)
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    cfg = make_config(profile=args.profile, overrides=overrides)

    # baseline: full recipe including the fine-tuning pass
    base = train(cfg)
    ft = fine_tune(cfg, base.final_weights)
    baseline_weights = ft.final_weights
    params = params_from_weights(baseline_weights)
    tokens = load_split_tokens(cfg, "valid")
    vocab = build_vocab(load_split_tokens(cfg, "train"))
    valid = evaluate_ids(params, vocab.encode(tokens), cfg.eval_batch, cfg.bptt)
    print("ablation\tvalid_ppl\ttest_ppl")
    print(f"baseline\t{valid:.2f}\t-")

    for name in sorted(ABLATIONS):
        row = ablate(cfg, name)
        print(row.line())
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
