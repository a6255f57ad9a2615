#!/usr/bin/env python3
"""Generate synthetic train/valid/test splits for experiments.

Two generators are available: `markov` produces word streams with local
statistical structure (a model can learn it but not memorize it), `burst`
produces topic words that repeat within short spans, which is the pattern
cache decoding exploits.

    python3 scripts/make_corpus.py --kind markov --tokens 60000 --out data/markov
    python3 scripts/make_corpus.py --kind burst --tokens 12000 --out data/burst
"""
import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from awdlm.synthetic import burst_text, markov_text, write_splits


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--kind", choices=("markov", "burst"), default="markov")
    ap.add_argument("--tokens", type=int, default=60000)
    ap.add_argument("--vocab", type=int, default=400,
                    help="content vocabulary size (markov only)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--valid-frac", type=float, default=0.1)
    ap.add_argument("--test-frac", type=float, default=0.1)
    args = ap.parse_args()

    if args.kind == "markov":
        text = markov_text(args.tokens, vocab_size=args.vocab, seed=args.seed)
    else:
        text = burst_text(args.tokens, seed=args.seed)
    paths = write_splits(args.out, text, valid_frac=args.valid_frac,
                         test_frac=args.test_frac)
    for p in paths:
        n = len(open(p, encoding="utf-8").read().split())
        print(f"{p}\t{n} tokens")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
