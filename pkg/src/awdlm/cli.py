"""Command-line entry points.

    awdlm train --data DIR --out DIR [--profile tiny] [flags]
    awdlm eval --ckpt run/final.ckpt --data DIR --split test
    awdlm finetune --ckpt run/final.ckpt --data DIR --out DIR
    awdlm cache-tune --ckpt run/final.ckpt --data DIR
    awdlm cache-eval --ckpt run/final.ckpt --data DIR --window 500 --lam 0.1 --theta 1.0
    awdlm ablate --name weight-dropping --data DIR --out DIR
    awdlm analyze-cache --ckpt run/final.ckpt --data DIR --window 500 --lam 0.1 \
        --theta 1.0 --report report.tsv

Flags override config-file values, which override the profile, which
overrides the defaults. Relative corpus paths resolve against --data or the
AWDLM_DATA environment variable.
"""
from __future__ import annotations

import argparse
import os
import sys

from . import cache as cache_mod
from . import training
from .checkpoint import load_checkpoint
from .config import PROFILES, RunConfig, dump_config, make_config
from .corpus import batchify, read_tokens


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", choices=sorted(PROFILES), default=None)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--data", default=None, help="directory holding the corpus files")
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--embed", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--clip", type=float, default=None)
    p.add_argument("--wdrop", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--nonmono", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--bptt", type=int, default=None)
    p.add_argument("--optimizer", choices=training.OPTIMIZERS, default=None)
    p.add_argument("--weight-decay", type=float, default=None, dest="weight_decay")
    p.add_argument("--dtype", choices=("float32", "float64"), default=None)


def _config_from_args(args) -> RunConfig:
    keys = ("layers", "hidden", "embed", "lr", "clip", "wdrop", "alpha", "beta",
            "nonmono", "seed", "epochs", "batch", "bptt", "optimizer",
            "weight_decay", "dtype")
    overrides = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    if args.data is not None:
        overrides["data_dir"] = args.data
    return make_config(profile=args.profile, config_file=args.config, overrides=overrides)


def _cache_grid(args) -> cache_mod.CacheGrid:
    def parse(csv, cast):
        return tuple(cast(x) for x in csv.split(",") if x.strip() != "")
    return cache_mod.CacheGrid(
        windows=parse(args.windows, int),
        mix_weights=parse(args.lams, float),
        flatnesses=parse(args.thetas, float),
    )


def _load_eval_stream(args, which: str):
    """Checkpoint weights plus the encoded id stream of one corpus split."""
    params, cfg, vocab = training.load_model(args.ckpt, args.vocab)
    if vocab is None:
        raise SystemExit("no vocabulary found; pass --vocab explicitly")
    if args.data is not None:
        cfg.data_dir = args.data
    path = cfg.corpus_path(which)
    if not os.path.exists(path):
        raise SystemExit(f"{which} corpus not found at {path!r}")
    return params, vocab.encode(read_tokens(path)), cfg, vocab


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    training.train(cfg, out_dir=args.out, resume=args.resume, log=print)
    return 0


def cmd_eval(args) -> int:
    params, cfg, vocab = training.load_model(args.ckpt, args.vocab)
    if vocab is None:
        raise SystemExit("no vocabulary found; pass --vocab explicitly")
    if args.data is not None:
        cfg.data_dir = args.data
    path = cfg.corpus_path(args.split)
    if not os.path.exists(path):
        raise SystemExit(f"{args.split} corpus not found at {path!r}")
    ids = vocab.encode(read_tokens(path))
    batch = args.batch or cfg.eval_batch
    bptt = args.bptt or cfg.bptt
    ppl = training.evaluate(params, batchify(ids, batch), bptt)
    print(f"{args.split} perplexity\t{ppl:.4f}")
    return 0


def cmd_finetune(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    cfg = _config_from_args(args)
    training.fine_tune(cfg, ckpt.params, out_dir=args.out, log=print)
    return 0


def cmd_cache_tune(args) -> int:
    params, ids, cfg, _ = _load_eval_stream(args, args.split)
    result = cache_mod.tune_cache(params, ids, _cache_grid(args), window_len=cfg.bptt)
    for cc, ppl in result.scanned:
        print(f"window={cc.window}\tlam={cc.mix_weight}\ttheta={cc.flatness}\tppl={ppl:.4f}")
    b = result.best
    print(f"best\twindow={b.window}\tlam={b.mix_weight}\ttheta={b.flatness}"
          f"\tppl={result.perplexity:.4f}")
    return 0


def cmd_cache_eval(args) -> int:
    params, ids, cfg, _ = _load_eval_stream(args, args.split)
    cc = cache_mod.CacheConfig(window=args.window, mix_weight=args.lam, flatness=args.theta)
    res = cache_mod.evaluate_with_cache(params, ids, cc, window_len=cfg.bptt)
    print(f"{args.split} cache perplexity\t{res.perplexity:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    row = training.ablate(cfg, args.name, out_dir=args.out, log=print)
    print(dump_config(row.config).rstrip())
    print(row.line())
    return 0


def cmd_analyze_cache(args) -> int:
    params, ids, cfg, vocab = _load_eval_stream(args, args.split)
    base = cache_mod.evaluate_with_cache(
        params, ids, cache_mod.CacheConfig(args.window, 0.0, args.theta),
        window_len=cfg.bptt)
    mixed = cache_mod.evaluate_with_cache(
        params, ids, cache_mod.CacheConfig(args.window, args.lam, args.theta),
        window_len=cfg.bptt)
    rows = cache_mod.word_loss_diff(base.losses, mixed.losses, base.targets, vocab)
    report = cache_mod.format_report(rows)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report + "\n")
    helped, hurt = cache_mod.extremes(rows, k=args.top)
    print(f"base ppl {base.perplexity:.4f} -> cache ppl {mixed.perplexity:.4f}")
    print("# most helped (word, count, summed loss change)")
    for w, c, d in helped:
        print(f"{w}\t{c}\t{d:.4f}")
    print("# most hurt")
    for w, c, d in hurt:
        print(f"{w}\t{c}\t{d:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="awdlm", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    p.add_argument("--resume", default=None, help="last.ckpt to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="perplexity of a checkpoint on a corpus split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--vocab", default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--bptt", type=int, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("finetune", help="second averaging pass from trained weights")
    _add_config_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("cache-tune", help="grid-search cache settings on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", choices=("train", "valid", "test"), default="valid")
    p.add_argument("--vocab", default=None)
    p.add_argument("--windows", default="100,500,2000")
    p.add_argument("--lams", default="0,0.05,0.1,0.2")
    p.add_argument("--thetas", default="0.3,0.662,1.0")
    p.set_defaults(fn=cmd_cache_tune)

    p = sub.add_parser("cache-eval", help="perplexity with fixed cache settings")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--vocab", default=None)
    p.add_argument("--window", type=int, required=True)
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--theta", type=float, required=True)
    p.set_defaults(fn=cmd_cache_eval)

    p = sub.add_parser("ablate", help="train with one ingredient disabled")
    _add_config_flags(p)
    p.add_argument("--name", required=True, choices=sorted(training.ABLATIONS))
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("analyze-cache", help="per-word loss change from the cache")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--vocab", default=None)
    p.add_argument("--window", type=int, required=True)
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--report", default=None, help="write the full ranked table here")
    p.add_argument("--top", type=int, default=20)
    p.set_defaults(fn=cmd_analyze_cache)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
