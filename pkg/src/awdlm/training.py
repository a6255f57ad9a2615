"""Training, evaluation, fine-tuning and ablation drivers.

One validation check per epoch drives the averaging trigger. Hidden state is
carried across windows inside an epoch and reset at epoch boundaries, which
keeps checkpoints small and resume exact. All randomness in a run flows from
the single seeded stream, in a fixed order: parameter init, then per window
one length draw followed by the mask draws. Evaluation draws nothing.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, config_from_text, dump_config
from .corpus import (BatchedCorpus, BpttSchedule, Vocabulary, batchify, build_vocab,
                     next_window, read_tokens, rescale_lr, sample_bptt_length)
from .model import (DropoutRates, HiddenState, LMParameters, LstmLayerParams,
                    flatten_targets, forward, init_parameters, sample_masks, training_loss)
from .optim import (TrainerState, accumulate_average, clip_global_norm, finalize,
                    log_validation, nonmono_worse, nt_asgd_check, sgd_step)
from .rng import Rng
from .tensor import Tensor, backward, softmax_cross_entropy

OPTIMIZERS = ("ntasgd", "sgd", "sgd-halving")

# Table-row ablation names: each one disables exactly one ingredient.
ABLATIONS = {
    "fine-tuning": {},
    "nt-asgd": {"optimizer": "sgd-halving"},
    "variable-lengths": {"bptt_std": 0.0, "bptt_p": 1.0},
    "embedding-dropout": {"dropout_embed": 0.0},
    "weight-decay": {"weight_decay": 0.0},
    "ar-tar": {"alpha": 0.0, "beta": 0.0},
    "full-sized-embedding": {"embed": None},   # resolved to the hidden width
    "weight-dropping": {"wdrop": 0.0},
}


@dataclass
class EpochMetrics:
    epoch: int
    train_ppl: float
    valid_ppl: float
    lr: float
    triggered: bool

    def line(self) -> str:
        return (f"{self.epoch}\t{self.train_ppl:.6f}\t{self.valid_ppl:.6f}"
                f"\t{self.lr:g}\t{int(self.triggered)}")


@dataclass
class TrainResult:
    params: LMParameters               # last SGD iterate, live
    final_weights: dict[str, np.ndarray]  # averaged deliverable (or last iterate)
    averaged: bool
    vocab: Vocabulary
    state: TrainerState
    metrics: list[EpochMetrics] = field(default_factory=list)
    final_valid_ppl: float = float("nan")
    last_valid_ppl: float = float("nan")


def load_split_tokens(cfg: RunConfig, which: str) -> list[str]:
    path = cfg.corpus_path(which)
    if not os.path.exists(path):
        raise FileNotFoundError(f"{which} corpus not found at {path!r}")
    return read_tokens(path)


def dropout_rates(cfg: RunConfig) -> DropoutRates:
    return DropoutRates(input=cfg.dropout_input, hidden=cfg.dropout_hidden,
                        output=cfg.dropout_output, embedding=cfg.dropout_embed,
                        weight=cfg.wdrop)


def bptt_schedule(cfg: RunConfig) -> BpttSchedule:
    return BpttSchedule(base_seq=cfg.bptt, base_prob=cfg.bptt_p, stddev=cfg.bptt_std,
                        min_len=cfg.bptt_min)


def params_from_weights(weights: dict[str, np.ndarray]) -> LMParameters:
    """Rebuild a live parameter set from named arrays (checkpoint contents)."""
    needed = {"embedding", "softmax_bias"}
    missing = needed - set(weights)
    if missing:
        raise ValueError(f"weight set missing arrays: {sorted(missing)}")
    n_layers = 0
    while f"layer{n_layers}.w_rec" in weights:
        n_layers += 1
    if n_layers == 0:
        raise ValueError("weight set contains no recurrent layers")
    emb = Tensor(weights["embedding"].copy(), requires_grad=True)
    layers = []
    for i in range(n_layers):
        layers.append(LstmLayerParams(
            w_in=Tensor(weights[f"layer{i}.w_in"].copy(), requires_grad=True),
            w_rec=Tensor(weights[f"layer{i}.w_rec"].copy(), requires_grad=True),
            bias=Tensor(weights[f"layer{i}.bias"].copy(), requires_grad=True),
        ))
    bias = Tensor(weights["softmax_bias"].copy(), requires_grad=True)
    return LMParameters(emb, layers, bias)


# -- evaluation ---------------------------------------------------------------

def evaluate(params: LMParameters, corpus: BatchedCorpus, bptt: int) -> float:
    """Perplexity with every dropout site disabled and fixed-length windows.
    Consumes no randomness."""
    if bptt < 1:
        raise ValueError(f"bptt must be positive, got {bptt}")
    state: HiddenState | None = None
    cursor = 0
    total = 0.0
    count = 0
    while True:
        remaining = corpus.stream_length - cursor
        if remaining < 2:
            break
        length = min(bptt, remaining - 1)
        inputs, targets, cursor = next_window(corpus, cursor, length)
        result = forward(params, inputs, state, masks=None)
        ce = softmax_cross_entropy(result.logits, flatten_targets(targets))
        total += float(ce.data.sum(dtype=np.float64))
        count += ce.size
        state = result.state.detach()
    if count == 0:
        raise ValueError("corpus too short to evaluate")
    return math.exp(total / count)


def evaluate_ids(params: LMParameters, ids: np.ndarray, batch: int, bptt: int) -> float:
    return evaluate(params, batchify(ids, batch), bptt)


# -- the epoch loop -----------------------------------------------------------

def run_epoch(params: LMParameters, corpus: BatchedCorpus, cfg: RunConfig,
              rng: Rng, state: TrainerState, lr: float) -> float:
    """One pass over the training stream; returns the training perplexity
    (cross-entropy part only, measured with the masks that were active)."""
    rates = dropout_rates(cfg)
    schedule = bptt_schedule(cfg)
    tensors = params.tensors()
    named = params.named()
    hidden: HiddenState | None = None
    cursor = 0
    ce_sum = 0.0
    tokens = 0
    stream = corpus.stream_length
    while stream - cursor >= 2:
        length = sample_bptt_length(schedule, rng, remaining=stream - cursor)
        inputs, targets, cursor = next_window(corpus, cursor, length)
        masks = sample_masks(params, corpus.batch, rates, rng)
        step_lr = rescale_lr(lr, inputs.shape[1], cfg.bptt)
        result = forward(params, inputs, hidden, masks)
        hidden = result.state.detach()
        loss, ce = training_loss(result, targets, cfg.alpha, cfg.beta)
        backward(loss)
        clip_global_norm((p.grad for p in tensors), cfg.clip)
        sgd_step(tensors, step_lr, cfg.weight_decay)
        state.k += 1
        if state.triggered:
            accumulate_average(state, named)
        ce_sum += ce.item() * targets.size
        tokens += targets.size
    if tokens == 0:
        raise ValueError("training stream produced no windows")
    return math.exp(ce_sum / tokens)


def replay_halvings(logs: list[float], n: int) -> int:
    """Number of step-size halvings the sgd-halving rule would have fired on
    this validation history; used to restore the step size on resume."""
    count = 0
    for t, v in enumerate(logs):
        if nonmono_worse(logs[:t], t, n, v):
            count += 1
    return count


def _save_train_ckpt(path: str, cfg: RunConfig, params: LMParameters,
                     state: TrainerState, rng: Rng) -> None:
    ckpt = Checkpoint(config_text=dump_config(cfg),
                      params={k: v.data for k, v in params.named().items()},
                      state=state, rng_state=rng.state())
    save_checkpoint(path, ckpt)


def save_weights_ckpt(path: str, cfg: RunConfig, weights: dict[str, np.ndarray],
                      rng_state: dict | None = None) -> None:
    ckpt = Checkpoint(config_text=dump_config(cfg), params=weights,
                      state=TrainerState(), rng_state=rng_state or {})
    save_checkpoint(path, ckpt)


def train(cfg: RunConfig, out_dir: str | None = None, resume: str | None = None,
          log=None) -> TrainResult:
    """Full training run. With `resume` pointing at a last.ckpt, continues
    the interrupted run and reproduces the uninterrupted metric stream."""
    if cfg.optimizer not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}; choose from {OPTIMIZERS}")
    say = log if log is not None else (lambda s: None)

    train_tokens = load_split_tokens(cfg, "train")
    valid_tokens = load_split_tokens(cfg, "valid")
    vocab = build_vocab(train_tokens)
    train_bc = batchify(vocab.encode(train_tokens), cfg.batch)
    valid_bc = batchify(vocab.encode(valid_tokens), cfg.eval_batch)
    dtype = np.dtype(cfg.dtype)

    if resume:
        ckpt = load_checkpoint(resume)
        params = params_from_weights(ckpt.params)
        if params.vocab_size != len(vocab):
            raise ValueError(
                f"checkpoint vocabulary ({params.vocab_size}) does not match "
                f"corpus vocabulary ({len(vocab)})")
        state = ckpt.state
        rng = Rng.from_state(ckpt.rng_state)
        start_epoch = state.t   # one validation check per epoch
    else:
        rng = Rng(cfg.seed)
        params = init_parameters(len(vocab), cfg.embed, cfg.hidden, cfg.layers, rng, dtype)
        state = TrainerState()
        start_epoch = 0

    lr = cfg.lr
    if cfg.optimizer == "sgd-halving":
        lr = cfg.lr / (2 ** replay_halvings(state.logs, cfg.nonmono))

    say(dump_config(cfg).rstrip())
    metrics_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        vocab.save(os.path.join(out_dir, "vocab.txt"))
        with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
            fh.write(dump_config(cfg))
        metrics_path = os.path.join(out_dir, "metrics.tsv")
        if not resume or not os.path.exists(metrics_path):
            with open(metrics_path, "w", encoding="utf-8") as fh:
                fh.write("epoch\ttrain_ppl\tvalid_ppl\tlr\ttriggered\n")

    named = params.named()
    best = min(state.logs) if state.logs else float("inf")
    metrics: list[EpochMetrics] = []
    for epoch in range(start_epoch, cfg.epochs):
        train_ppl = run_epoch(params, train_bc, cfg, rng, state, lr)
        v = evaluate(params, valid_bc, cfg.bptt)
        if cfg.optimizer == "ntasgd" and not state.triggered:
            if nt_asgd_check(state, v, cfg.nonmono):
                accumulate_average(state, named)
        else:
            if cfg.optimizer == "sgd-halving" and nonmono_worse(
                    state.logs, state.t, cfg.nonmono, v):
                lr = lr / 2.0
            log_validation(state, v)
        row = EpochMetrics(epoch=epoch + 1, train_ppl=train_ppl, valid_ppl=v,
                           lr=lr, triggered=state.triggered)
        metrics.append(row)
        say(row.line())
        if metrics_path:
            with open(metrics_path, "a", encoding="utf-8") as fh:
                fh.write(row.line() + "\n")
        if out_dir:
            _save_train_ckpt(os.path.join(out_dir, "last.ckpt"), cfg, params, state, rng)
            if v < best:
                _save_train_ckpt(os.path.join(out_dir, "best.ckpt"), cfg, params, state, rng)
        best = min(best, v)

    fin = finalize(state, named)
    final_params = params_from_weights(fin.weights)
    final_valid = evaluate(final_params, valid_bc, cfg.bptt)
    last_valid = state.logs[-1] if state.logs else float("nan")
    say(f"final valid ppl {final_valid:.4f} (averaged={fin.averaged}); "
        f"last iterate {last_valid:.4f}")
    if out_dir:
        save_weights_ckpt(os.path.join(out_dir, "final.ckpt"), cfg, fin.weights,
                          rng.state())
    return TrainResult(params=params, final_weights=fin.weights, averaged=fin.averaged,
                       vocab=vocab, state=state, metrics=metrics,
                       final_valid_ppl=final_valid, last_valid_ppl=last_valid)


def fine_tune(cfg: RunConfig, weights: dict[str, np.ndarray], out_dir: str | None = None,
              log=None) -> TrainResult:
    """Restart training from trained weights with averaging forced on from
    step zero; stops once validation goes non-monotone (or at the epoch cap).
    A zero-epoch budget returns the input weights unchanged."""
    say = log if log is not None else (lambda s: None)
    train_tokens = load_split_tokens(cfg, "train")
    valid_tokens = load_split_tokens(cfg, "valid")
    vocab = build_vocab(train_tokens)
    params = params_from_weights(weights)
    if params.vocab_size != len(vocab):
        raise ValueError(
            f"weights expect vocabulary of {params.vocab_size}, corpus has {len(vocab)}")
    train_bc = batchify(vocab.encode(train_tokens), cfg.batch)
    valid_bc = batchify(vocab.encode(valid_tokens), cfg.eval_batch)

    rng = Rng(cfg.seed)
    state = TrainerState(triggered=True, trigger_step=0)
    named = params.named()
    accumulate_average(state, named)   # the starting weights are iterate zero
    metrics: list[EpochMetrics] = []
    for epoch in range(cfg.epochs):
        train_ppl = run_epoch(params, train_bc, cfg, rng, state, cfg.lr)
        v = evaluate(params, valid_bc, cfg.bptt)
        stop = nonmono_worse(state.logs, state.t, cfg.nonmono, v)
        log_validation(state, v)
        row = EpochMetrics(epoch=epoch + 1, train_ppl=train_ppl, valid_ppl=v,
                           lr=cfg.lr, triggered=True)
        metrics.append(row)
        say(row.line())
        if stop:
            break

    fin = finalize(state, named)
    final_params = params_from_weights(fin.weights)
    final_valid = evaluate(final_params, valid_bc, cfg.bptt)
    say(f"fine-tune final valid ppl {final_valid:.4f} over {state.avg_count} iterates")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        vocab.save(os.path.join(out_dir, "vocab.txt"))
        save_weights_ckpt(os.path.join(out_dir, "final.ckpt"), cfg, fin.weights)
    return TrainResult(params=params, final_weights=fin.weights, averaged=fin.averaged,
                       vocab=vocab, state=state, metrics=metrics,
                       final_valid_ppl=final_valid,
                       last_valid_ppl=state.logs[-1] if state.logs else float("nan"))


# -- ablations ----------------------------------------------------------------

def apply_ablation(cfg: RunConfig, name: str) -> tuple[RunConfig, bool, list[str]]:
    """Config with exactly one ingredient disabled. Returns (config,
    skip_fine_tune, changed_keys)."""
    if name not in ABLATIONS:
        raise ValueError(
            f"unknown ablation {name!r}; valid names: {', '.join(sorted(ABLATIONS))}")
    changes = dict(ABLATIONS[name])
    if name == "full-sized-embedding":
        changes["embed"] = cfg.hidden
    new_cfg = replace(cfg, **changes) if changes else cfg
    return new_cfg, name == "fine-tuning", sorted(changes)


@dataclass
class AblationRow:
    name: str
    valid_ppl: float
    test_ppl: float
    config: RunConfig
    changed_keys: list[str]

    def line(self) -> str:
        return f"{self.name}\t{self.valid_ppl:.2f}\t{self.test_ppl:.2f}"


def ablate(cfg: RunConfig, name: str, out_dir: str | None = None, log=None) -> AblationRow:
    """Train with one ingredient removed and report the resulting row."""
    new_cfg, skip_ft, changed = apply_ablation(cfg, name)
    res = train(new_cfg, out_dir=out_dir, log=log)
    weights = res.final_weights
    if not skip_ft:
        ft = fine_tune(new_cfg, weights, out_dir=None, log=log)
        weights = ft.final_weights
    params = params_from_weights(weights)
    valid_bc = batchify(res.vocab.encode(load_split_tokens(new_cfg, "valid")),
                        new_cfg.eval_batch)
    valid_ppl = evaluate(params, valid_bc, new_cfg.bptt)
    test_path = new_cfg.corpus_path("test")
    if os.path.exists(test_path):
        test_bc = batchify(res.vocab.encode(read_tokens(test_path)), new_cfg.eval_batch)
        test_ppl = evaluate(params, test_bc, new_cfg.bptt)
    else:
        test_ppl = float("nan")
    return AblationRow(name=name, valid_ppl=valid_ppl, test_ppl=test_ppl,
                       config=new_cfg, changed_keys=changed)


# -- checkpoint-facing helpers --------------------------------------------------

def load_model(ckpt_path: str, vocab_path: str | None = None
               ) -> tuple[LMParameters, RunConfig, Vocabulary | None]:
    """Model weights plus the effective config and, when available, the
    vocabulary saved next to the checkpoint."""
    ckpt = load_checkpoint(ckpt_path)
    params = params_from_weights(ckpt.params)
    cfg = config_from_text(ckpt.config_text)
    if vocab_path is None:
        candidate = os.path.join(os.path.dirname(os.path.abspath(ckpt_path)), "vocab.txt")
        vocab_path = candidate if os.path.exists(candidate) else None
    vocab = Vocabulary.load(vocab_path) if vocab_path else None
    if vocab is not None and len(vocab) != params.vocab_size:
        raise ValueError(
            f"vocabulary file has {len(vocab)} entries, checkpoint expects "
            f"{params.vocab_size}")
    return params, cfg, vocab
