"""Continuous-cache decoding on top of a trained model.

A FIFO window stores (hidden state, next token) pairs from the positions just
evaluated. At each new position the cache scores every stored entry by the
exponentiated flattened dot product between the current hidden state and the
stored one, sums scores per word, normalizes, and mixes the result with the
model's softmax. No gradients: everything here runs on plain arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .corpus import Vocabulary
from .model import LMParameters, HiddenState, forward, flatten_targets


@dataclass(frozen=True)
class CacheConfig:
    window: int       # number of past positions remembered
    mix_weight: float  # lambda, share of the cache in the mixture
    flatness: float   # theta, scales the dot products before exponentiation

    def validate(self) -> None:
        if self.window < 1:
            raise ValueError(f"cache window must be positive, got {self.window}")
        if not 0.0 <= self.mix_weight <= 1.0:
            raise ValueError(f"mix weight must be in [0, 1], got {self.mix_weight}")
        if self.flatness < 0:
            raise ValueError(f"flatness must be nonnegative, got {self.flatness}")


class CacheWindow:
    """Ring buffer of the last `capacity` (hidden, target) pairs."""

    def __init__(self, capacity: int, dim: int, dtype=np.float64):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._h = np.zeros((capacity, dim), dtype=dtype)
        self._targets = np.zeros(capacity, dtype=np.int64)
        self._size = 0
        self._next = 0

    def __len__(self) -> int:
        return self._size

    def push(self, h: np.ndarray, target: int) -> None:
        self._h[self._next] = h
        self._targets[self._next] = target
        self._next = (self._next + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def contents(self) -> tuple[np.ndarray, np.ndarray]:
        """Stored vectors and targets; order is irrelevant to the scores."""
        if self._size < self.capacity:
            return self._h[:self._size], self._targets[:self._size]
        return self._h, self._targets


def cache_distribution(window: CacheWindow, query: np.ndarray, flatness: float,
                       vocab_size: int) -> np.ndarray | None:
    """Probability over the vocabulary induced by the cached entries, or
    None when the cache is empty. Scores pass through a max-shifted exp, so
    the result sums to one regardless of dot-product magnitudes."""
    if len(window) == 0:
        return None
    h, targets = window.contents()
    scores = flatness * (h @ query)
    scores -= scores.max()
    weights = np.exp(scores)
    dist = np.zeros(vocab_size, dtype=np.float64)
    np.add.at(dist, targets, weights)
    dist /= dist.sum()
    return dist


def mix(p_model: np.ndarray, p_cache: np.ndarray | None, mix_weight: float) -> np.ndarray:
    """(1 - lambda) * model + lambda * cache; an empty cache leaves the
    model distribution untouched."""
    if not 0.0 <= mix_weight <= 1.0:
        raise ValueError(f"mix weight must be in [0, 1], got {mix_weight}")
    if p_cache is None or mix_weight == 0.0:
        return p_model
    return (1.0 - mix_weight) * p_model + mix_weight * p_cache


# -- evaluation --------------------------------------------------------------

def collect_hidden_states(params: LMParameters, ids: np.ndarray,
                          window_len: int = 70) -> tuple[np.ndarray, np.ndarray]:
    """Single-stream evaluation pass; returns the final-layer output for every
    position (N-1, embed) plus the aligned next-token targets (N-1,)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size < 2:
        raise ValueError("cache evaluation needs a flat stream of at least two tokens")
    n = ids.size
    outs = np.empty((n - 1, params.embed_dim), dtype=np.float64)
    state: HiddenState | None = None
    cursor = 0
    while cursor < n - 1:
        length = min(window_len, n - 1 - cursor)
        window_ids = ids[cursor:cursor + length].reshape(1, -1)
        result = forward(params, window_ids, state, masks=None)
        outs[cursor:cursor + length] = result.raw.data.astype(np.float64)
        state = result.state.detach()
        cursor += length
    return outs, ids[1:]


def model_probs(params: LMParameters, hidden: np.ndarray) -> np.ndarray:
    """Softmax over the tied projection for a block of hidden states."""
    logits = hidden @ params.embedding.data.T.astype(np.float64) \
        + params.softmax_bias.data.astype(np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=1, keepdims=True)
    return logits


@dataclass
class CacheEvalResult:
    perplexity: float
    losses: np.ndarray   # per-position negative log mixed probability
    targets: np.ndarray


def evaluate_with_cache(params: LMParameters, ids: np.ndarray, config: CacheConfig,
                        window_len: int = 70,
                        precomputed: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
                        ) -> CacheEvalResult:
    """Sequential pass over a single stream with the cache active.

    Each position is scored with the mixed distribution before its own
    (hidden, target) pair enters the window, so the cache never sees the
    token it is predicting.
    """
    config.validate()
    if precomputed is None:
        hidden, targets = collect_hidden_states(params, ids, window_len)
        probs = model_probs(params, hidden)
    else:
        hidden, targets, probs = precomputed
    vocab_size = params.vocab_size
    window = CacheWindow(config.window, hidden.shape[1])
    losses = np.empty(targets.size, dtype=np.float64)
    for i in range(targets.size):
        p = probs[i]
        if config.mix_weight > 0.0:
            p_cache = cache_distribution(window, hidden[i], config.flatness, vocab_size)
            p = mix(p, p_cache, config.mix_weight)
        losses[i] = -math.log(max(p[targets[i]], 1e-300))
        window.push(hidden[i], int(targets[i]))
    return CacheEvalResult(perplexity=float(np.exp(losses.mean())), losses=losses,
                           targets=targets)


@dataclass(frozen=True)
class CacheGrid:
    windows: tuple = (100, 500, 2000)
    mix_weights: tuple = (0.0, 0.05, 0.1, 0.2)
    flatnesses: tuple = (0.3, 0.662, 1.0)


@dataclass
class TuneResult:
    best: CacheConfig
    perplexity: float
    scanned: list  # (CacheConfig, perplexity) for every grid point


def tune_cache(params: LMParameters, ids: np.ndarray, grid: CacheGrid | None = None,
               window_len: int = 70) -> TuneResult:
    """Exhaustive grid search on one stream. The grid must include a zero mix
    weight, so the winner can never be worse than running without the cache.
    Ties break toward smaller mix weight, then smaller window, then smaller
    flatness."""
    grid = grid or CacheGrid()
    if not (grid.windows and grid.mix_weights and grid.flatnesses):
        raise ValueError("cache grid must be non-empty in every dimension")
    if 0.0 not in grid.mix_weights:
        raise ValueError("cache grid must include mix weight 0")

    hidden, targets = collect_hidden_states(params, ids, window_len)
    probs = model_probs(params, hidden)
    pre = (hidden, targets, probs)

    scanned: list[tuple[CacheConfig, float]] = []
    seen_zero = False
    for w, lam, theta in product(grid.windows, grid.mix_weights, grid.flatnesses):
        if lam == 0.0:
            if seen_zero:
                continue   # all zero-mix points are identical
            seen_zero = True
        cfg = CacheConfig(window=w, mix_weight=lam, flatness=theta)
        res = evaluate_with_cache(params, ids, cfg, window_len, precomputed=pre)
        scanned.append((cfg, res.perplexity))
    best_cfg, best_ppl = min(
        scanned, key=lambda it: (it[1], it[0].mix_weight, it[0].window, it[0].flatness))
    return TuneResult(best=best_cfg, perplexity=best_ppl, scanned=scanned)


# -- per-word analysis --------------------------------------------------------

def word_loss_diff(losses_base: np.ndarray, losses_cache: np.ndarray,
                   targets: np.ndarray, vocab: Vocabulary) -> list[tuple[str, int, float]]:
    """Summed loss change per target word, sorted so the words the cache
    helped most come first. Positive means the cache reduced the loss."""
    losses_base = np.asarray(losses_base, dtype=np.float64)
    losses_cache = np.asarray(losses_cache, dtype=np.float64)
    targets = np.asarray(targets)
    if not (losses_base.shape == losses_cache.shape == targets.shape):
        raise ValueError(
            f"misaligned inputs: base {losses_base.shape}, cache {losses_cache.shape}, "
            f"targets {targets.shape}")
    delta = np.zeros(len(vocab), dtype=np.float64)
    counts = np.zeros(len(vocab), dtype=np.int64)
    np.add.at(delta, targets, losses_base - losses_cache)
    np.add.at(counts, targets, 1)
    present = np.nonzero(counts)[0]
    rows = [(vocab.id_to_token[i], int(counts[i]), float(delta[i])) for i in present]
    rows.sort(key=lambda r: (-r[2], r[0]))
    return rows


def format_report(rows: list[tuple[str, int, float]]) -> str:
    """Tab-separated (word, count, summed loss change), one row per word."""
    return "\n".join(f"{word}\t{count}\t{diff:.4f}" for word, count, diff in rows)


def extremes(rows: list[tuple[str, int, float]], k: int = 20):
    """The k words the cache helped most and the k it hurt most."""
    return rows[:k], rows[-k:][::-1]
