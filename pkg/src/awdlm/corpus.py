"""Word-level corpus handling: vocabulary, continuous batching, and the
variable-length backpropagation window schedule.

Text files are whitespace-tokenized, one sentence per line; every newline
becomes an end-of-sentence token. Batchify folds the encoded id stream into
parallel streams (one per batch row) without shuffling, so state can be
carried across consecutive windows.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .rng import Rng

UNK = "<unk>"
EOS = "<eos>"


class Vocabulary:
    """Token/id bijection. Ids 0 and 1 are the unknown and end-of-sentence
    tokens; remaining ids follow first appearance in the source stream."""

    def __init__(self, id_to_token: list[str]):
        if UNK not in id_to_token or EOS not in id_to_token:
            raise ValueError(f"vocabulary must contain {UNK} and {EOS}")
        if len(set(id_to_token)) != len(id_to_token):
            raise ValueError("vocabulary contains duplicate tokens")
        self.id_to_token = list(id_to_token)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        self.unk_id = self.token_to_id[UNK]
        self.eos_id = self.token_to_id[EOS]

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        """Map tokens to ids; anything out of vocabulary becomes <unk>."""
        unk = self.unk_id
        table = self.token_to_id
        return np.fromiter((table.get(t, unk) for t in tokens), dtype=np.int64)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        if tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)


def tokenize(text: str) -> list[str]:
    """Whitespace tokens with an explicit end-of-sentence after each line."""
    out: list[str] = []
    for line in text.splitlines():
        out.extend(line.split())
        out.append(EOS)
    return out


def build_vocab(tokens: Iterable[str]) -> Vocabulary:
    """Vocabulary over a token stream; every distinct token gets an id."""
    id_to_token = [UNK, EOS]
    seen = {UNK, EOS}
    n = 0
    for tok in tokens:
        n += 1
        if tok not in seen:
            seen.add(tok)
            id_to_token.append(tok)
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty token stream")
    return Vocabulary(id_to_token)


def read_tokens(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return tokenize(fh.read())


# -- batching ------------------------------------------------------------

@dataclass
class BatchedCorpus:
    """Id stream folded into `batch` parallel rows; row b holds the
    contiguous source slice ids[b*cols : (b+1)*cols]."""
    ids: np.ndarray      # (batch, cols) int64
    source_tokens: int   # length of the stream before trimming

    @property
    def batch(self) -> int:
        return self.ids.shape[0]

    @property
    def stream_length(self) -> int:
        return self.ids.shape[1]

    @property
    def dropped(self) -> int:
        """Trailing tokens discarded to make the stream divide evenly."""
        return self.source_tokens - self.ids.size


def batchify(ids: np.ndarray, batch: int) -> BatchedCorpus:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError(f"batchify expects a 1-d id stream, got shape {ids.shape}")
    if batch < 1:
        raise ValueError(f"batch size must be positive, got {batch}")
    cols = ids.size // batch
    if cols < 2:
        raise ValueError(f"stream of {ids.size} tokens too short for batch size {batch}")
    trimmed = ids[: batch * cols]
    return BatchedCorpus(ids=trimmed.reshape(batch, cols), source_tokens=int(ids.size))


def next_window(corpus: BatchedCorpus, cursor: int, length: int):
    """Inputs/targets for one window starting at `cursor`.

    Returns (inputs, targets, new_cursor), both (batch, length) views, with
    targets shifted one position. Returns None once fewer than two tokens
    remain, which signals the end of the epoch.
    """
    total = corpus.stream_length
    if cursor >= total - 1:
        return None
    if length < 1:
        raise ValueError(f"window length must be positive, got {length}")
    if cursor + length + 1 > total:
        raise ValueError(
            f"window [{cursor}:{cursor + length}]+1 overruns stream of length {total}")
    inputs = corpus.ids[:, cursor:cursor + length]
    targets = corpus.ids[:, cursor + 1:cursor + length + 1]
    return inputs, targets, cursor + length


# -- window-length schedule ------------------------------------------------

@dataclass
class BpttSchedule:
    """Variable-length window sampler settings.

    With probability `base_prob` the Gaussian mean is `base_seq`, otherwise
    half of it; the draw is rounded and clamped to [min_len, max_len]. The
    defaults of the clamp keep pathological tails out without distorting the
    mixture mean.
    """
    base_seq: int = 70
    base_prob: float = 0.95
    stddev: float = 5.0
    min_len: int = 5
    max_len: int | None = None   # defaults to base_seq + 4*stddev

    def __post_init__(self):
        if self.base_seq < 1:
            raise ValueError(f"base_seq must be positive, got {self.base_seq}")
        if not 0.0 < self.base_prob <= 1.0:
            raise ValueError(f"base_prob must be in (0, 1], got {self.base_prob}")
        if self.stddev < 0:
            raise ValueError(f"stddev must be nonnegative, got {self.stddev}")
        if self.max_len is None:
            self.max_len = int(round(self.base_seq + 4 * self.stddev))
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError(
                f"invalid clamp [{self.min_len}, {self.max_len}] for base_seq {self.base_seq}")


def sample_bptt_length(schedule: BpttSchedule, rng: Rng, remaining: int | None = None) -> int:
    """One window length. `remaining` caps the result at remaining - 1 so the
    shifted targets always exist."""
    base = schedule.base_seq if float(rng.random()) < schedule.base_prob \
        else schedule.base_seq / 2.0
    draw = rng.normal(base, schedule.stddev)
    length = int(round(draw))
    length = max(schedule.min_len, min(schedule.max_len, length))
    if remaining is not None:
        length = min(length, remaining - 1)
    return max(1, length)


def rescale_lr(base_lr: float, length: int, base_seq: int) -> float:
    """Scale the step size linearly with the sampled window length so short
    windows do not get an outsized share of updates."""
    if base_seq < 1:
        raise ValueError(f"base_seq must be positive, got {base_seq}")
    if length < 1:
        raise ValueError(f"length must be positive, got {length}")
    return base_lr * length / base_seq


def resolve_data_path(path: str, data_dir: str | None = None) -> str:
    """Join relative corpus paths onto the configured data directory."""
    if os.path.isabs(path) or not data_dir:
        return path
    return os.path.join(data_dir, path)
