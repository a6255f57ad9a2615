"""SGD with global-norm clipping and non-monotonically-triggered averaging.

The trainer runs plain SGD until the validation metric stops improving on a
trailing window, then starts accumulating every subsequent iterate; the final
weights are the running mean of everything since the trigger. The trigger is
irreversible. Fine-tuning reuses the same machinery with the trigger forced
on from the first step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .tensor import Tensor


def global_grad_norm(grads: Iterable[np.ndarray | None]) -> float:
    total = 0.0
    for g in grads:
        if g is not None:
            total += float((g.astype(np.float64, copy=False) ** 2).sum())
    return math.sqrt(total)


def clip_global_norm(grads: Iterable[np.ndarray | None], max_norm: float) -> float:
    """Scale the whole gradient set so its joint L2 norm is at most max_norm.
    Scaling happens in place; returns the pre-clip norm."""
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    grads = list(grads)
    norm = global_grad_norm(grads)
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads:
            if g is not None:
                g *= np.dtype(g.dtype).type(factor)
    return norm


def sgd_step(params: Iterable[Tensor], lr: float, weight_decay: float = 0.0) -> None:
    """w <- (1 - lr*wd) * w - lr * grad, then clear the gradients.

    Weight decay is decoupled: it shrinks the weights directly instead of
    being folded into the gradient.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be nonnegative, got {lr}")
    for p in params:
        if weight_decay:
            p.data *= p.data.dtype.type(1.0 - lr * weight_decay)
        if p.grad is not None:
            p.data -= p.data.dtype.type(lr) * p.grad
            p.grad = None


# -- averaging state machine -------------------------------------------------

@dataclass
class TrainerState:
    """Bookkeeping for the averaging trigger.

    k counts SGD steps, t counts validation checks, logs holds one validation
    value per check. Once triggered, trigger_step records k at that moment
    and iterate_sum accumulates every post-trigger iterate.
    """
    k: int = 0
    t: int = 0
    trigger_step: int = 0
    triggered: bool = False
    logs: list[float] = field(default_factory=list)
    iterate_sum: dict[str, np.ndarray] | None = None
    avg_count: int = 0


def nonmono_worse(logs: list[float], t: int, n: int, v: float) -> bool:
    """The non-monotonic criterion: with more than n checks logged, is v
    worse than the best of the trailing window logs[t-n..t]?"""
    return t > n and v > min(logs[t - n:t + 1])


def log_validation(state: TrainerState, v: float) -> None:
    state.logs.append(float(v))
    state.t += 1


def nt_asgd_check(state: TrainerState, v: float, n: int) -> bool:
    """One validation boundary while untriggered: decide, then log v.

    Returns True when this check fires the trigger. The caller should
    immediately accumulate the current iterate when it does, so the average
    includes the trigger-step weights.
    """
    if state.triggered:
        raise RuntimeError("nt_asgd_check called after the trigger already fired")
    if n < 0:
        raise ValueError(f"nonmono window must be nonnegative, got {n}")
    fired = nonmono_worse(state.logs, state.t, n, v)
    if fired:
        state.triggered = True
        state.trigger_step = state.k
    log_validation(state, v)
    return fired


def accumulate_average(state: TrainerState, named_params: Mapping[str, Tensor]) -> None:
    """Add the current iterate into the running sum. Only valid once
    triggered; the sum always holds exactly avg_count iterates."""
    if not state.triggered:
        raise RuntimeError("accumulate_average called before the trigger fired")
    if state.iterate_sum is None:
        state.iterate_sum = {name: p.data.copy() for name, p in named_params.items()}
    else:
        for name, p in named_params.items():
            state.iterate_sum[name] += p.data
    state.avg_count += 1


@dataclass
class FinalWeights:
    weights: dict[str, np.ndarray]
    averaged: bool   # False means the fallback to the last iterate was used


def finalize(state: TrainerState, named_params: Mapping[str, Tensor]) -> FinalWeights:
    """Mean of the accumulated iterates; falls back to a copy of the current
    iterate (flagged) when averaging never started."""
    if state.triggered and state.avg_count > 0 and state.iterate_sum is not None:
        inv = 1.0 / state.avg_count
        weights = {name: (s * inv).astype(s.dtype, copy=False)
                   for name, s in state.iterate_sum.items()}
        return FinalWeights(weights=weights, averaged=True)
    weights = {name: p.data.copy() for name, p in named_params.items()}
    return FinalWeights(weights=weights, averaged=False)
