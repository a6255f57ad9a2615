"""Dense tensors with a reverse-mode gradient tape.

A deliberately small operation set, just enough for LSTM language modeling:
matmul, elementwise add/mul/sub, scalar scaling, sigmoid, tanh, softmax
cross-entropy, row concat/slice/gather, per-row L2 norms and full reductions.
Storage is contiguous row-major numpy; float32 is the training precision and
float64 the gradient-checking precision. There is no broadcasting beyond the
per-row bias add in `add`.

Each operation records its inputs and a backward closure on the produced
tensor. `backward(loss)` replays the tape in reverse topological order and
accumulates adjoints additively, so a tensor used in several places receives
the sum of the contributions.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .rng import Rng

__all__ = [
    "Tensor", "constant", "parameter", "backward",
    "matmul", "add", "sub", "mul", "scale",
    "sigmoid", "tanh", "softmax_cross_entropy",
    "concat_rows", "slice_rows", "slice_cols", "rows", "scale_rows",
    "transpose", "l2norm_rows", "mean_all", "sum_all",
    "sample_bernoulli_mask",
]


class Tensor:
    """N-d array node on the gradient tape.

    `requires_grad` marks leaves whose gradients the caller wants; interior
    nodes propagate automatically when any ancestor requires a gradient.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_needs")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        arr = np.ascontiguousarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = tuple(_parents)
        self._backward = _backward
        self._needs = self.requires_grad or any(p._needs for p in self._parents)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Constant view of the same storage, cut off from the tape."""
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        backward(self)

    # operator sugar; the module-level functions are the canonical API
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self) -> str:
        tag = self.op or ("param" if self.requires_grad else "const")
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, {tag})"


def constant(data, dtype=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr)


def parameter(data, dtype=None) -> Tensor:
    arr = np.array(data, dtype=dtype, copy=True)
    return Tensor(arr, requires_grad=True)


# -- tape internals ------------------------------------------------------

def _accum(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution to `t`, allocating on first touch."""
    if not t._needs:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _check_same_dtype(op: str, *ts: Tensor) -> None:
    d0 = ts[0].data.dtype
    for t in ts[1:]:
        if t.data.dtype != d0:
            raise TypeError(f"{op}: mixed dtypes {d0.name} and {t.data.dtype.name}")


def _topo_order(root: Tensor) -> list:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p._needs:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Reverse pass from a scalar loss; accumulates into .grad of leaves."""
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar, got shape {loss.shape}")
    if not loss._needs:
        return
    order = _topo_order(loss)
    seed = np.ones_like(loss.data)
    if loss.grad is None:
        loss.grad = seed
    else:
        loss.grad += seed
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- operations ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    _check_same_dtype("matmul", a, b)
    out = Tensor(a.data @ b.data, _parents=(a, b), op="matmul")

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    out._backward = bwd
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also accepts a 1-d bias added to every row of a 2-d a."""
    _check_same_dtype("add", a, b)
    bias = a.data.ndim == 2 and b.data.ndim == 1
    if bias:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"add: bias length {b.shape} does not match rows of {a.shape}")
    elif a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data, _parents=(a, b), op="add")

    def bwd(g):
        _accum(a, g)
        _accum(b, g.sum(axis=0) if bias else g)

    out._backward = bwd
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    _check_same_dtype("sub", a, b)
    out = Tensor(a.data - b.data, _parents=(a, b), op="sub")

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    out._backward = bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    _check_same_dtype("mul", a, b)
    out = Tensor(a.data * b.data, _parents=(a, b), op="mul")

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    out._backward = bwd
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * a.data.dtype.type(c), _parents=(a,), op="scale")

    def bwd(g):
        _accum(a, g * c)

    out._backward = bwd
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    out = Tensor(out_data, _parents=(a,), op="sigmoid")

    def bwd(g):
        _accum(a, g * out_data * (1.0 - out_data))

    out._backward = bwd
    return out


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    out = Tensor(out_data, _parents=(a,), op="tanh")

    def bwd(g):
        _accum(a, g * (1.0 - out_data * out_data))

    out._backward = bwd
    return out


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row negative log softmax probability of the target class.

    logits: (N, V); targets: (N,) integer class ids. Returns an (N,) tensor.
    Log-sum-exp is computed against the row max for stability.
    """
    if logits.data.ndim != 2:
        raise ValueError(f"softmax_cross_entropy expects 2-d logits, got {logits.shape}")
    tgt = np.asarray(targets)
    if tgt.ndim != 1 or tgt.shape[0] != logits.shape[0]:
        raise ValueError(
            f"softmax_cross_entropy: targets shape {tgt.shape} does not match logits {logits.shape}")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= logits.shape[1]):
        raise ValueError(
            f"softmax_cross_entropy: target id out of range for {logits.shape[1]} classes")
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    z = np.exp(x - m)
    denom = z.sum(axis=1)
    probs = z / denom[:, None]
    n = np.arange(x.shape[0])
    losses = (m[:, 0] + np.log(denom)) - x[n, tgt]
    out = Tensor(losses, _parents=(logits,), op="softmax_xent")

    def bwd(g):
        d = probs * g[:, None]
        d[n, tgt] -= g
        _accum(logits, d)

    out._backward = bwd
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat_rows of an empty sequence")
    cols = parts[0].shape[1:]
    for p in parts:
        if p.shape[1:] != cols:
            raise ValueError(f"concat_rows: trailing dims differ, {p.shape} vs {parts[0].shape}")
    _check_same_dtype("concat_rows", *parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=0),
                 _parents=tuple(parts), op="concat_rows")

    def bwd(g):
        ofs = 0
        for p in parts:
            n = p.shape[0]
            _accum(p, g[ofs:ofs + n])
            ofs += n

    out._backward = bwd
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start <= stop <= a.shape[0]):
        raise ValueError(f"slice_rows [{start}:{stop}] out of range for shape {a.shape}")
    out = Tensor(a.data[start:stop], _parents=(a,), op="slice_rows")

    def bwd(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        _accum(a, full)

    out._backward = bwd
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"slice_cols expects a 2-d tensor, got {a.shape}")
    if not (0 <= start <= stop <= a.shape[1]):
        raise ValueError(f"slice_cols [{start}:{stop}] out of range for shape {a.shape}")
    out = Tensor(a.data[:, start:stop], _parents=(a,), op="slice_cols")

    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accum(a, full)

    out._backward = bwd
    return out


def rows(a: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows a[ids]; backward scatter-adds, so repeated ids accumulate."""
    idx = np.asarray(ids)
    if idx.ndim != 1:
        raise ValueError(f"rows: index array must be 1-d, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ValueError(f"rows: index out of range for {a.shape[0]} rows")
    out = Tensor(a.data[idx], _parents=(a,), op="rows")

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    out._backward = bwd
    return out


def scale_rows(a: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of a 2-d tensor by s[i]."""
    if a.data.ndim != 2 or s.data.ndim != 1 or s.shape[0] != a.shape[0]:
        raise ValueError(f"scale_rows: shapes {a.shape} and {s.shape} incompatible")
    _check_same_dtype("scale_rows", a, s)
    out = Tensor(a.data * s.data[:, None], _parents=(a, s), op="scale_rows")

    def bwd(g):
        _accum(a, g * s.data[:, None])
        _accum(s, (g * a.data).sum(axis=1))

    out._backward = bwd
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose expects a 2-d tensor, got {a.shape}")
    out = Tensor(a.data.T, _parents=(a,), op="transpose")

    def bwd(g):
        _accum(a, g.T)

    out._backward = bwd
    return out


def l2norm_rows(a: Tensor) -> Tensor:
    """Euclidean norm of each row of a 2-d tensor; zero rows get zero gradient."""
    if a.data.ndim != 2:
        raise ValueError(f"l2norm_rows expects a 2-d tensor, got {a.shape}")
    norms = np.sqrt((a.data * a.data).sum(axis=1))
    out = Tensor(norms, _parents=(a,), op="l2norm_rows")

    def bwd(g):
        safe = np.where(norms > 0, norms, 1.0)
        _accum(a, (g / safe)[:, None] * a.data)

    out._backward = bwd
    return out


def mean_all(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.mean(), dtype=a.data.dtype), _parents=(a,), op="mean_all")
    inv = 1.0 / a.size

    def bwd(g):
        _accum(a, np.full_like(a.data, g * inv))

    out._backward = bwd
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.sum(), dtype=a.data.dtype), _parents=(a,), op="sum_all")

    def bwd(g):
        _accum(a, np.full_like(a.data, g))

    out._backward = bwd
    return out


# -- masks ---------------------------------------------------------------

def sample_bernoulli_mask(rng: Rng, shape, keep_prob: float, dtype=np.float32) -> Tensor:
    """Inverted-dropout mask: entries are 1/keep_prob with probability
    keep_prob and 0 otherwise, so masked activations keep their expectation.

    One call produces one mask; reusing the returned tensor across timesteps
    is what makes the dropout variational.
    """
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    keep = rng.random(shape) < keep_prob
    data = keep.astype(dtype) * np.dtype(dtype).type(1.0 / keep_prob)
    return Tensor(data)
