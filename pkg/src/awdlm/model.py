"""Stacked LSTM language model with tied input/output embeddings and the
full dropout suite: per-pass variational masks on activations, row-level
embedding dropout, and DropConnect on the recurrent matrices.

Widths: the first layer reads embedding-sized vectors, the last layer emits
embedding-sized vectors (so the softmax can share the embedding matrix), and
any inner layers use the hidden width. All masks are sampled once per
forward/backward pass and reused at every timestep of that pass; the raw
weights are never overwritten, masking happens on the tape so the optimizer
always updates the originals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng
from . import tensor as T
from .tensor import Tensor, sample_bernoulli_mask

# gate order inside the stacked 4*out preactivation
_GATES = ("input", "forget", "cell", "output")


@dataclass
class LstmLayerParams:
    w_in: Tensor    # (in_width, 4*out_width)
    w_rec: Tensor   # (out_width, 4*out_width); the DropConnect target
    bias: Tensor    # (4*out_width,)

    @property
    def out_width(self) -> int:
        return self.w_rec.shape[0]

    @property
    def in_width(self) -> int:
        return self.w_in.shape[0]


class LMParameters:
    """All trainable tensors. The softmax weight is the embedding tensor
    itself (transposed on the tape), not a copy."""

    def __init__(self, embedding: Tensor, layers: list[LstmLayerParams], softmax_bias: Tensor):
        self.embedding = embedding
        self.layers = layers
        self.softmax_bias = softmax_bias

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def hidden_dim(self) -> int:
        # width of the widest recurrent state; equals embed_dim when L == 1
        return max(layer.out_width for layer in self.layers)

    @property
    def dtype(self):
        return self.embedding.dtype

    def named(self) -> dict[str, Tensor]:
        out = {"embedding": self.embedding}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.w_in"] = layer.w_in
            out[f"layer{i}.w_rec"] = layer.w_rec
            out[f"layer{i}.bias"] = layer.bias
        out["softmax_bias"] = self.softmax_bias
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named().values())

    def count(self) -> int:
        return sum(t.size for t in self.tensors())


def layer_widths(num_layers: int, embed_dim: int, hidden_dim: int) -> list[tuple[int, int]]:
    """(input, output) width per layer: embed in, embed out, hidden inside."""
    widths = []
    for l in range(num_layers):
        w_in = embed_dim if l == 0 else hidden_dim
        w_out = embed_dim if l == num_layers - 1 else hidden_dim
        widths.append((w_in, w_out))
    return widths


def init_parameters(vocab_size: int, embed_dim: int, hidden_dim: int,
                    num_layers: int, rng: Rng, dtype=np.float32) -> LMParameters:
    """Uniform init: embeddings in [-0.1, 0.1], recurrent and input weights
    in [-1/sqrt(hidden), 1/sqrt(hidden)], biases zero."""
    if min(vocab_size, embed_dim, hidden_dim, num_layers) < 1:
        raise ValueError(
            f"dimensions must be positive, got V={vocab_size} e={embed_dim} "
            f"H={hidden_dim} L={num_layers}")
    if embed_dim > hidden_dim:
        raise ValueError(f"embed_dim {embed_dim} must not exceed hidden_dim {hidden_dim}")
    dtype = np.dtype(dtype)
    emb = Tensor(rng.uniform(-0.1, 0.1, (vocab_size, embed_dim), dtype=dtype),
                 requires_grad=True)
    bound = 1.0 / math.sqrt(hidden_dim)
    layers = []
    for w_in, w_out in layer_widths(num_layers, embed_dim, hidden_dim):
        layers.append(LstmLayerParams(
            w_in=Tensor(rng.uniform(-bound, bound, (w_in, 4 * w_out), dtype=dtype),
                        requires_grad=True),
            w_rec=Tensor(rng.uniform(-bound, bound, (w_out, 4 * w_out), dtype=dtype),
                         requires_grad=True),
            bias=Tensor(np.zeros(4 * w_out, dtype=dtype), requires_grad=True),
        ))
    softmax_bias = Tensor(np.zeros(vocab_size, dtype=dtype), requires_grad=True)
    return LMParameters(emb, layers, softmax_bias)


# -- dropout masks ---------------------------------------------------------

@dataclass
class DropoutRates:
    """Drop probabilities (not keep probabilities) for each site."""
    input: float = 0.4      # on embedding output fed to the first layer
    hidden: float = 0.3     # between stacked layers
    output: float = 0.4     # on the final layer's output before the softmax
    embedding: float = 0.1  # row-level, whole words
    weight: float = 0.5     # DropConnect on recurrent matrices

    def validate(self) -> None:
        for name, p in vars(self).items():
            if not 0.0 <= p < 1.0:
                raise ValueError(f"dropout rate {name}={p} outside [0, 1)")


@dataclass
class MaskSet:
    """One pass worth of masks. A None entry means that site is disabled.

    embedding_scale is a (V,) vector of 0 or 1/keep values applied to whole
    embedding rows; activation masks are (batch, width) and differ per batch
    row; recurrent_masks match each layer's w_rec shape.
    """
    embedding_scale: Tensor | None = None
    input_mask: Tensor | None = None
    hidden_masks: list = field(default_factory=list)
    output_mask: Tensor | None = None
    recurrent_masks: list = field(default_factory=list)


def sample_masks(params: LMParameters, batch: int, rates: DropoutRates, rng: Rng) -> MaskSet:
    """Draw every mask for one forward/backward pass."""
    rates.validate()
    if batch < 1:
        raise ValueError(f"batch must be positive, got {batch}")
    dtype = params.dtype
    masks = MaskSet()
    if rates.embedding > 0:
        masks.embedding_scale = sample_bernoulli_mask(
            rng, params.vocab_size, 1.0 - rates.embedding, dtype)
    if rates.input > 0:
        masks.input_mask = sample_bernoulli_mask(
            rng, (batch, params.embed_dim), 1.0 - rates.input, dtype)
    for layer in params.layers[:-1]:
        m = None
        if rates.hidden > 0:
            m = sample_bernoulli_mask(rng, (batch, layer.out_width), 1.0 - rates.hidden, dtype)
        masks.hidden_masks.append(m)
    if rates.output > 0:
        masks.output_mask = sample_bernoulli_mask(
            rng, (batch, params.embed_dim), 1.0 - rates.output, dtype)
    for layer in params.layers:
        m = None
        if rates.weight > 0:
            m = sample_bernoulli_mask(rng, layer.w_rec.shape, 1.0 - rates.weight, dtype)
        masks.recurrent_masks.append(m)
    return masks


def effective_recurrent_weights(params: LMParameters, masks: MaskSet | None) -> list[Tensor]:
    """Per-layer recurrent matrices with DropConnect applied on the tape.

    Returns the stored tensors untouched when masking is off; gradients
    always flow to the stored weights, never to the masked copies.
    """
    if masks is None or not masks.recurrent_masks:
        return [layer.w_rec for layer in params.layers]
    out = []
    for layer, m in zip(params.layers, masks.recurrent_masks):
        out.append(layer.w_rec if m is None else T.mul(layer.w_rec, m))
    return out


def apply_weight_drop(params: LMParameters, p_drop: float, rng: Rng) -> list[Tensor]:
    """Sample one DropConnect mask per layer and return the effective
    recurrent matrices for a single pass."""
    if not 0.0 <= p_drop < 1.0:
        raise ValueError(f"weight-drop probability must be in [0, 1), got {p_drop}")
    if p_drop == 0.0:
        return [layer.w_rec for layer in params.layers]
    eff = []
    for layer in params.layers:
        m = sample_bernoulli_mask(rng, layer.w_rec.shape, 1.0 - p_drop, params.dtype)
        eff.append(T.mul(layer.w_rec, m))
    return eff


# -- forward ---------------------------------------------------------------

def embed(ids: np.ndarray, embedding: Tensor, row_scale: Tensor | None = None) -> Tensor:
    """Look up embedding rows for a flat id array.

    row_scale carries the embedding-dropout factors (0 for dropped words,
    1/keep for survivors); because the factor attaches to the word id, every
    occurrence of a dropped word is zeroed within the pass.
    """
    ids = np.asarray(ids)
    if ids.ndim != 1:
        raise ValueError(f"embed expects flat ids, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= embedding.shape[0]):
        raise ValueError(
            f"token id out of range for vocabulary of {embedding.shape[0]}")
    out = T.rows(embedding, ids)
    if row_scale is not None:
        if row_scale.shape != (embedding.shape[0],):
            raise ValueError(
                f"row_scale shape {row_scale.shape} does not match vocabulary "
                f"of {embedding.shape[0]}")
        out = T.scale_rows(out, Tensor(row_scale.data[ids]))
    return out


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              w_in: Tensor, w_rec: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """One timestep. Gate preactivations are a single (batch, 4*out) matmul
    pair split into input/forget/cell/output quarters."""
    pre = T.add(T.add(T.matmul(x, w_in), T.matmul(h_prev, w_rec)), bias)
    d = w_rec.shape[0]
    i = T.sigmoid(T.slice_cols(pre, 0, d))
    f = T.sigmoid(T.slice_cols(pre, d, 2 * d))
    g = T.tanh(T.slice_cols(pre, 2 * d, 3 * d))
    o = T.sigmoid(T.slice_cols(pre, 3 * d, 4 * d))
    c = T.add(T.mul(i, g), T.mul(f, c_prev))
    h = T.mul(o, T.tanh(c))
    return h, c


@dataclass
class HiddenState:
    h: list  # per-layer (batch, out_width) tensors
    c: list

    @classmethod
    def zeros(cls, params: LMParameters, batch: int) -> "HiddenState":
        dtype = params.dtype
        hs = [Tensor(np.zeros((batch, layer.out_width), dtype=dtype)) for layer in params.layers]
        cs = [Tensor(np.zeros((batch, layer.out_width), dtype=dtype)) for layer in params.layers]
        return cls(hs, cs)

    def detach(self) -> "HiddenState":
        return HiddenState([t.detach() for t in self.h], [t.detach() for t in self.c])

    @property
    def batch(self) -> int:
        return self.h[0].shape[0]


@dataclass
class ForwardResult:
    """Logits are (length*batch, vocab) in time-major order: row t*batch + b
    scores position t of batch row b. raw/dropped are the final layer's
    outputs in the same layout, before and after the output mask."""
    logits: Tensor
    state: HiddenState
    raw: Tensor
    dropped: Tensor
    batch: int
    length: int


def forward(params: LMParameters, inputs: np.ndarray, state: HiddenState | None = None,
            masks: MaskSet | None = None) -> ForwardResult:
    """Run one window through the stack and the tied softmax projection.

    inputs: (batch, length) int ids. Passing masks=None disables every
    dropout site, which is the evaluation path.
    """
    inputs = np.asarray(inputs)
    if inputs.ndim != 2:
        raise ValueError(f"inputs must be (batch, length), got shape {inputs.shape}")
    batch, length = inputs.shape
    if length < 1:
        raise ValueError("empty window")
    if state is None:
        state = HiddenState.zeros(params, batch)
    elif state.batch != batch:
        raise ValueError(f"stale state: batch {state.batch} vs inputs batch {batch}")

    w_rec_eff = effective_recurrent_weights(params, masks)
    ids_flat = np.ascontiguousarray(inputs.T).reshape(-1)  # time-major
    row_scale = masks.embedding_scale if masks is not None else None
    emb = embed(ids_flat, params.embedding, row_scale)

    h = list(state.h)
    c = list(state.c)
    raw_steps = []
    dropped_steps = []
    last = params.num_layers - 1
    for t in range(length):
        x = T.slice_rows(emb, t * batch, (t + 1) * batch)
        if masks is not None and masks.input_mask is not None:
            x = T.mul(x, masks.input_mask)
        for l, layer in enumerate(params.layers):
            h[l], c[l] = lstm_cell(x, h[l], c[l], layer.w_in, w_rec_eff[l], layer.bias)
            x = h[l]
            if l < last and masks is not None and masks.hidden_masks[l] is not None:
                x = T.mul(x, masks.hidden_masks[l])
        raw_steps.append(h[last])
        if masks is not None and masks.output_mask is not None:
            dropped_steps.append(T.mul(h[last], masks.output_mask))
        else:
            dropped_steps.append(h[last])

    raw = T.concat_rows(raw_steps) if length > 1 else raw_steps[0]
    dropped = T.concat_rows(dropped_steps) if length > 1 else dropped_steps[0]
    logits = T.add(T.matmul(dropped, T.transpose(params.embedding)), params.softmax_bias)
    return ForwardResult(logits=logits, state=HiddenState(h, c), raw=raw,
                         dropped=dropped, batch=batch, length=length)


def flatten_targets(targets: np.ndarray) -> np.ndarray:
    """(batch, length) targets to the time-major layout of the logits."""
    targets = np.asarray(targets)
    return np.ascontiguousarray(targets.T).reshape(-1)


def training_loss(result: ForwardResult, targets: np.ndarray,
                  alpha: float = 0.0, beta: float = 0.0) -> tuple[Tensor, Tensor]:
    """Total window loss and its cross-entropy part.

    Cross-entropy is averaged over every position. The activation penalty
    (alpha) is the mean per-example L2 norm of the dropped final outputs;
    the temporal penalty (beta) is the mean per-example L2 norm of the
    difference between consecutive raw final outputs.
    """
    if alpha < 0 or beta < 0:
        raise ValueError(f"penalty weights must be nonnegative, got alpha={alpha} beta={beta}")
    tflat = flatten_targets(targets)
    if tflat.size != result.logits.shape[0]:
        raise ValueError(
            f"targets cover {tflat.size} positions but logits have {result.logits.shape[0]}")
    ce_vec = T.softmax_cross_entropy(result.logits, tflat)
    ce = T.mean_all(ce_vec)
    total = ce
    if alpha > 0:
        total = T.add(total, T.scale(T.mean_all(T.l2norm_rows(result.dropped)), alpha))
    if beta > 0 and result.length > 1:
        b, n = result.batch, result.length
        earlier = T.slice_rows(result.raw, 0, (n - 1) * b)
        later = T.slice_rows(result.raw, b, n * b)
        total = T.add(total, T.scale(T.mean_all(T.l2norm_rows(T.sub(earlier, later))), beta))
    return total, ce
