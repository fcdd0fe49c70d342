"""Differentiable layers: embeddings, gated recurrent cells, highway blocks,
1-d convolution with max-over-time pooling, masked reductions, softmax head.

Layers are pure functions of (parameters, input); parameter containers are
plain dataclasses of Variables and may be shared read-only across threads.
Custom backward rules are registered through ``autodiff.record``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Variable, bias_add, concat, matmul, mul, one_minus, record, relu, reshape, sigmoid, slice_axis, tanh
from .data import EncodedBatch
from .errors import ContractError, DataError, ShapeError


# ---------------------------------------------------------------------------
# Parameter containers and initialization
# ---------------------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, (rows, cols))


@dataclass
class EmbeddingParams:
    table: Variable  # [vocab_size, embed_dim]; row 0 = PAD, row 1 = UNK, both trainable

    @classmethod
    def create(cls, rng, vocab_size: int, embed_dim: int) -> "EmbeddingParams":
        return cls(Variable(rng.uniform(-0.05, 0.05, (vocab_size, embed_dim))))

    def named(self):
        return [("table", self.table)]


@dataclass
class GruParams:
    w_r: Variable
    w_z: Variable
    w_h: Variable
    u_r: Variable
    u_z: Variable
    u_h: Variable
    b_r: Variable
    b_z: Variable
    b_h: Variable

    @classmethod
    def create(cls, rng, in_dim: int, hidden: int) -> "GruParams":
        w = [Variable(glorot_uniform(rng, in_dim, hidden)) for _ in range(3)]
        u = [Variable(glorot_uniform(rng, hidden, hidden)) for _ in range(3)]
        b = [Variable(np.zeros(hidden)) for _ in range(3)]
        return cls(*w, *u, *b)

    def named(self):
        return [(k, getattr(self, k)) for k in ("w_r", "w_z", "w_h", "u_r", "u_z", "u_h", "b_r", "b_z", "b_h")]


@dataclass
class LstmParams:
    w_i: Variable
    w_f: Variable
    w_o: Variable
    w_c: Variable
    u_i: Variable
    u_f: Variable
    u_o: Variable
    u_c: Variable
    b_i: Variable
    b_f: Variable
    b_o: Variable
    b_c: Variable

    @classmethod
    def create(cls, rng, in_dim: int, hidden: int) -> "LstmParams":
        w = [Variable(glorot_uniform(rng, in_dim, hidden)) for _ in range(4)]
        u = [Variable(glorot_uniform(rng, hidden, hidden)) for _ in range(4)]
        b = [Variable(np.zeros(hidden)) for _ in range(4)]
        return cls(*w, *u, *b)

    def named(self):
        return [(k, getattr(self, k)) for k in ("w_i", "w_f", "w_o", "w_c", "u_i", "u_f", "u_o", "u_c", "b_i", "b_f", "b_o", "b_c")]


@dataclass
class HighwayParams:
    w_h: Variable  # [d, d] transform weights
    b_h: Variable
    w_t: Variable  # [d, d] transform-gate weights
    b_t: Variable

    @classmethod
    def create(cls, rng, d: int) -> "HighwayParams":
        return cls(
            Variable(glorot_uniform(rng, d, d)),
            Variable(np.zeros(d)),
            Variable(glorot_uniform(rng, d, d)),
            Variable(np.zeros(d)),
        )

    def named(self):
        return [(k, getattr(self, k)) for k in ("w_h", "b_h", "w_t", "b_t")]


@dataclass
class ConvParams:
    filters: Variable  # [num_filters, window * in_dim], window slices flattened row-major
    bias: Variable  # [num_filters]
    window: int

    @classmethod
    def create(cls, rng, window: int, in_dim: int, num_filters: int) -> "ConvParams":
        if window < 1:
            raise ShapeError(f"conv window must be >= 1, got {window}")
        return cls(
            Variable(glorot_uniform(rng, num_filters, window * in_dim)),
            Variable(np.zeros(num_filters)),
            window,
        )

    def named(self):
        return [("filters", self.filters), ("bias", self.bias)]


@dataclass
class DenseParams:
    w: Variable
    b: Variable

    @classmethod
    def create(cls, rng, in_dim: int, out_dim: int) -> "DenseParams":
        return cls(Variable(glorot_uniform(rng, in_dim, out_dim)), Variable(np.zeros(out_dim)))

    def named(self):
        return [("w", self.w), ("b", self.b)]


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------

def embedding_lookup(table: Variable, ids: np.ndarray) -> Variable:
    """Row gather; the gradient scatter-adds into looked-up rows only."""
    vocab_size = table.shape[0]
    bad = (ids < 0) | (ids >= vocab_size)
    if bad.any():
        pos = tuple(int(v) for v in np.argwhere(bad)[0])
        raise DataError(f"token id {int(ids[pos])} at position {pos} outside vocabulary of size {vocab_size}")
    out = Variable(table.value[ids])

    def bw(g: np.ndarray) -> None:
        np.add.at(table.ensure_grad(), ids.reshape(-1), g.reshape(-1, table.shape[1]))

    return record("embedding_lookup", out, bw)


def embed(batch: EncodedBatch, params: EmbeddingParams) -> Variable:
    return embedding_lookup(params.table, batch.ids)


# ---------------------------------------------------------------------------
# Recurrent cells
# ---------------------------------------------------------------------------

def gru_cell_step(x_t: Variable, h_prev: Variable, p: GruParams) -> Variable:
    """One gated-recurrent-unit step.

    r = sigmoid(x·W_r + h·U_r + b_r)
    z = sigmoid(x·W_z + h·U_z + b_z)
    cand = tanh(x·W_h + (r*h)·U_h + b_h)
    h' = z*h + (1-z)*cand        (the update gate keeps the OLD state)
    """
    r = sigmoid(bias_add(matmul(x_t, p.w_r) + matmul(h_prev, p.u_r), p.b_r))
    z = sigmoid(bias_add(matmul(x_t, p.w_z) + matmul(h_prev, p.u_z), p.b_z))
    cand = tanh(bias_add(matmul(x_t, p.w_h) + matmul(mul(r, h_prev), p.u_h), p.b_h))
    return mul(z, h_prev) + mul(one_minus(z), cand)


def lstm_cell_step(x_t: Variable, state_prev: tuple[Variable, Variable], p: LstmParams) -> tuple[Variable, Variable]:
    """Standard LSTM step: sigmoid input/forget/output gates, tanh candidate."""
    h_prev, c_prev = state_prev
    i = sigmoid(bias_add(matmul(x_t, p.w_i) + matmul(h_prev, p.u_i), p.b_i))
    f = sigmoid(bias_add(matmul(x_t, p.w_f) + matmul(h_prev, p.u_f), p.b_f))
    o = sigmoid(bias_add(matmul(x_t, p.w_o) + matmul(h_prev, p.u_o), p.b_o))
    cand = tanh(bias_add(matmul(x_t, p.w_c) + matmul(h_prev, p.u_c), p.b_c))
    c_t = mul(f, c_prev) + mul(i, cand)
    h_t = mul(o, tanh(c_t))
    return h_t, c_t


def recurrent_scan(inputs: Variable, step, init_state, direction: str = "forward") -> Variable:
    """Unroll a cell over the time axis of [batch, T, d] inputs.

    ``step(x_t, state) -> (h_t, new_state)``. The backward direction scans
    reversed time and stores outputs back at their original positions, so
    position t holds the state computed from the suffix t..T.
    """
    if inputs.value.ndim != 3:
        raise ShapeError(f"recurrent_scan expects [batch, T, d], got {inputs.shape}")
    batch, steps, width = inputs.shape
    if steps < 1:
        raise ContractError("recurrent_scan needs at least one time step")
    if direction not in ("forward", "backward"):
        raise ContractError(f"unknown scan direction: {direction!r}")
    order = range(steps) if direction == "forward" else range(steps - 1, -1, -1)
    outputs: list[Variable | None] = [None] * steps
    state = init_state
    hidden = None
    for t in order:
        x_t = reshape(slice_axis(inputs, 1, t, t + 1), (batch, width))
        h_t, state = step(x_t, state)
        hidden = h_t.shape[1]
        outputs[t] = reshape(h_t, (batch, 1, hidden))
    return concat(outputs, axis=1)


def gru_scan(inputs: Variable, p: GruParams, direction: str = "forward") -> Variable:
    batch = inputs.shape[0]
    hidden = p.b_r.shape[0]

    def step(x_t, h):
        h_t = gru_cell_step(x_t, h, p)
        return h_t, h_t

    return recurrent_scan(inputs, step, Variable(np.zeros((batch, hidden))), direction)


def lstm_scan(inputs: Variable, p: LstmParams, direction: str = "forward") -> Variable:
    batch = inputs.shape[0]
    hidden = p.b_i.shape[0]

    def step(x_t, state):
        h_t, c_t = lstm_cell_step(x_t, state, p)
        return h_t, (h_t, c_t)

    init = (Variable(np.zeros((batch, hidden))), Variable(np.zeros((batch, hidden))))
    return recurrent_scan(inputs, step, init, direction)


def birnn_context(x: Variable, fwd_out: Variable, bwd_out: Variable) -> Variable:
    """Per-position [right-context-state | embedding | left-context-state]."""
    if not (x.shape[:2] == fwd_out.shape[:2] == bwd_out.shape[:2]):
        raise ShapeError(
            f"batch/time dims disagree: {x.shape} vs {fwd_out.shape} vs {bwd_out.shape}"
        )
    return concat([bwd_out, x, fwd_out], axis=2)


# ---------------------------------------------------------------------------
# Highway and convolution
# ---------------------------------------------------------------------------

def highway_forward(x_tilde: Variable, p: HighwayParams, g=relu) -> Variable:
    """Gated skip connection applied independently at every position.

    gate = sigmoid(x·W_t + b_t);  y = gate*g(x·W_h + b_h) + (1-gate)*x.
    The gate and transform read the same full input, which the square
    parameter shapes require.
    """
    d = x_tilde.shape[-1]
    for name, w in (("transform", p.w_h), ("gate", p.w_t)):
        if w.shape != (d, d):
            raise ShapeError(f"highway {name} weights must be [{d},{d}], got {w.shape}")
    orig_shape = x_tilde.shape
    is_flat = x_tilde.value.ndim == 2
    flat = x_tilde if is_flat else reshape(x_tilde, (x_tilde.value.size // d, d))
    gate = sigmoid(bias_add(matmul(flat, p.w_t), p.b_t))
    transformed = g(bias_add(matmul(flat, p.w_h), p.b_h))
    y = mul(gate, transformed) + mul(one_minus(gate), flat)
    return y if is_flat else reshape(y, orig_shape)


def dense_relu_positions(x: Variable, p: DenseParams) -> Variable:
    """relu(x·W + b) applied independently at every (batch, position)."""
    d = x.shape[-1]
    if p.w.shape[0] != d:
        raise ShapeError(f"dense block expects input width {p.w.shape[0]}, got {d}")
    orig_shape = x.shape
    is_flat = x.value.ndim == 2
    flat = x if is_flat else reshape(x, (x.value.size // d, d))
    y = relu(bias_add(matmul(flat, p.w), p.b))
    if is_flat:
        return y
    return reshape(y, orig_shape[:-1] + (p.w.shape[1],))


def transpose(x: Variable) -> Variable:
    if x.value.ndim != 2:
        raise ShapeError(f"transpose expects rank 2, got {x.shape}")
    out = Variable(x.value.T.copy())

    def bw(g: np.ndarray) -> None:
        x.ensure_grad()[...] += g.T

    return record("transpose", out, bw)


def conv1d_forward(y: Variable, p: ConvParams) -> Variable:
    """Valid (no-padding) 1-d convolution with a relu response.

    Output position i is relu(filters · flattened y[i : i+window] + bias),
    giving a feature map of length T - window + 1.
    """
    if y.value.ndim != 3:
        raise ShapeError(f"conv1d expects [batch, T, d], got {y.shape}")
    batch, steps, width = y.shape
    h = p.window
    if steps < h:
        raise ContractError(f"sequence length {steps} shorter than conv window {h}")
    if p.filters.shape[1] != h * width:
        raise ShapeError(f"filters expect flattened window of {p.filters.shape[1]}, input gives {h}*{width}")
    weights = transpose(p.filters)  # [h*d, F]
    if h == 1:
        flat = reshape(y, (batch * steps, width))
        responses = bias_add(matmul(flat, weights), p.bias)
        return relu(reshape(responses, (batch, steps, p.bias.shape[0])))
    positions = []
    for i in range(steps - h + 1):
        window = reshape(slice_axis(y, 1, i, i + h), (batch, h * width))
        responses = bias_add(matmul(window, weights), p.bias)
        positions.append(reshape(responses, (batch, 1, p.bias.shape[0])))
    return relu(concat(positions, axis=1))


def maxpool_over_time(feature_map: Variable) -> Variable:
    """Per-filter maximum over positions; gradient goes to the first argmax."""
    if feature_map.value.ndim != 3:
        raise ShapeError(f"maxpool expects [batch, L, filters], got {feature_map.shape}")
    if feature_map.shape[1] < 1:
        raise ContractError("maxpool over an empty time axis")
    pooled, _idx = ad.max_over_axis(feature_map, axis=1)
    return pooled


# ---------------------------------------------------------------------------
# Masked reductions over time
# ---------------------------------------------------------------------------

def _validate_lengths(x: Variable, lengths: np.ndarray) -> np.ndarray:
    if x.value.ndim != 3:
        raise ShapeError(f"time reduction expects [batch, T, d], got {x.shape}")
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (x.shape[0],):
        raise ShapeError(f"lengths shape {lengths.shape} does not match batch {x.shape[0]}")
    if (lengths < 1).any() or (lengths > x.shape[1]).any():
        raise ContractError(f"lengths must lie in [1, {x.shape[1]}]")
    return lengths


def _time_mask(x: Variable, lengths: np.ndarray) -> np.ndarray:
    return np.arange(x.shape[1])[None, :, None] < lengths[:, None, None]


def sum_over_time(x: Variable, lengths: np.ndarray) -> Variable:
    """Sum of the first lengths[b] positions; padding is excluded.

    Summands are sorted first so the reduction is bit-exactly independent
    of token order.
    """
    lengths = _validate_lengths(x, lengths)
    mask = _time_mask(x, lengths)
    masked = np.where(mask, x.value, 0.0)
    out = Variable(np.sort(masked, axis=1).sum(axis=1))

    def bw(g: np.ndarray) -> None:
        x.ensure_grad()[...] += g[:, None, :] * mask

    return record("sum_over_time", out, bw)


def mean_over_time(x: Variable, lengths: np.ndarray) -> Variable:
    """Mean over the TRUE length; positions beyond it are excluded."""
    lengths = _validate_lengths(x, lengths)
    mask = _time_mask(x, lengths)
    masked = np.where(mask, x.value, 0.0)
    inv = 1.0 / lengths.astype(np.float64)
    out = Variable(np.sort(masked, axis=1).sum(axis=1) * inv[:, None])

    def bw(g: np.ndarray) -> None:
        x.ensure_grad()[...] += (g * inv[:, None])[:, None, :] * mask

    return record("mean_over_time", out, bw)


# ---------------------------------------------------------------------------
# Softmax head
# ---------------------------------------------------------------------------

def softmax_rows(logits: Variable) -> Variable:
    """Row softmax with max-subtraction; rows sum to 1."""
    if logits.value.ndim != 2:
        raise ShapeError(f"softmax expects [batch, classes], got {logits.shape}")
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out = Variable(p)

    def bw(g: np.ndarray) -> None:
        # Jacobian-vector product: dz = p * (g - <g, p>)
        inner = np.sum(g * p, axis=1, keepdims=True)
        logits.ensure_grad()[...] += p * (g - inner)

    return record("softmax_rows", out, bw)


def dense_softmax(x: Variable, w: Variable, b: Variable) -> Variable:
    if w.shape[1] < 2:
        raise ContractError(f"classifier needs at least 2 classes, got {w.shape[1]}")
    return softmax_rows(bias_add(matmul(x, w), b))
