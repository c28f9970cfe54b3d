"""Dense 2-D matrices with tape-based reverse-mode differentiation.

Every trainable computation in this package is expressed through the ops in
this module. Values are float64 numpy arrays, always two-dimensional. To get
gradients, enter a :class:`Tape` as a context manager, run the forward pass
inside it, then call ``tape.backward(loss)`` on a 1x1 loss. Outside a tape
the same ops run as plain numpy, which is the inference path.

Gradients accumulate (ops never overwrite ``grad``), so parameters must be
zeroed between steps via :func:`zero_grads`.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but mathematically unusable (e.g. zero vector)."""


_tls = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_tls, "tape", None)


class Tape:
    """Execution-ordered log of differentiable ops, replayed in reverse.

    One tape per forward/backward pass; tapes are single-threaded but
    independent tapes on different threads do not interact.
    """

    def __init__(self) -> None:
        self._backward_fns: list = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("a Tape is already active on this thread")
        _tls.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _tls.tape = None
        return False

    def __len__(self) -> int:
        return len(self._backward_fns)

    def record(self, backward_fn) -> None:
        self._backward_fns.append(backward_fn)

    def backward(self, loss: "Matrix") -> None:
        """Seed the loss gradient with 1 and replay the tape in reverse."""
        if loss.shape != (1, 1):
            raise DimensionError(f"backward needs a 1x1 loss, got {loss.shape}")
        loss._accum_grad(np.ones((1, 1)))
        for fn in reversed(self._backward_fns):
            fn()


class Matrix:
    """A rows x cols float64 value, plus a gradient buffer filled by backward."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise DimensionError(f"Matrix must be 2-D, got ndim={arr.ndim}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.data[0, 0])

    def _accum_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Matrix(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Matrix):
    """A trainable matrix with a stable identifier and an always-present grad."""

    __slots__ = ("id",)

    def __init__(self, data, id: str):
        super().__init__(data, requires_grad=True)
        self.id = id
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.id!r}, shape={self.shape})"


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


def _recording_tape(*inputs: Matrix) -> "Tape | None":
    tape = _active_tape()
    if tape is not None and any(x.requires_grad for x in inputs):
        return tape
    return None


def _out(data: np.ndarray, tape) -> Matrix:
    return Matrix(data, requires_grad=tape is not None)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Matrix, b: Matrix) -> Matrix:
    """Elementwise sum; b may be a single row broadcast over a's rows."""
    broadcast = b.rows == 1 and a.rows != 1
    if a.cols != b.cols or (a.rows != b.rows and not broadcast):
        raise DimensionError(f"add: {a.shape} vs {b.shape}")
    tape = _recording_tape(a, b)
    out = _out(a.data + b.data, tape)
    if tape:
        def backward(a=a, b=b, out=out, broadcast=broadcast):
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a._accum_grad(g)
            if b.requires_grad:
                b._accum_grad(g.sum(axis=0, keepdims=True) if broadcast else g)
        tape.record(backward)
    return out


def mul(a: Matrix, b: Matrix) -> Matrix:
    """Elementwise product; b may be a single row broadcast over a's rows."""
    broadcast = b.rows == 1 and a.rows != 1
    if a.cols != b.cols or (a.rows != b.rows and not broadcast):
        raise DimensionError(f"mul: {a.shape} vs {b.shape}")
    tape = _recording_tape(a, b)
    out = _out(a.data * b.data, tape)
    if tape:
        def backward(a=a, b=b, out=out, broadcast=broadcast):
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a._accum_grad(g * b.data)
            if b.requires_grad:
                gb = g * a.data
                b._accum_grad(gb.sum(axis=0, keepdims=True) if broadcast else gb)
        tape.record(backward)
    return out


def scale(a: Matrix, c: float) -> Matrix:
    tape = _recording_tape(a)
    out = _out(a.data * c, tape)
    if tape:
        def backward(a=a, out=out, c=c):
            if out.grad is not None and a.requires_grad:
                a._accum_grad(out.grad * c)
        tape.record(backward)
    return out


def add_scalar(a: Matrix, c: float) -> Matrix:
    tape = _recording_tape(a)
    out = _out(a.data + c, tape)
    if tape:
        def backward(a=a, out=out):
            if out.grad is not None and a.requires_grad:
                a._accum_grad(out.grad)
        tape.record(backward)
    return out


def sub(a: Matrix, b: Matrix) -> Matrix:
    return add(a, scale(b, -1.0))


def scale_by(a: Matrix, s: Matrix) -> Matrix:
    """Multiply every entry of a by the 1x1 matrix s (differentiable in both)."""
    if s.shape != (1, 1):
        raise DimensionError(f"scale_by needs a 1x1 scalar, got {s.shape}")
    tape = _recording_tape(a, s)
    out = _out(a.data * s.data[0, 0], tape)
    if tape:
        def backward(a=a, s=s, out=out):
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a._accum_grad(g * s.data[0, 0])
            if s.requires_grad:
                s._accum_grad(np.array([[float(np.sum(g * a.data))]]))
        tape.record(backward)
    return out


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: {a.shape} x {b.shape}")
    tape = _recording_tape(a, b)
    out = _out(a.data @ b.data, tape)
    if tape:
        def backward(a=a, b=b, out=out):
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a._accum_grad(g @ b.data.T)
            if b.requires_grad:
                b._accum_grad(a.data.T @ g)
        tape.record(backward)
    return out


def transpose(a: Matrix) -> Matrix:
    tape = _recording_tape(a)
    out = _out(a.data.T.copy(), tape)
    if tape:
        def backward(a=a, out=out):
            if out.grad is not None and a.requires_grad:
                a._accum_grad(out.grad.T)
        tape.record(backward)
    return out


def relu(a: Matrix) -> Matrix:
    tape = _recording_tape(a)
    out = _out(np.maximum(a.data, 0.0), tape)
    if tape:
        def backward(a=a, out=out):
            if out.grad is not None and a.requires_grad:
                a._accum_grad(out.grad * (a.data > 0.0))
        tape.record(backward)
    return out


def tanh(a: Matrix) -> Matrix:
    tape = _recording_tape(a)
    out = _out(np.tanh(a.data), tape)
    if tape:
        def backward(a=a, out=out):
            if out.grad is not None and a.requires_grad:
                a._accum_grad(out.grad * (1.0 - out.data ** 2))
        tape.record(backward)
    return out


def log(a: Matrix) -> Matrix:
    tape = _recording_tape(a)
    out = _out(np.log(a.data), tape)
    if tape:
        def backward(a=a, out=out):
            if out.grad is not None and a.requires_grad:
                a._accum_grad(out.grad / a.data)
        tape.record(backward)
    return out


def exp(a: Matrix) -> Matrix:
    tape = _recording_tape(a)
    out = _out(np.exp(a.data), tape)
    if tape:
        def backward(a=a, out=out):
            if out.grad is not None and a.requires_grad:
                a._accum_grad(out.grad * out.data)
        tape.record(backward)
    return out


def sum_all(a: Matrix) -> Matrix:
    tape = _recording_tape(a)
    out = _out(np.array([[a.data.sum()]]), tape)
    if tape:
        def backward(a=a, out=out):
            if out.grad is not None and a.requires_grad:
                a._accum_grad(np.full_like(a.data, out.grad[0, 0]))
        tape.record(backward)
    return out


def mean_all(a: Matrix) -> Matrix:
    return scale(sum_all(a), 1.0 / a.data.size)


def mean_rows(a: Matrix) -> Matrix:
    """Column-wise mean over rows, returning a single row."""
    tape = _recording_tape(a)
    out = _out(a.data.mean(axis=0, keepdims=True), tape)
    if tape:
        def backward(a=a, out=out):
            if out.grad is not None and a.requires_grad:
                a._accum_grad(np.repeat(out.grad / a.rows, a.rows, axis=0))
        tape.record(backward)
    return out


def slice_rows(a: Matrix, start: int, stop: int) -> Matrix:
    if not (0 <= start < stop <= a.rows):
        raise DimensionError(f"slice_rows [{start}:{stop}] out of range for {a.shape}")
    tape = _recording_tape(a)
    out = _out(a.data[start:stop].copy(), tape)
    if tape:
        def backward(a=a, out=out, start=start, stop=stop):
            if out.grad is not None and a.requires_grad:
                g = np.zeros_like(a.data)
                g[start:stop] = out.grad
                a._accum_grad(g)
        tape.record(backward)
    return out


def slice_cols(a: Matrix, start: int, stop: int) -> Matrix:
    if not (0 <= start < stop <= a.cols):
        raise DimensionError(f"slice_cols [{start}:{stop}] out of range for {a.shape}")
    tape = _recording_tape(a)
    out = _out(a.data[:, start:stop].copy(), tape)
    if tape:
        def backward(a=a, out=out, start=start, stop=stop):
            if out.grad is not None and a.requires_grad:
                g = np.zeros_like(a.data)
                g[:, start:stop] = out.grad
                a._accum_grad(g)
        tape.record(backward)
    return out


def concat_rows(parts: list[Matrix]) -> Matrix:
    if not parts:
        raise DimensionError("concat_rows of nothing")
    cols = parts[0].cols
    if any(p.cols != cols for p in parts):
        raise DimensionError("concat_rows: column counts differ")
    tape = _recording_tape(*parts)
    out = _out(np.concatenate([p.data for p in parts], axis=0), tape)
    if tape:
        def backward(parts=parts, out=out):
            if out.grad is None:
                return
            r = 0
            for p in parts:
                if p.requires_grad:
                    p._accum_grad(out.grad[r:r + p.rows])
                r += p.rows
        tape.record(backward)
    return out


def concat_cols(parts: list[Matrix]) -> Matrix:
    if not parts:
        raise DimensionError("concat_cols of nothing")
    rows = parts[0].rows
    if any(p.rows != rows for p in parts):
        raise DimensionError("concat_cols: row counts differ")
    tape = _recording_tape(*parts)
    out = _out(np.concatenate([p.data for p in parts], axis=1), tape)
    if tape:
        def backward(parts=parts, out=out):
            if out.grad is None:
                return
            c = 0
            for p in parts:
                if p.requires_grad:
                    p._accum_grad(out.grad[:, c:c + p.cols])
                c += p.cols
        tape.record(backward)
    return out


def gather_rows(table: Matrix, indices: list[int]) -> Matrix:
    """Select rows of table by index; rows may repeat. Backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= table.rows:
        raise DimensionError(f"gather_rows: bad indices for table with {table.rows} rows")
    tape = _recording_tape(table)
    out = _out(table.data[idx].copy(), tape)
    if tape:
        def backward(table=table, out=out, idx=idx):
            if out.grad is not None and table.requires_grad:
                g = np.zeros_like(table.data)
                np.add.at(g, idx, out.grad)
                table._accum_grad(g)
        tape.record(backward)
    return out


def softmax_rows(x: Matrix) -> Matrix:
    """Row-wise softmax with per-row max subtraction for stability."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    tape = _recording_tape(x)
    out = _out(s, tape)
    if tape:
        def backward(x=x, out=out):
            g = out.grad
            if g is None or not x.requires_grad:
                return
            s = out.data
            dot = (g * s).sum(axis=1, keepdims=True)
            x._accum_grad(s * (g - dot))
        tape.record(backward)
    return out


def layer_norm(x: Matrix, gain: Matrix, bias: Matrix, eps: float = 1e-5) -> Matrix:
    """Per-row normalization to zero mean / unit variance, then affine.

    Variance is the population variance over the row. With unit gain and zero
    bias the output rows have mean ~0 and variance ~1 up to the eps floor.
    """
    if gain.shape != (1, x.cols) or bias.shape != (1, x.cols):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} must be 1x{x.cols}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    tape = _recording_tape(x, gain, bias)
    out = _out(xhat * gain.data + bias.data, tape)
    if tape:
        def backward(x=x, gain=gain, bias=bias, out=out, xhat=xhat, inv=inv):
            g = out.grad
            if g is None:
                return
            if bias.requires_grad:
                bias._accum_grad(g.sum(axis=0, keepdims=True))
            if gain.requires_grad:
                gain._accum_grad((g * xhat).sum(axis=0, keepdims=True))
            if x.requires_grad:
                dxhat = g * gain.data
                m1 = dxhat.mean(axis=1, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
                x._accum_grad(inv * (dxhat - m1 - xhat * m2))
        tape.record(backward)
    return out


def dropout(x: Matrix, rate: float, mask_seed: int) -> Matrix:
    """Zero entries independently with probability rate, scale survivors by 1/(1-rate).

    The mask is fully determined by mask_seed. Rate 0 is the identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    rng = np.random.default_rng(mask_seed)
    keep = rng.random(x.shape) >= rate
    factor = keep / (1.0 - rate)
    tape = _recording_tape(x)
    out = _out(x.data * factor, tape)
    if tape:
        def backward(x=x, out=out, factor=factor):
            if out.grad is not None and x.requires_grad:
                x._accum_grad(out.grad * factor)
        tape.record(backward)
    return out


def normalize_rows(x: Matrix) -> Matrix:
    """Scale each row to unit L2 norm; zero rows are rejected."""
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError("normalize_rows: zero row")
    tape = _recording_tape(x)
    out = _out(x.data / norms, tape)
    if tape:
        def backward(x=x, out=out, norms=norms):
            g = out.grad
            if g is None or not x.requires_grad:
                return
            dot = (g * out.data).sum(axis=1, keepdims=True)
            x._accum_grad((g - out.data * dot) / norms)
        tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------

def cosine_distance(x: Matrix, y: Matrix) -> Matrix:
    """1 - cos(x, y) for two row vectors, as a differentiable 1x1 matrix.

    Ranges over [0, 2]; zero-length vectors raise DegenerateInputError.
    """
    if x.rows != 1 or y.rows != 1 or x.cols != y.cols:
        raise DimensionError(f"cosine_distance: {x.shape} vs {y.shape}")
    dot = matmul(normalize_rows(x), transpose(normalize_rows(y)))
    return add_scalar(scale(dot, -1.0), 1.0)


def cosine_similarity_matrix(a: Matrix, b: Matrix) -> Matrix:
    """All-pairs cosine similarity between rows of a and rows of b."""
    if a.cols != b.cols:
        raise DimensionError(f"cosine_similarity_matrix: {a.shape} vs {b.shape}")
    return matmul(normalize_rows(a), transpose(normalize_rows(b)))


@dataclass
class AttentionWeights:
    """Projections for one multi-head attention block.

    wq maps query input width to the attention width, wk/wv map the key/value
    input width, and wo maps the concatenated heads to the output width.
    """
    wq: Parameter
    wk: Parameter
    wv: Parameter
    wo: Parameter
    heads: int

    def parameters(self) -> list[Parameter]:
        return [self.wq, self.wk, self.wv, self.wo]


def init_attention_weights(q_dim: int, kv_dim: int, width: int, out_dim: int,
                           heads: int, name: str, rng: np.random.Generator) -> AttentionWeights:
    if width % heads != 0:
        raise DimensionError(f"attention width {width} not divisible by {heads} heads")
    def w(r, c, suffix):
        return Parameter(rng.normal(0.0, 1.0 / math.sqrt(r), size=(r, c)), f"{name}.{suffix}")
    return AttentionWeights(
        wq=w(q_dim, width, "wq"), wk=w(kv_dim, width, "wk"),
        wv=w(kv_dim, width, "wv"), wo=w(width, out_dim, "wo"), heads=heads)


def multi_head_attention(q_in: Matrix, k_in: Matrix, v_in: Matrix,
                         w: AttentionWeights,
                         collect_scores: list | None = None) -> Matrix:
    """Scaled dot-product attention with per-head projections.

    Per head: softmax(Q Kᵀ / sqrt(d_head)) V; heads are concatenated and
    output-projected. Output has q_in.rows rows. When collect_scores is a
    list, each head's score matrix is appended to it (used for score export).
    """
    if k_in.rows != v_in.rows:
        raise DimensionError(
            f"multi_head_attention: key rows {k_in.rows} != value rows {v_in.rows}")
    if q_in.cols != w.wq.rows:
        raise DimensionError(f"query width {q_in.cols} vs wq {w.wq.shape}")
    if k_in.cols != w.wk.rows:
        raise DimensionError(f"key width {k_in.cols} vs wk {w.wk.shape}")
    if v_in.cols != w.wv.rows:
        raise DimensionError(f"value width {v_in.cols} vs wv {w.wv.shape}")
    width = w.wq.cols
    if width != w.wk.cols or width != w.wv.cols or width != w.wo.rows:
        raise DimensionError("attention projection widths disagree")
    if width % w.heads != 0:
        raise DimensionError(f"width {width} not divisible by {w.heads} heads")
    d_head = width // w.heads
    q = matmul(q_in, w.wq)
    k = matmul(k_in, w.wk)
    v = matmul(v_in, w.wv)
    headed = []
    for h in range(w.heads):
        lo, hi = h * d_head, (h + 1) * d_head
        qh = slice_cols(q, lo, hi)
        kh = slice_cols(k, lo, hi)
        vh = slice_cols(v, lo, hi)
        scores = softmax_rows(scale(matmul(qh, transpose(kh)), 1.0 / math.sqrt(d_head)))
        if collect_scores is not None:
            collect_scores.append(scores)
        headed.append(matmul(scores, vh))
    return matmul(concat_cols(headed), w.wo)
