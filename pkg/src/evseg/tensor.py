"""Dense tensors with reverse-mode differentiation on a gradient tape.

Layout conventions: row-major storage, channel-first feature maps (C, H, W),
sequences as (L, D). The main path runs in float32; oracle and gradient-check
paths build the same graphs in float64 by passing dtype explicitly.

Ops record onto the thread-local active :class:`GradTape` whenever any input
requires a gradient (directly or through an earlier recorded op). Replaying
the tape in exact reverse execution order is a valid topological order, so
`GradTape.backward` is a single reversed pass.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, StateError

DTYPE = np.float32

_tls = threading.local()


def _active_tape():
    stack = getattr(_tls, "tapes", None)
    return stack[-1] if stack else None


class Tensor:
    """Shape-carrying real array, optionally tracked for differentiation.

    A tensor is immutable once an op has consumed it; the two sanctioned
    mutations are gradient accumulation (`grad`) and optimizer updates on
    leaf `data` between tapes.
    """

    __slots__ = ("data", "requires_grad", "grad", "_graph_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=DTYPE if dtype is None else dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._graph_tape = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._graph_tape = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


class _Node:
    __slots__ = ("name", "inputs", "out", "bwd")

    def __init__(self, name, inputs, out, bwd):
        self.name = name
        self.inputs = inputs
        self.out = out
        self.bwd = bwd


class GradTape:
    """Ordered record of executed differentiable ops (a context manager).

    `backward(loss)` seeds the scalar loss with gradient one and replays the
    records in exact reverse execution order, populating `grad` on every
    reachable tensor that requires it. A tape replays once; `reset()` re-arms.
    A tape must stay confined to the thread that created it.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._used = False

    def __enter__(self):
        stack = getattr(_tls, "tapes", None)
        if stack is None:
            stack = _tls.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tls.tapes.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    @property
    def nodes(self) -> tuple:
        """Read-only view of the recorded nodes (used by the op-count oracle)."""
        return tuple(self._nodes)

    def op_names(self) -> list[str]:
        return [n.name for n in self._nodes]

    def backward(self, loss: Tensor):
        if self._used:
            raise StateError("tape already replayed; call reset() before another backward")
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self._nodes:
            raise StateError("tape is empty; nothing was recorded")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            out_grad = node.out.grad
            if out_grad is None:
                continue
            grads = node.bwd(out_grad)
            for t, g in zip(node.inputs, grads):
                if g is None:
                    continue
                if not (t.requires_grad or t._graph_tape is not None):
                    continue
                if t.grad is None:
                    t.grad = g.astype(t.data.dtype, copy=True)
                else:
                    t.grad += g
        self._used = True

    def reset(self):
        self._nodes.clear()
        self._used = False


def backward(loss: Tensor):
    """Replay the active tape from a scalar loss (see GradTape.backward)."""
    tape = _active_tape()
    if tape is None:
        tape = loss._graph_tape
    if tape is None:
        raise StateError("no tape recorded this loss")
    tape.backward(loss)


def record(name: str, inputs: Sequence[Tensor], out_data: np.ndarray,
           bwd: Callable[[np.ndarray], tuple]) -> Tensor:
    """Wrap an op result, recording it when gradients can flow to it.

    `bwd` maps the output gradient to one gradient array (or None) per input.
    Composite modules (scan, model) register their own ops through this hook.
    """
    out = Tensor._wrap(out_data)
    tape = _active_tape()
    if tape is not None and any(
        t.requires_grad or t._graph_tape is tape for t in inputs
    ):
        out._graph_tape = tape
        tape._nodes.append(_Node(name, tuple(inputs), out, bwd))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return record("add", (a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return record("mul", (a, b), out, bwd)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return record("scale", (x,), x.data * c, lambda g: (g * c,))


def ewise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    """Elementwise add/mul with `a`'s shape.

    `b` must match `a` exactly or have singleton axes where it broadcasts
    into `a` (the attention-weight forms: a (1, H, W) spatial map or a
    (C, 1, 1) channel map against a (C, H, W) feature).
    """
    if kind not in ("add", "mul"):
        raise ValueError(f"ewise kind must be 'add' or 'mul', got {kind!r}")
    if a.data.ndim != b.data.ndim:
        raise DimensionError(
            f"ewise rank mismatch: a has {a.data.ndim} axes, b has {b.data.ndim}")
    for axis, (sa, sb) in enumerate(zip(a.shape, b.shape)):
        if sb != sa and sb != 1:
            raise DimensionError(
                f"ewise axis {axis}: b extent {sb} is neither {sa} nor 1")
    return add(a, b) if kind == "add" else mul(a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-d operands, got {a.data.ndim}-d and {b.data.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner axes differ: a axis 1 = {a.shape[1]}, b axis 0 = {b.shape[0]}")
    out = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return record("matmul", (a, b), out, bwd)


# ---------------------------------------------------------------------------
# activations


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # stable branch form: never exponentiates a positive argument; output
    # clamped to the open interval's nearest representable values so the
    # strict (0, 1) range holds even where the float saturates
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    info = np.finfo(x.dtype)
    return np.clip(out, info.tiny, np.nextafter(x.dtype.type(1.0), x.dtype.type(0.0)))


def activation(x: Tensor, kind: str) -> Tensor:
    xd = x.data
    if kind == "sigmoid":
        y = _sigmoid(xd)

        def bwd(g):
            return (g * y * (1.0 - y),)

    elif kind == "relu":
        y = np.maximum(xd, 0.0)

        def bwd(g):
            return (g * (xd > 0),)

    elif kind == "softplus":
        # log(1 + e^x), computed as max(x, 0) + log1p(e^-|x|)
        y = np.maximum(xd, 0.0) + np.log1p(np.exp(-np.abs(xd)))

        def bwd(g):
            return (g * _sigmoid(xd),)

    elif kind == "exp":
        y = np.exp(xd)
        if not np.isfinite(y).all():
            raise NumericError("activation 'exp' overflowed")

        def bwd(g):
            return (g * y,)

    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    return record(f"activation_{kind}", (x,), y, bwd)


def sigmoid(x):
    return activation(x, "sigmoid")


def relu(x):
    return activation(x, "relu")


def softplus(x):
    return activation(x, "softplus")


def exp(x):
    return activation(x, "exp")


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d(x: Tensor, w: Tensor, b: Tensor, padding: int = 0, stride: int = 1) -> Tensor:
    """Cross-correlation of a (C_in, H, W) map with (C_out, C_in, k, k) weights."""
    if x.data.ndim != 3:
        raise DimensionError(f"conv2d input must be (C, H, W), got {x.shape}")
    if w.data.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError(f"conv2d weight must be (C_out, C_in, k, k), got {w.shape}")
    c_out, c_in, k, _ = w.shape
    if k % 2 != 1:
        raise DimensionError(f"conv2d kernel must be odd, got k={k}")
    if padding < 0 or stride < 1:
        raise DimensionError(f"conv2d needs padding >= 0 and stride >= 1, got {padding}, {stride}")
    if x.shape[0] != c_in:
        raise DimensionError(
            f"conv2d channel mismatch: input axis 0 = {x.shape[0]}, weight axis 1 = {c_in}")
    if b.data.shape != (c_out,):
        raise DimensionError(f"conv2d bias must be ({c_out},), got {b.shape}")
    _, h, wd = x.shape
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (wd + 2 * padding - k) // stride + 1
    if h + 2 * padding < k or wd + 2 * padding < k:
        raise DimensionError(
            f"conv2d kernel k={k} larger than padded input {h + 2 * padding}x{wd + 2 * padding}")
    if h_out < 1 or w_out < 1:
        raise DimensionError(f"conv2d output would be {h_out}x{w_out}")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # (C_in, H_out, W_out, k, k)
    cols = np.ascontiguousarray(windows.transpose(0, 3, 4, 1, 2)).reshape(c_in * k * k, h_out * w_out)
    w_flat = w.data.reshape(c_out, c_in * k * k)
    out = (w_flat @ cols + b.data[:, None]).reshape(c_out, h_out, w_out)

    def bwd(g):
        g_flat = g.reshape(c_out, h_out * w_out)
        gb = g_flat.sum(axis=1)
        gw = (g_flat @ cols.T).reshape(w.data.shape)
        gcols = (w_flat.T @ g_flat).reshape(c_in, k, k, h_out, w_out)
        gxp = np.zeros((c_in, h + 2 * padding, wd + 2 * padding), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, i:i + stride * (h_out - 1) + 1:stride,
                    j:j + stride * (w_out - 1) + 1:stride] += gcols[:, i, j]
        gx = gxp[:, padding:padding + h, padding:padding + wd] if padding else gxp
        return gx, gw, gb

    return record("conv2d", (x, w, b), out, bwd)


def channel_pool(x: Tensor, mode: str) -> Tensor:
    """Max or mean over the channel axis: (C, H, W) -> (1, H, W)."""
    if x.data.ndim != 3 or x.shape[0] < 1:
        raise DimensionError(f"channel_pool needs a (C, H, W) input with C >= 1, got {x.shape}")
    if mode == "avg":
        out = x.data.mean(axis=0, keepdims=True)

        def bwd(g):
            return (np.broadcast_to(g / x.shape[0], x.data.shape).copy(),)

    elif mode == "max":
        idx = x.data.argmax(axis=0)
        out = np.take_along_axis(x.data, idx[None], axis=0)

        def bwd(g):
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, idx[None], g, axis=0)
            return (gx,)

    else:
        raise ValueError(f"pool mode must be 'max' or 'avg', got {mode!r}")
    return record(f"channel_pool_{mode}", (x,), out, bwd)


def spatial_pool(x: Tensor, mode: str) -> Tensor:
    """Global max or mean over all pixels: (C, H, W) -> (C, 1, 1)."""
    if x.data.ndim != 3 or x.shape[1] * x.shape[2] < 1:
        raise DimensionError(f"spatial_pool needs a (C, H, W) input, got {x.shape}")
    c, h, w = x.shape
    flat = x.data.reshape(c, h * w)
    if mode == "avg":
        out = flat.mean(axis=1).reshape(c, 1, 1)

        def bwd(g):
            return (np.broadcast_to(g / (h * w), x.data.shape).copy(),)

    elif mode == "max":
        idx = flat.argmax(axis=1)
        out = flat[np.arange(c), idx].reshape(c, 1, 1)

        def bwd(g):
            gx = np.zeros_like(flat)
            gx[np.arange(c), idx] = g.reshape(c)
            return (gx.reshape(x.data.shape),)

    else:
        raise ValueError(f"pool mode must be 'max' or 'avg', got {mode!r}")
    return record(f"spatial_pool_{mode}", (x,), out, bwd)


# ---------------------------------------------------------------------------
# structure: concat/split, interleave, reverse, reshape, transpose, gather


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise DimensionError("concat of zero parts")
    base = parts[0].shape
    for i, p in enumerate(parts[1:], 1):
        if p.data.ndim != len(base) or any(
            s != b for ax, (s, b) in enumerate(zip(p.shape, base)) if ax != axis
        ):
            raise DimensionError(
                f"concat part {i} shape {p.shape} incompatible with {base} off axis {axis}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bwd(g):
        return tuple(np.split(g, offsets, axis=axis))

    return record("concat", tuple(parts), out, bwd)


def split(x: Tensor, n_parts: int, axis: int = 0) -> tuple:
    """Split into equal chunks along the channel axis; inverse of concat."""
    c = x.shape[axis]
    if c % n_parts:
        raise DimensionError(f"axis {axis} extent {c} not divisible into {n_parts} parts")
    step = c // n_parts
    outs = []
    for i in range(n_parts):
        sl = [slice(None)] * x.data.ndim
        sl[axis] = slice(i * step, (i + 1) * step)
        sl = tuple(sl)
        piece = x.data[sl].copy()

        def bwd(g, sl=sl):
            gx = np.zeros_like(x.data)
            gx[sl] = g
            return (gx,)

        outs.append(record("split", (x,), piece, bwd))
    return tuple(outs)


def interleave(i: Tensor, e: Tensor) -> Tensor:
    """(T, H, W) x2 -> (2T, H, W): out channel 2k is i's k, channel 2k+1 is e's k."""
    if i.shape != e.shape:
        raise DimensionError(f"interleave shape mismatch: {i.shape} vs {e.shape}")
    out = np.empty((2 * i.shape[0],) + i.shape[1:], dtype=i.data.dtype)
    out[0::2] = i.data
    out[1::2] = e.data

    def bwd(g):
        return g[0::2].copy(), g[1::2].copy()

    return record("interleave", (i, e), out, bwd)


def deinterleave(x: Tensor) -> tuple:
    """Exact inverse of interleave."""
    if x.shape[0] % 2:
        raise DimensionError(f"deinterleave needs an even channel count, got {x.shape[0]}")

    def bwd_even(g):
        gx = np.zeros_like(x.data)
        gx[0::2] = g
        return (gx,)

    def bwd_odd(g):
        gx = np.zeros_like(x.data)
        gx[1::2] = g
        return (gx,)

    even = record("deinterleave", (x,), x.data[0::2].copy(), bwd_even)
    odd = record("deinterleave", (x,), x.data[1::2].copy(), bwd_odd)
    return even, odd


def reverse(x: Tensor, axis: int = 0) -> Tensor:
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(f"reverse axis {axis} out of range for shape {x.shape}")
    out = np.flip(x.data, axis=axis).copy()

    def bwd(g):
        return (np.flip(g, axis=axis).copy(),)

    return record("reverse", (x,), out, bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out = np.ascontiguousarray(x.data).reshape(shape)

    def bwd(g):
        return (g.reshape(x.data.shape),)

    return record("reshape", (x,), out, bwd)


def transpose2d(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose2d expects a 2-d tensor, got {x.shape}")
    out = np.ascontiguousarray(x.data.T)

    def bwd(g):
        return (np.ascontiguousarray(g.T),)

    return record("transpose2d", (x,), out, bwd)


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather on a 2-d tensor; with a permutation this reorders rows."""
    if x.data.ndim != 2:
        raise DimensionError(f"take_rows expects a 2-d tensor, got {x.shape}")
    out = x.data[idx].copy()

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return record("take_rows", (x,), out, bwd)


# ---------------------------------------------------------------------------
# normalization, reductions, resampling


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-position normalization over the channel axis of a (C, H, W) map."""
    if eps <= 0:
        raise ValueError("layernorm eps must be positive")
    if x.data.ndim != 3:
        raise DimensionError(f"layernorm expects (C, H, W), got {x.shape}")
    c = x.shape[0]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(
            f"layernorm affine params must be ({c},), got {gamma.shape} and {beta.shape}")
    mu = x.data.mean(axis=0, keepdims=True)
    var = x.data.var(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def bwd(g):
        ggamma = (g * xhat).sum(axis=(1, 2))
        gbeta = g.sum(axis=(1, 2))
        gh = g * gamma.data[:, None, None]
        gx = inv * (gh - gh.mean(axis=0, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=0, keepdims=True))
        return gx, ggamma, gbeta

    return record("layernorm", (x, gamma, beta), out, bwd)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def bwd(g):
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype).copy(),)

    return record("sum_all", (x,), out, bwd)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.data.dtype)

    def bwd(g):
        return (np.broadcast_to(g / n, x.data.shape).astype(x.data.dtype).copy(),)

    return record("mean_all", (x,), out, bwd)


def _interp_matrix(n_out: int, n_in: int, dtype) -> np.ndarray:
    """Bilinear 1-d interpolation matrix, corner-aligned-off convention."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    if n_in == 1:
        m[:, 0] = 1.0
    else:
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        i0 = np.floor(src).astype(int)
        i0 = np.minimum(i0, n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        f = src - i0
        rows = np.arange(n_out)
        np.add.at(m, (rows, i0), 1.0 - f)
        np.add.at(m, (rows, i1), f)
    return m.astype(dtype)


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resample of a (C, H, W) map (corner-aligned-off)."""
    if x.data.ndim != 3:
        raise DimensionError(f"upsample_bilinear expects (C, H, W), got {x.shape}")
    _, h, w = x.shape
    mr = _interp_matrix(out_h, h, x.data.dtype)
    mc = _interp_matrix(out_w, w, x.data.dtype)
    out = np.matmul(np.matmul(mr, x.data), mc.T)

    def bwd(g):
        return (np.matmul(np.matmul(mr.T, g), mc),)

    return record("upsample_bilinear", (x,), out, bwd)


def check_finite(x: Tensor, context: str):
    if not np.isfinite(x.data).all():
        raise NumericError(f"non-finite values in {context}")
    return x
