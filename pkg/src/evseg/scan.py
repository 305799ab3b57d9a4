"""Selective state-space scan: input-dependent discretization plus a linear
recurrence over time.

Per timestep t of an input sequence x in R^{L x D}:

    delta_t = softplus(W_delta x_t + b_delta)            (D,)   step sizes
    A       = -exp(a_log)                                (D, N) diagonal, < 0
    A_bar_t = exp(delta_t * A)                           (D, N) in (0, 1)
    Bx_t    = delta_t * (W_B x_t + b_B) * x_t            (D, N)
    h_t     = A_bar_t * h_{t-1} + Bx_t,  h_{-1} = 0
    y_t     = (W_C x_t + b_C) . h_t + skip_d * x_t       (D,)

The recurrence is the hot loop and runs through the kernels backend
(compiled extension or numpy fallback). `scan_parallel` computes the same
recurrence by a work-efficient associative scan over (A_bar, Bx) pairs with
combination (a2, b2) o (a1, b1) = (a2*a1, a2*b1 + b2).
"""

from __future__ import annotations

import gc
import time
from dataclasses import dataclass, fields

import numpy as np

from . import kernels
from .errors import DimensionError, NumericError
from .rng import Rng
from .tensor import (
    DTYPE,
    Tensor,
    add,
    exp,
    matmul,
    mul,
    record,
    reshape,
    reverse,
    scale,
    softplus,
    transpose2d,
)


@dataclass
class S6Params:
    """Parameters of one selective-scan block over D channels and N states."""

    a_log: Tensor   # (D, N); state matrix A = -exp(a_log)
    w_delta: Tensor  # (D, D) step-size projection
    b_delta: Tensor  # (D,)
    w_b: Tensor     # (N, D) input projection
    b_b: Tensor     # (N,)
    w_c: Tensor     # (N, D) output projection
    b_c: Tensor     # (N,)
    skip_d: Tensor  # (D,) direct feed-through

    def __post_init__(self):
        d, n = self.a_log.shape
        expect = {
            "w_delta": (d, d), "b_delta": (d,),
            "w_b": (n, d), "b_b": (n,),
            "w_c": (n, d), "b_c": (n,),
            "skip_d": (d,),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise DimensionError(f"S6Params.{name} must be {shape}, got {got}")

    @property
    def channels(self) -> int:
        return self.a_log.shape[0]

    @property
    def state_dim(self) -> int:
        return self.a_log.shape[1]

    def tensors(self):
        return [getattr(self, f.name) for f in fields(self)]


def init_s6(d: int, n: int, rng: Rng, dtype=DTYPE) -> S6Params:
    """Fresh trainable parameters.

    a_log is set so -A spans [1, N] over the state index; other weights and
    biases are uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    """

    def u(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(shape, -bound, bound), requires_grad=True, dtype=dtype)

    a_log = np.tile(np.log(np.arange(1, n + 1, dtype=np.float64)), (d, 1))
    return S6Params(
        a_log=Tensor(a_log, requires_grad=True, dtype=dtype),
        w_delta=u((d, d), d), b_delta=u((d,), d),
        w_b=u((n, d), d), b_b=u((n,), d),
        w_c=u((n, d), d), b_c=u((n,), d),
        skip_d=Tensor(np.ones(d), requires_grad=True, dtype=dtype),
    )


def discretize(params: S6Params, x_t: Tensor) -> tuple[Tensor, Tensor]:
    """Single-timestep discretization: returns (A_bar, Bx), both (D, N)."""
    if x_t.data.ndim != 1 or x_t.shape[0] != params.channels:
        raise DimensionError(
            f"discretize input must be ({params.channels},), got {x_t.shape}")
    d, n = params.channels, params.state_dim
    x_row = reshape(x_t, (1, d))
    delta = softplus(add(matmul(x_row, transpose2d(params.w_delta)),
                         reshape(params.b_delta, (1, d))))        # (1, D)
    a = scale(exp(params.a_log), -1.0)                             # (D, N)
    a_bar = exp(mul(reshape(delta, (d, 1)), a))                    # (D, N)
    bt = add(matmul(x_row, transpose2d(params.w_b)), reshape(params.b_b, (1, n)))
    bx = mul(mul(reshape(delta, (d, 1)), bt), reshape(x_t, (d, 1)))  # (D, N)
    return a_bar, bx


def _softplus_np(v):
    return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))


def _sigmoid_np(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def discretize_seq(delta_pre: Tensor, a_log: Tensor, bt: Tensor, x: Tensor):
    """Fused discretization over a whole sequence: returns (A_bar, Bx).

    A_bar = exp(softplus(delta_pre) * -exp(a_log)) and
    Bx = softplus(delta_pre) * bt * x, with shapes (L, D, N). Fusing the
    elementwise chain keeps the hot path at two large allocations.
    """
    dp, al, bt_d, xd = delta_pre.data, a_log.data, bt.data, x.data
    delta = _softplus_np(dp)                        # (L, D)
    a = -np.exp(al)                                  # (D, N)
    with np.errstate(over="ignore"):  # overflow surfaces as a NumericError
        expo = delta[:, :, None] * a[None, :, :]     # (L, D, N)
        a_bar = np.exp(expo, out=expo)
        bx = delta[:, :, None] * bt_d[:, None, :]
        bx *= xd[:, :, None]

    def bwd_a_bar(g):
        core = g * a_bar                                         # (L, D, N)
        gdelta = np.einsum("ldn,dn->ld", core, a)
        gdp = gdelta * _sigmoid_np(dp)
        ga_log = np.einsum("ldn,ld->dn", core, delta) * a
        return gdp, ga_log, None, None

    def bwd_bx(g):
        gdelta = np.einsum("ldn,ln->ld", g, bt_d) * xd
        gdp = gdelta * _sigmoid_np(dp)
        gbt = np.einsum("ldn,ld->ln", g, delta * xd)
        gx = np.einsum("ldn,ln->ld", g, bt_d) * delta
        return gdp, None, gbt, gx

    inputs = (delta_pre, a_log, bt, x)
    out_a = record("discretize_a_bar", inputs, a_bar, bwd_a_bar)
    out_b = record("discretize_bx", inputs, bx, bwd_bx)
    return out_a, out_b


def _s6_pieces(params: S6Params, x: Tensor):
    """Vectorized discretization over a whole (L, D) sequence."""
    if x.data.ndim != 2:
        raise DimensionError(f"scan input must be (L, D), got {x.shape}")
    length, d = x.shape
    if length < 1:
        raise DimensionError("scan needs L >= 1")
    if d != params.channels:
        raise DimensionError(
            f"scan channel mismatch: input D = {d}, params D = {params.channels}")
    n = params.state_dim
    delta_pre = add(matmul(x, transpose2d(params.w_delta)),
                    reshape(params.b_delta, (1, d)))                   # (L, D)
    bt = add(matmul(x, transpose2d(params.w_b)), reshape(params.b_b, (1, n)))
    a_bar, bx = discretize_seq(delta_pre, params.a_log, bt, x)
    ct = add(matmul(x, transpose2d(params.w_c)), reshape(params.b_c, (1, n)))
    return a_bar, bx, ct


def _check_states(h: np.ndarray):
    if not np.isfinite(h).all():
        bad = int(np.argwhere(~np.isfinite(h).reshape(h.shape[0], -1).all(axis=1))[0, 0])
        raise NumericError(f"non-finite scan state at timestep {bad}")


def linear_recurrence(a_bar: Tensor, bx: Tensor) -> Tensor:
    """h_t = A_bar_t * h_{t-1} + Bx_t through the active kernel backend."""
    if a_bar.shape != bx.shape or a_bar.data.ndim != 3:
        raise DimensionError(
            f"linear_recurrence needs matching (L, D, N) inputs, got {a_bar.shape} and {bx.shape}")
    ad = np.ascontiguousarray(a_bar.data)
    bd = np.ascontiguousarray(bx.data)
    h = np.empty_like(ad)
    kernels.recurrence_forward(ad, bd, h)
    _check_states(h)

    def bwd(g):
        ga = np.empty_like(ad)
        gb = np.empty_like(ad)
        kernels.recurrence_backward(ad, h, np.ascontiguousarray(g), ga, gb)
        return ga, gb

    return record("linear_recurrence", (a_bar, bx), h, bwd)


def _pair_scan(a: np.ndarray, b: np.ndarray):
    """Work-efficient inclusive associative scan over (a, b) pairs, axis 0.

    Combines adjacent pairs on the way up and expands prefixes on the way
    down; the combination order is a fixed function of L.
    """
    length = a.shape[0]
    if length == 1:
        return a.copy(), b.copy()
    a_even, b_even = a[0:length - 1:2], b[0:length - 1:2]
    a_odd, b_odd = a[1:length:2], b[1:length:2]
    sa, sb = _pair_scan(a_odd * a_even, a_odd * b_even + b_odd)
    out_a = np.empty_like(a)
    out_b = np.empty_like(b)
    out_a[1::2], out_b[1::2] = sa, sb
    out_a[0], out_b[0] = a[0], b[0]
    tail = a[2::2]
    if tail.shape[0]:
        pa, pb = sa[:tail.shape[0]], sb[:tail.shape[0]]
        out_a[2::2] = tail * pa
        out_b[2::2] = tail * pb + b[2::2]
    return out_a, out_b


def parallel_recurrence(a_bar: Tensor, bx: Tensor) -> Tensor:
    """Same map as linear_recurrence, computed by the associative scan."""
    if a_bar.shape != bx.shape or a_bar.data.ndim != 3:
        raise DimensionError(
            f"parallel_recurrence needs matching (L, D, N) inputs, got {a_bar.shape} and {bx.shape}")
    ad = np.ascontiguousarray(a_bar.data)
    _, h = _pair_scan(ad, np.ascontiguousarray(bx.data))
    _check_states(h)

    def bwd(g):
        ga = np.empty_like(ad)
        gb = np.empty_like(ad)
        kernels.recurrence_backward(ad, h, np.ascontiguousarray(g), ga, gb)
        return ga, gb

    return record("parallel_recurrence", (a_bar, bx), h, bwd)


def s6_output(h: Tensor, ct: Tensor, skip_d: Tensor, x: Tensor) -> Tensor:
    """y_t = C_t . h_t + skip_d * x_t, fused: (L,D,N),(L,N),(D,),(L,D) -> (L,D)."""
    hd, cd, sd, xd = h.data, ct.data, skip_d.data, x.data
    out = np.einsum("ldn,ln->ld", hd, cd) + sd[None, :] * xd

    def bwd(g):
        gh = g[:, :, None] * cd[:, None, :]
        gc = np.einsum("ldn,ld->ln", hd, g)
        gskip = (g * xd).sum(axis=0)
        gx = g * sd[None, :]
        return gh, gc, gskip, gx

    return record("s6_output", (h, ct, skip_d, x), out, bwd)


def scan_sequential(params: S6Params, x: Tensor) -> Tensor:
    """Exact left-to-right recurrence from h_0 = 0; O(L*D*N) time."""
    a_bar, bx, ct = _s6_pieces(params, x)
    h = linear_recurrence(a_bar, bx)
    return s6_output(h, ct, params.skip_d, x)


def scan_parallel(params: S6Params, x: Tensor) -> Tensor:
    """Identical recurrence via the associative parallel scan."""
    a_bar, bx, ct = _s6_pieces(params, x)
    h = parallel_recurrence(a_bar, bx)
    return s6_output(h, ct, params.skip_d, x)


def scan_bidirectional(params_fwd: S6Params, params_bwd: S6Params, x: Tensor) -> Tensor:
    """scan(fwd, x) + reverse(scan(bwd, reverse(x))): position t sees both
    past and future context."""
    y_fwd = scan_sequential(params_fwd, x)
    y_bwd = reverse(scan_sequential(params_bwd, reverse(x, 0)), 0)
    return add(y_fwd, y_bwd)


# ---------------------------------------------------------------------------
# benchmark


@dataclass
class BenchRow:
    length: int
    ns_per_element: float
    total_ns: int


_BENCH_SAMPLE_NS = 60_000_000  # target wall time per timed sample


def bench_scan(l_list, d: int = 4, n: int = 8, repeats: int = 9, seed: int = 0):
    """Median wall-clock timings of scan_sequential per sequence length.

    Returns one BenchRow per L; ns_per_element divides by L*D. Linear-time
    behavior means total time roughly doubles when L doubles.

    The default channel width keeps the per-call working set inside a
    typical last-level cache at every length, so the wall clock tracks the
    O(L) arithmetic rather than a memory-hierarchy boundary. Each of the
    `repeats` samples batches enough scan calls to run for tens of
    milliseconds (clock-frequency ramps and scheduler noise average out),
    samples are interleaved round-robin across the lengths so ambient drift
    lands on every length equally, and the collector is paused while timing.
    """
    if list(l_list) != sorted(l_list) or len(l_list) < 1:
        raise ValueError("l_list must be ascending and non-empty")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    # allocate and free one large block first: glibc's dynamic mmap
    # threshold then rises past the scan buffers, so the timed region reuses
    # arena memory instead of mapping and unmapping pages every call
    scratch = np.empty(16 << 20, dtype=np.uint8)
    del scratch
    rng = Rng(seed)
    cases = []
    for length in l_list:
        params = init_s6(d, n, rng)
        x = Tensor(rng.uniform((length, d), -1.0, 1.0))
        scan_sequential(params, x)  # warm-up: allocator and cache state
        t0 = time.perf_counter_ns()
        scan_sequential(params, x)
        once = max(time.perf_counter_ns() - t0, 1)
        inner = max(1, int(_BENCH_SAMPLE_NS // once))
        cases.append((int(length), params, x, inner))
    times = {length: [] for length, _, _, _ in cases}
    gc_was_on = gc.isenabled()
    gc.disable()
    try:
        # one untimed full round first: the allocator arena and page tables
        # reach steady state before any sample is kept
        for length, params, x, inner in cases:
            for _ in range(inner):
                scan_sequential(params, x)
        for _ in range(repeats):
            for length, params, x, inner in cases:
                t0 = time.perf_counter_ns()
                for _ in range(inner):
                    scan_sequential(params, x)
                times[length].append((time.perf_counter_ns() - t0) / inner)
    finally:
        if gc_was_on:
            gc.enable()
    rows = []
    for length, _, _, _ in cases:
        total = int(np.median(times[length]))
        rows.append(BenchRow(length=length, ns_per_element=total / (length * d),
                             total_ns=total))
    return rows


def doubling_ratio(rows) -> float:
    """total-time ratio between the two largest lengths (expects L2 = 2*L1)."""
    if len(rows) < 2:
        raise ValueError("need at least two lengths for a doubling ratio")
    return rows[-1].total_ns / rows[-2].total_ns
