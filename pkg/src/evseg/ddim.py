"""Dual-dimensional interaction: spatial (CSIM) and temporal (CTIM) fusion of
an event/image feature pair at one encoder scale.

CSIM: channel-pooled cross-modal spatial attention over six pooled maps, a
2D selective scan over the concatenated attended pair, then a modality-aware
residual update gated by per-branch spatial attention.

CTIM: channel-interleaved global pooling into a shared channel-attention map,
a bidirectional selective scan that treats the 2C interleaved channels as
time steps (feature dimension = flattened pixels), then a residual update
gated by per-branch channel attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from .errors import DimensionError
from .rng import Rng
from .scan import S6Params, init_s6, scan_bidirectional
from .ss2d import Ss2dParams, init_ss2d, ss2d
from .tensor import (
    DTYPE,
    Tensor,
    add,
    channel_pool,
    concat,
    conv2d,
    ewise,
    interleave,
    relu,
    reshape,
    sigmoid,
    spatial_pool,
    split,
)


@dataclass
class ModalityPair:
    event: Tensor
    image: Tensor

    def __post_init__(self):
        if self.event.data.ndim != 3:
            raise DimensionError(f"modality features must be (C, H, W), got {self.event.shape}")
        if self.event.shape != self.image.shape:
            raise DimensionError(
                f"event/image shapes differ: {self.event.shape} vs {self.image.shape}")

    @property
    def channels(self) -> int:
        return self.event.shape[0]


def _uniform(rng: Rng, shape, fan_in: int, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(shape, -bound, bound), requires_grad=True, dtype=dtype)


@dataclass
class CsimParams:
    """Spatial interaction parameters at one scale (stage channel width C)."""

    conv1_w: Tensor  # (3, 6, k, k)
    conv1_b: Tensor
    conv2_w: Tensor  # (3, 3, k, k)
    conv2_b: Tensor
    scans: Ss2dParams      # at 2C channels
    sa_event_w: Tensor  # (1, 2, k, k)
    sa_event_b: Tensor
    sa_image_w: Tensor
    sa_image_b: Tensor

    def __post_init__(self):
        if self.conv1_w.shape[:2] != (3, 6):
            raise DimensionError(f"conv1 must map 6 -> 3 channels, got {self.conv1_w.shape}")
        if self.conv2_w.shape[:2] != (3, 3):
            raise DimensionError(f"conv2 must map 3 -> 3 channels, got {self.conv2_w.shape}")

    @property
    def kernel(self) -> int:
        return self.conv1_w.shape[2]

    @property
    def padding(self) -> int:
        return (self.kernel - 1) // 2

    def tensors(self):
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.extend(v.tensors() if isinstance(v, Ss2dParams) else [v])
        return out


def init_csim(channels: int, kernel: int, state_dim: int, rng: Rng, dtype=DTYPE) -> CsimParams:
    if kernel % 2 != 1:
        raise DimensionError(f"spatial-attention kernel must be odd, got {kernel}")
    k2 = kernel * kernel
    return CsimParams(
        conv1_w=_uniform(rng, (3, 6, kernel, kernel), 6 * k2, dtype),
        conv1_b=_uniform(rng, (3,), 6 * k2, dtype),
        conv2_w=_uniform(rng, (3, 3, kernel, kernel), 3 * k2, dtype),
        conv2_b=_uniform(rng, (3,), 3 * k2, dtype),
        scans=init_ss2d(2 * channels, state_dim, rng, dtype),
        sa_event_w=_uniform(rng, (1, 2, kernel, kernel), 2 * k2, dtype),
        sa_event_b=_uniform(rng, (1,), 2 * k2, dtype),
        sa_image_w=_uniform(rng, (1, 2, kernel, kernel), 2 * k2, dtype),
        sa_image_b=_uniform(rng, (1,), 2 * k2, dtype),
    )


def _spatial_attention(x: Tensor, w: Tensor, b: Tensor, padding: int) -> Tensor:
    """sigmoid(conv([avg-pool; max-pool] over channels)): (C,H,W) -> (1,H,W)."""
    pooled = concat([channel_pool(x, "avg"), channel_pool(x, "max")])
    return sigmoid(conv2d(pooled, w, b, padding=padding))


def pooled_stack(pair: ModalityPair) -> Tensor:
    """The six channel-pooled maps (6, H, W): avg/max of event, image, and
    their elementwise sum, in that order."""
    e, i = pair.event, pair.image
    f = add(e, i)
    return concat([
        channel_pool(e, "avg"), channel_pool(e, "max"),
        channel_pool(i, "avg"), channel_pool(i, "max"),
        channel_pool(f, "avg"), channel_pool(f, "max"),
    ])


def csim_attention(pair: ModalityPair, p: CsimParams):
    """Cross-modal spatial attention: returns (E_c, I_c, F_c).

    The six pooled maps are stacked in the order avg/max of event, image,
    shallow fusion; the 3-channel attention splits into (W_E, W_I, W_F).
    """
    e, i = pair.event, pair.image
    x = pooled_stack(pair)
    w_s = sigmoid(conv2d(relu(conv2d(x, p.conv1_w, p.conv1_b, padding=p.padding)),
                         p.conv2_w, p.conv2_b, padding=p.padding))
    w_e, w_i, w_f = split(w_s, 3)
    e_c = ewise(ewise(e, w_i, "mul"), w_f, "mul")
    i_c = ewise(ewise(i, w_e, "mul"), w_f, "mul")
    return e_c, i_c, concat([e_c, i_c])


def csim(pair: ModalityPair, p: CsimParams) -> ModalityPair:
    _, _, f_c = csim_attention(pair, p)
    f_s = ss2d(f_c, p.scans)
    e_s, i_s = split(f_s, 2)
    e_out = add(pair.event,
                ewise(e_s, _spatial_attention(e_s, p.sa_event_w, p.sa_event_b, p.padding), "mul"))
    i_out = add(pair.image,
                ewise(i_s, _spatial_attention(i_s, p.sa_image_w, p.sa_image_b, p.padding), "mul"))
    return ModalityPair(event=e_out, image=i_out)


@dataclass
class CtimParams:
    """Temporal interaction parameters at one scale.

    The shared reduce/expand map turns pooled (2C, 1, 1) descriptors into a
    (C, 1, 1) attention weight; the bidirectional scans treat the 2C
    interleaved channels as time and the HW flattened pixels as features,
    so their channel count is tied to the feature-map extent.
    """

    reduce_w: Tensor  # (m, 2C, 1, 1), m = ceil(2C / r)
    reduce_b: Tensor
    expand_w: Tensor  # (C, m, 1, 1)
    expand_b: Tensor
    s6_fwd: S6Params  # D = H*W
    s6_bwd: S6Params
    ta_event_reduce_w: Tensor  # (mc, C, 1, 1), mc = ceil(C / r)
    ta_event_reduce_b: Tensor
    ta_event_expand_w: Tensor  # (C, mc, 1, 1)
    ta_event_expand_b: Tensor
    ta_image_reduce_w: Tensor
    ta_image_reduce_b: Tensor
    ta_image_expand_w: Tensor
    ta_image_expand_b: Tensor

    @property
    def channels(self) -> int:
        return self.expand_w.shape[0]

    @property
    def pixels(self) -> int:
        return self.s6_fwd.channels

    def tensors(self):
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.extend(v.tensors() if isinstance(v, S6Params) else [v])
        return out


def init_ctim(channels: int, pixels: int, reduction: int, state_dim: int,
              rng: Rng, dtype=DTYPE) -> CtimParams:
    m = max(1, math.ceil(2 * channels / reduction))
    mc = max(1, math.ceil(channels / reduction))
    return CtimParams(
        reduce_w=_uniform(rng, (m, 2 * channels, 1, 1), 2 * channels, dtype),
        reduce_b=_uniform(rng, (m,), 2 * channels, dtype),
        expand_w=_uniform(rng, (channels, m, 1, 1), m, dtype),
        expand_b=_uniform(rng, (channels,), m, dtype),
        s6_fwd=init_s6(pixels, state_dim, rng, dtype),
        s6_bwd=init_s6(pixels, state_dim, rng, dtype),
        ta_event_reduce_w=_uniform(rng, (mc, channels, 1, 1), channels, dtype),
        ta_event_reduce_b=_uniform(rng, (mc,), channels, dtype),
        ta_event_expand_w=_uniform(rng, (channels, mc, 1, 1), mc, dtype),
        ta_event_expand_b=_uniform(rng, (channels,), mc, dtype),
        ta_image_reduce_w=_uniform(rng, (mc, channels, 1, 1), channels, dtype),
        ta_image_reduce_b=_uniform(rng, (mc,), channels, dtype),
        ta_image_expand_w=_uniform(rng, (channels, mc, 1, 1), mc, dtype),
        ta_image_expand_b=_uniform(rng, (channels,), mc, dtype),
    )


def _mlp_1x1(v: Tensor, rw: Tensor, rb: Tensor, ew: Tensor, eb: Tensor) -> Tensor:
    """Two 1x1 convolutions with a ReLU between, on a (C, 1, 1) descriptor."""
    return conv2d(relu(conv2d(v, rw, rb)), ew, eb)


def ctim_attention(pair: ModalityPair, p: CtimParams):
    """Cross-modal temporal attention: returns (E_c, I_c).

    Interleaves image/event channels, pools globally, and maps the max and
    avg descriptors through the shared reduce/expand MLP into a (C, 1, 1)
    sigmoid weight broadcast onto both modalities.
    """
    f = interleave(pair.image, pair.event)  # channel 2k image, 2k+1 event
    shared = lambda v: _mlp_1x1(v, p.reduce_w, p.reduce_b, p.expand_w, p.expand_b)
    w_t = sigmoid(add(shared(spatial_pool(f, "max")), shared(spatial_pool(f, "avg"))))
    return ewise(pair.event, w_t, "mul"), ewise(pair.image, w_t, "mul")


def ctim(pair: ModalityPair, p: CtimParams) -> ModalityPair:
    c, h, w = pair.event.shape
    if p.pixels != h * w:
        raise DimensionError(
            f"ctim scan expects {p.pixels} pixels per channel, feature map has {h * w}")
    e_c, i_c = ctim_attention(pair, p)
    f_c = concat([e_c, i_c])                       # (2C, H, W)
    seq = reshape(f_c, (2 * c, h * w))             # channels as time steps
    f_b = reshape(scan_bidirectional(p.s6_fwd, p.s6_bwd, seq), (2 * c, h, w))
    e_b, i_b = split(f_b, 2)
    ta = lambda x, rw, rb, ew, eb: sigmoid(add(
        _mlp_1x1(spatial_pool(x, "avg"), rw, rb, ew, eb),
        _mlp_1x1(spatial_pool(x, "max"), rw, rb, ew, eb)))
    e_out = add(pair.event, ewise(e_b, ta(e_b, p.ta_event_reduce_w, p.ta_event_reduce_b,
                                          p.ta_event_expand_w, p.ta_event_expand_b), "mul"))
    i_out = add(pair.image, ewise(i_b, ta(i_b, p.ta_image_reduce_w, p.ta_image_reduce_b,
                                          p.ta_image_expand_w, p.ta_image_expand_b), "mul"))
    return ModalityPair(event=e_out, image=i_out)


def ddim(pair: ModalityPair, p_s: CsimParams | None, p_t: CtimParams | None,
         enable_csim: bool = True, enable_ctim: bool = True,
         csim_first: bool = True) -> ModalityPair:
    """Apply CSIM and CTIM in sequence per the enable flags; identity when
    both are disabled. `csim_first=False` flips the composition order."""
    stages = []
    if enable_csim:
        if p_s is None:
            raise DimensionError("csim enabled but no CsimParams given")
        stages.append(lambda pr: csim(pr, p_s))
    if enable_ctim:
        if p_t is None:
            raise DimensionError("ctim enabled but no CtimParams given")
        stages.append(lambda pr: ctim(pr, p_t))
    if enable_csim and enable_ctim and not csim_first:
        stages.reverse()
    for stage in stages:
        pair = stage(pair)
    return pair
