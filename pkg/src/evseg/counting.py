"""Analytic parameter and multiply-accumulate counts, derived from the config
alone (never from built weights).

MAC convention (shared with the graph-walk oracle in the test suite):
  conv2d            C_out * C_in * k^2 * H_out * W_out   (bias adds excluded)
  matmul (m,k)(k,n) m * k * n
  scan recurrence   L * D * N
  scan output       L * D * (N + 1)   (state contraction plus skip multiply)
  everything else   0 (activations, norms, pooling, elementwise, resampling)

One selective-scan application over an (L, D) sequence therefore costs
L*D*(D + 2N) for its three projections plus L*D*(2N + 1) for the scan.
"""

from __future__ import annotations

import math

from .model import ModelConfig


def _s6_params(d: int, n: int) -> int:
    # a_log, w_delta + b_delta, w_b + b_b, w_c + b_c, skip_d
    return d * n + d * d + d + 2 * (n * d + n) + d


def _s6_macs(length: int, d: int, n: int) -> int:
    proj = length * d * d + 2 * length * d * n
    scan = length * d * (2 * n + 1)
    return proj + scan


def _conv_params(c_out: int, c_in: int, k: int) -> int:
    return c_out * c_in * k * k + c_out


def _conv_macs(c_out: int, c_in: int, k: int, h_out: int, w_out: int) -> int:
    return c_out * c_in * k * k * h_out * w_out


def _stem_counts(c_in: int, c1: int, h: int, w: int):
    params = (_conv_params(c1, c_in, 3) + 2 * c1
              + _conv_params(c1, c1, 3) + 2 * c1)
    macs = (_conv_macs(c1, c_in, 3, h // 2, w // 2)
            + _conv_macs(c1, c1, 3, h // 4, w // 4))
    return params, macs


def _vss_counts(c: int, expand: int, n: int, h: int, w: int):
    ce = max(1, c * expand)
    hw = h * w
    params = (2 * c                      # layernorm
              + 2 * _conv_params(ce, c, 1)  # expand + gate
              + 4 * _s6_params(ce, n)
              + _conv_params(c, ce, 1))
    macs = (2 * _conv_macs(ce, c, 1, h, w)
            + 4 * _s6_macs(hw, ce, n)
            + _conv_macs(c, ce, 1, h, w))
    return params, macs


def _csim_counts(c: int, k: int, n: int, h: int, w: int):
    params = (_conv_params(3, 6, k) + _conv_params(3, 3, k)
              + 4 * _s6_params(2 * c, n)
              + 2 * _conv_params(1, 2, k))
    macs = (_conv_macs(3, 6, k, h, w) + _conv_macs(3, 3, k, h, w)
            + 4 * _s6_macs(h * w, 2 * c, n)
            + 2 * _conv_macs(1, 2, k, h, w))
    return params, macs


def _ctim_counts(c: int, reduction: int, n: int, h: int, w: int):
    m = max(1, math.ceil(2 * c / reduction))
    mc = max(1, math.ceil(c / reduction))
    params = (_conv_params(m, 2 * c, 1) + _conv_params(c, m, 1)
              + 2 * _s6_params(h * w, n)
              + 2 * (_conv_params(mc, c, 1) + _conv_params(c, mc, 1)))
    # shared map applied to max and avg descriptors; each TA map applied twice
    macs = (2 * (_conv_macs(m, 2 * c, 1, 1, 1) + _conv_macs(c, m, 1, 1, 1))
            + 2 * _s6_macs(2 * c, h * w, n)
            + 2 * 2 * (_conv_macs(mc, c, 1, 1, 1) + _conv_macs(c, mc, 1, 1, 1)))
    return params, macs


def count_params_macs(cfg: ModelConfig) -> tuple[int, int]:
    """Trainable scalar count and forward-pass MAC count for one input."""
    params = 0
    macs = 0
    c1 = cfg.stages[0].channels
    for c_in in (cfg.t_bins, cfg.image_channels):
        p, m = _stem_counts(c_in, c1, cfg.input_h, cfg.input_w)
        params += p
        macs += m
    prev_c = c1
    for i, spec in enumerate(cfg.stages):
        h, w = cfg.spatial(i)
        if i > 0:
            params += 2 * (_conv_params(spec.channels, prev_c, 3) + 2 * spec.channels)
            macs += 2 * _conv_macs(spec.channels, prev_c, 3, h, w)
        for _ in range(spec.blocks):
            p, m = _vss_counts(spec.channels, cfg.vss_expand, cfg.state_dim, h, w)
            params += 2 * p
            macs += 2 * m
        if cfg.enable_csim:
            p, m = _csim_counts(spec.channels, cfg.k_s, cfg.state_dim, h, w)
            params += p
            macs += m
        if cfg.enable_ctim:
            p, m = _ctim_counts(spec.channels, cfg.reduction, cfg.state_dim, h, w)
            params += p
            macs += m
        prev_c = spec.channels
    h4, w4 = cfg.spatial(0)
    e = cfg.decoder_width
    for i, spec in enumerate(cfg.stages):
        c_in = spec.channels if cfg.fuse_mode == "sum" else 2 * spec.channels
        h, w = cfg.spatial(i)
        params += _conv_params(e, c_in, 1)
        macs += _conv_macs(e, c_in, 1, h, w)
    params += _conv_params(e, len(cfg.stages) * e, 1)
    macs += _conv_macs(e, len(cfg.stages) * e, 1, h4, w4)
    params += _conv_params(cfg.num_classes, e, 1)
    macs += _conv_macs(cfg.num_classes, e, 1, h4, w4)
    return params, macs
