"""The end-to-end toy segmentation model: dual-branch four-stage encoder with
per-scale spatial/temporal fusion, and an MLP decoder.

Both branches share the layout: a two-conv patch stem to 1/4 resolution,
then per stage a stride-2 entry conv (stages after the first), a run of VSS
blocks (pre-norm residual blocks gating a 2D selective scan), and the fusion
module refining the event/image pair. The decoder projects each scale to a
common width, upsamples to 1/4 scale, concatenates, fuses, classifies, and
bilinearly upsamples the logits to input resolution.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, fields

import numpy as np

from .ddim import CsimParams, CtimParams, ModalityPair, ddim, init_csim, init_ctim
from .errors import ConfigError, DataError, DimensionError, NumericError
from .events import VoxelGrid, gen_synthetic, synthetic_window, voxelize
from .metrics import SegMetrics, metrics, predictions
from .rng import Rng
from .ss2d import Ss2dParams, init_ss2d, ss2d
from .tensor import (
    DTYPE,
    GradTape,
    Tensor,
    add,
    concat,
    conv2d,
    layernorm,
    mul,
    record,
    relu,
    sigmoid,
    upsample_bilinear,
)


@dataclass(frozen=True)
class StageSpec:
    channels: int
    blocks: int
    downsample: int


DEFAULT_STAGES = (
    StageSpec(10, 1, 4),
    StageSpec(20, 1, 2),
    StageSpec(40, 1, 2),
    StageSpec(80, 1, 2),
)


@dataclass
class ModelConfig:
    """Full architecture description.

    Stage-1 width defaults to the temporal bin count so event channels align
    with image channels at the first fusion scale. `input_h`/`input_w` are
    part of the architecture because the temporal-fusion scan width is tied
    to the per-stage pixel count.
    """

    t_bins: int = 10
    stages: tuple = DEFAULT_STAGES
    num_classes: int = 2
    image_channels: int = 1
    input_h: int = 32
    input_w: int = 32
    k_s: int = 7
    reduction: int = 4
    state_dim: int = 8
    enable_csim: bool = True
    enable_ctim: bool = True
    csim_first: bool = True
    vss_expand: int = 2
    decoder_width: int = 32
    fuse_mode: str = "sum"
    seed: int = 0

    def __post_init__(self):
        self.stages = tuple(
            s if isinstance(s, StageSpec) else StageSpec(*s) for s in self.stages
        )
        if len(self.stages) < 1:
            raise ConfigError("need at least one stage")
        for i, s in enumerate(self.stages):
            if s.channels < 1 or s.blocks < 0 or s.downsample < 1:
                raise ConfigError(f"stage {i} spec out of range: {s}")
        if self.stages[0].downsample != 4:
            raise ConfigError("stage 1 downsample must be 4 (the two-conv stem)")
        if self.image_channels not in (1, 3):
            raise ConfigError(f"image_channels must be 1 or 3, got {self.image_channels}")
        if self.k_s % 2 != 1:
            raise ConfigError(f"k_s must be odd, got {self.k_s}")
        if self.fuse_mode not in ("sum", "concat"):
            raise ConfigError(f"fuse_mode must be 'sum' or 'concat', got {self.fuse_mode!r}")
        total = self.total_downsample()
        if self.input_h % total or self.input_w % total:
            raise ConfigError(
                f"input {self.input_h}x{self.input_w} not divisible by total downsample {total}")

    def total_downsample(self) -> int:
        return int(np.prod([s.downsample for s in self.stages]))

    def spatial(self, stage: int) -> tuple[int, int]:
        f = int(np.prod([s.downsample for s in self.stages[: stage + 1]]))
        return self.input_h // f, self.input_w // f

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["stages"] = [[s.channels, s.blocks, s.downsample] for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> bytes:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).digest()


# ---------------------------------------------------------------------------
# weights


@dataclass
class StemWeights:
    conv1_w: Tensor
    conv1_b: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor


@dataclass
class DownsampleWeights:
    conv_w: Tensor
    conv_b: Tensor
    ln_g: Tensor
    ln_b: Tensor


@dataclass
class VssWeights:
    ln_g: Tensor
    ln_b: Tensor
    in_w: Tensor
    in_b: Tensor
    gate_w: Tensor
    gate_b: Tensor
    scans: Ss2dParams
    out_w: Tensor
    out_b: Tensor


@dataclass
class StageWeights:
    down_event: DownsampleWeights | None
    down_image: DownsampleWeights | None
    event_blocks: list
    image_blocks: list
    csim: CsimParams | None
    ctim: CtimParams | None


@dataclass
class DecoderWeights:
    embed_w: list
    embed_b: list
    fuse_w: Tensor
    fuse_b: Tensor
    cls_w: Tensor
    cls_b: Tensor


@dataclass
class ModelWeights:
    stem_event: StemWeights
    stem_image: StemWeights
    stages: list
    decoder: DecoderWeights


def _conv_init(rng: Rng, c_out: int, c_in: int, k: int, dtype=DTYPE):
    bound = 1.0 / math.sqrt(c_in * k * k)
    w = Tensor(rng.uniform((c_out, c_in, k, k), -bound, bound), requires_grad=True, dtype=dtype)
    b = Tensor(rng.uniform((c_out,), -bound, bound), requires_grad=True, dtype=dtype)
    return w, b


def _ln_init(c: int, dtype=DTYPE):
    return (Tensor(np.ones(c), requires_grad=True, dtype=dtype),
            Tensor(np.zeros(c), requires_grad=True, dtype=dtype))


def _init_stem(rng: Rng, c_in: int, c_out: int, dtype=DTYPE) -> StemWeights:
    w1, b1 = _conv_init(rng, c_out, c_in, 3, dtype)
    g1, be1 = _ln_init(c_out, dtype)
    w2, b2 = _conv_init(rng, c_out, c_out, 3, dtype)
    g2, be2 = _ln_init(c_out, dtype)
    return StemWeights(w1, b1, g1, be1, w2, b2, g2, be2)


def _init_down(rng: Rng, c_in: int, c_out: int, dtype=DTYPE) -> DownsampleWeights:
    w, b = _conv_init(rng, c_out, c_in, 3, dtype)
    g, be = _ln_init(c_out, dtype)
    return DownsampleWeights(w, b, g, be)


def _init_vss(rng: Rng, c: int, expand: int, state_dim: int, dtype=DTYPE) -> VssWeights:
    ce = max(1, c * expand)
    g, be = _ln_init(c, dtype)
    in_w, in_b = _conv_init(rng, ce, c, 1, dtype)
    gate_w, gate_b = _conv_init(rng, ce, c, 1, dtype)
    scans = init_ss2d(ce, state_dim, rng, dtype)
    out_w, out_b = _conv_init(rng, c, ce, 1, dtype)
    return VssWeights(g, be, in_w, in_b, gate_w, gate_b, scans, out_w, out_b)


def init_weights(cfg: ModelConfig, dtype=DTYPE) -> ModelWeights:
    """Seeded initialization; construction order is fixed so a given seed
    always yields the same parameters."""
    rng = Rng(cfg.seed)
    c1 = cfg.stages[0].channels
    stem_event = _init_stem(rng, cfg.t_bins, c1, dtype)
    stem_image = _init_stem(rng, cfg.image_channels, c1, dtype)
    stages = []
    prev_c = c1
    for i, spec in enumerate(cfg.stages):
        down_e = down_i = None
        if i > 0:
            down_e = _init_down(rng, prev_c, spec.channels, dtype)
            down_i = _init_down(rng, prev_c, spec.channels, dtype)
        eb = [_init_vss(rng, spec.channels, cfg.vss_expand, cfg.state_dim, dtype)
              for _ in range(spec.blocks)]
        ib = [_init_vss(rng, spec.channels, cfg.vss_expand, cfg.state_dim, dtype)
              for _ in range(spec.blocks)]
        h, w = cfg.spatial(i)
        csim_p = (init_csim(spec.channels, cfg.k_s, cfg.state_dim, rng, dtype)
                  if cfg.enable_csim else None)
        ctim_p = (init_ctim(spec.channels, h * w, cfg.reduction, cfg.state_dim, rng, dtype)
                  if cfg.enable_ctim else None)
        stages.append(StageWeights(down_e, down_i, eb, ib, csim_p, ctim_p))
        prev_c = spec.channels
    embed_w, embed_b = [], []
    e = cfg.decoder_width
    for spec in cfg.stages:
        c_in = spec.channels if cfg.fuse_mode == "sum" else 2 * spec.channels
        w, b = _conv_init(rng, e, c_in, 1, dtype)
        embed_w.append(w)
        embed_b.append(b)
    fuse_w, fuse_b = _conv_init(rng, e, len(cfg.stages) * e, 1, dtype)
    cls_w, cls_b = _conv_init(rng, cfg.num_classes, e, 1, dtype)
    return ModelWeights(stem_event, stem_image, stages,
                        DecoderWeights(embed_w, embed_b, fuse_w, fuse_b, cls_w, cls_b))


def named_tensors(weights) -> dict:
    """Flatten a weights tree into an ordered {path: Tensor} mapping."""
    out = {}

    def walk(obj, prefix):
        if obj is None:
            return
        if isinstance(obj, Tensor):
            out[prefix] = obj
        elif isinstance(obj, (list, tuple)):
            for i, v in enumerate(obj):
                walk(v, f"{prefix}.{i}")
        elif hasattr(obj, "__dataclass_fields__"):
            for f in fields(obj):
                walk(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
        else:
            raise TypeError(f"unexpected node {type(obj)} at {prefix}")

    walk(weights, "")
    return out


# ---------------------------------------------------------------------------
# forward pieces


def stem(x: Tensor, w: StemWeights) -> Tensor:
    """Two stride-2 convs with layernorm: (C_in, H, W) -> (C_1, H/4, W/4)."""
    if x.shape[1] % 4 or x.shape[2] % 4:
        raise DimensionError(f"stem input spatial dims must divide by 4, got {x.shape}")
    y = conv2d(x, w.conv1_w, w.conv1_b, padding=1, stride=2)
    y = relu(layernorm(y, w.ln1_g, w.ln1_b))
    y = conv2d(y, w.conv2_w, w.conv2_b, padding=1, stride=2)
    return layernorm(y, w.ln2_g, w.ln2_b)


def _downsample(x: Tensor, w: DownsampleWeights) -> Tensor:
    return layernorm(conv2d(x, w.conv_w, w.conv_b, padding=1, stride=2), w.ln_g, w.ln_b)


def vss_block(x: Tensor, w: VssWeights) -> Tensor:
    """Pre-norm residual block: x + project(gate * ss2d(expand(norm(x))))."""
    n = layernorm(x, w.ln_g, w.ln_b)
    u = conv2d(n, w.in_w, w.in_b)
    g = sigmoid(conv2d(n, w.gate_w, w.gate_b))
    s = ss2d(u, w.scans)
    return add(x, conv2d(mul(s, g), w.out_w, w.out_b))


def forward(voxels: VoxelGrid, image: Tensor, cfg: ModelConfig,
            weights: ModelWeights):
    """Run the dual-branch encoder + decoder; returns (logits, stage pairs)."""
    if voxels.bins != cfg.t_bins:
        raise ConfigError(f"voxel grid has {voxels.bins} bins, config expects {cfg.t_bins}")
    expect_img = (cfg.image_channels, cfg.input_h, cfg.input_w)
    if tuple(image.shape) != expect_img:
        raise ConfigError(f"image shape {image.shape} != configured {expect_img}")
    if tuple(voxels.data.shape[1:]) != (cfg.input_h, cfg.input_w):
        raise ConfigError(
            f"voxel spatial dims {voxels.data.shape[1:]} != configured "
            f"{(cfg.input_h, cfg.input_w)}")
    if len(weights.stages) != len(cfg.stages):
        raise ConfigError("weights stage count does not match config")

    ev = stem(voxels.data, weights.stem_event)
    im = stem(image, weights.stem_image)
    pairs = []
    for i, sw in enumerate(weights.stages):
        if i > 0:
            ev = _downsample(ev, sw.down_event)
            im = _downsample(im, sw.down_image)
        for blk in sw.event_blocks:
            ev = vss_block(ev, blk)
        for blk in sw.image_blocks:
            im = vss_block(im, blk)
        pair = ddim(ModalityPair(event=ev, image=im), sw.csim, sw.ctim,
                    enable_csim=cfg.enable_csim, enable_ctim=cfg.enable_ctim,
                    csim_first=cfg.csim_first)
        pairs.append(pair)
        ev, im = pair.event, pair.image

    h4, w4 = cfg.spatial(0)
    feats = []
    for pair, ew, eb in zip(pairs, weights.decoder.embed_w, weights.decoder.embed_b):
        fused = (add(pair.event, pair.image) if cfg.fuse_mode == "sum"
                 else concat([pair.event, pair.image]))
        emb = conv2d(fused, ew, eb)
        if emb.shape[1:] != (h4, w4):
            emb = upsample_bilinear(emb, h4, w4)
        feats.append(emb)
    fused = relu(conv2d(concat(feats), weights.decoder.fuse_w, weights.decoder.fuse_b))
    logits = conv2d(fused, weights.decoder.cls_w, weights.decoder.cls_b)
    logits = upsample_bilinear(logits, cfg.input_h, cfg.input_w)
    return logits, pairs


def cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int = 255) -> Tensor:
    """Mean over non-ignored pixels of -log softmax at the true class,
    stabilized with log-sum-exp."""
    if logits.data.ndim != 3:
        raise DimensionError(f"logits must be (K, H, W), got {logits.shape}")
    k = logits.shape[0]
    labels = np.asarray(labels)
    if labels.shape != logits.shape[1:]:
        raise DimensionError(
            f"labels shape {labels.shape} != logits spatial {logits.shape[1:]}")
    flat = logits.data.reshape(k, -1)
    lab = labels.reshape(-1).astype(np.int64)
    valid = lab != ignore_index
    if not valid.any():
        raise DataError("all pixels carry the ignore index")
    if ((lab[valid] < 0) | (lab[valid] >= k)).any():
        raise DataError(f"label outside [0, {k}) and not the ignore index")
    m = flat.max(axis=0)
    lse = m + np.log(np.exp(flat - m).sum(axis=0))
    cols = np.nonzero(valid)[0]
    true_logit = flat[lab[cols], cols]
    n_valid = cols.size
    out = np.asarray((lse[cols] - true_logit).sum() / n_valid, dtype=logits.data.dtype)

    def bwd(g):
        p = np.exp(flat - lse)
        gflat = np.zeros_like(flat)
        gflat[:, cols] = p[:, cols]
        gflat[lab[cols], cols] -= 1.0
        gflat *= float(g) / n_valid
        return (gflat.reshape(logits.data.shape),)

    return record("cross_entropy", (logits,), out, bwd)


# ---------------------------------------------------------------------------
# training and evaluation


def synthetic_sample(cfg: ModelConfig, seed: int, frames: int = 10, speed: float = 1.0):
    """One voxelized synthetic scene matching the config geometry."""
    image, events, label = gen_synthetic(seed, cfg.input_h, cfg.input_w,
                                         frames=frames, speed=speed)
    t0, t1 = synthetic_window(frames)
    return voxelize(events, t0, t1, cfg.t_bins), image, label


GRAD_CLIP_NORM = 1.0


def train_toy(cfg: ModelConfig, dataset, steps: int, lr: float = 1e-2):
    """Gradient descent with a fixed learning rate.

    The update is plain first-order descent; the one stabilizer is a global
    gradient-norm clip at GRAD_CLIP_NORM, without which a fixed learning
    rate oscillates into float32 overflow once the loss sharpens.

    `dataset` is a list of (VoxelGrid, image, label) samples cycled per step.
    Returns (weights, losses) where losses has steps + 1 entries: the loss
    before each update plus a final evaluation.
    """
    if steps < 0:
        raise DataError("steps must be >= 0")
    if not dataset:
        raise DataError("dataset is empty")
    weights = init_weights(cfg)
    tensors = list(named_tensors(weights).values())
    losses = []

    def eval_loss(sample):
        voxels, image, label = sample
        logits, _ = forward(voxels, image, cfg, weights)
        return cross_entropy(logits, label)

    for step in range(steps):
        sample = dataset[step % len(dataset)]
        try:
            with GradTape() as tape:
                loss = eval_loss(sample)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NumericError(f"loss diverged at step {step}")
                tape.backward(loss)
        except NumericError as err:
            raise NumericError(f"step {step}: {err}") from err
        losses.append(value)
        sq = 0.0
        for t in tensors:
            if t.grad is not None:
                sq += float((t.grad.astype(np.float64) ** 2).sum())
        factor = min(1.0, GRAD_CLIP_NORM / max(math.sqrt(sq), 1e-12))
        for t in tensors:
            if t.grad is not None:
                t.data -= (lr * factor * t.grad).astype(t.data.dtype)
                t.grad = None
    try:
        final = float(eval_loss(dataset[0]).data)
    except NumericError as err:
        raise NumericError(f"step {steps}: {err}") from err
    if not math.isfinite(final):
        raise NumericError(f"loss diverged at step {steps}")
    losses.append(final)
    return weights, losses


def predict(cfg: ModelConfig, weights: ModelWeights, voxels: VoxelGrid,
            image: Tensor) -> np.ndarray:
    logits, _ = forward(voxels, image, cfg, weights)
    return predictions(logits.data)


def evaluate(cfg: ModelConfig, weights: ModelWeights, dataset,
             ignore_index: int = 255) -> SegMetrics:
    """Aggregate confusion over the dataset, then derive the metrics."""
    from .counting import count_params_macs

    total = None
    for voxels, image, label in dataset:
        m = metrics(predict(cfg, weights, voxels, image), label,
                    cfg.num_classes, ignore_index)
        total = m.confusion if total is None else total + m.confusion
    tp = np.diag(total)
    fp = total.sum(axis=0) - tp
    fn = total.sum(axis=1) - tp
    union = tp + fp + fn
    per_class = [float(tp[i] / union[i]) if union[i] else None
                 for i in range(cfg.num_classes)]
    present = [v for v in per_class if v is not None]
    params, macs = count_params_macs(cfg)
    return SegMetrics(confusion=total, per_class_iou=per_class,
                      miou=float(np.mean(present)),
                      pixel_acc=float(tp.sum() / total.sum()),
                      params=params, macs=macs)
