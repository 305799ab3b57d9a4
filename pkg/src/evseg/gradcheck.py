"""Finite-difference verification of the reverse-mode gradients.

Every check rebuilds the op graph in float64, projects the output onto a
fixed random direction to get a scalar, and compares the taped gradient
against central differences with step 1e-3. The reported error for a check
is max|analytic - numeric| / max(1, max|numeric|), so it reads as a relative
error at realistic gradient scales without exploding on near-zero entries.

Scopes mirror the layers of the package: `tensor` (each primitive op),
`scan`, `ss2d`, `csim`, `ctim`, and `model` (the full toy network end to
end, sampled coordinates).
"""

from __future__ import annotations

import numpy as np

from .ddim import ModalityPair, csim, ctim, init_csim, init_ctim
from .model import (
    ModelConfig,
    StageSpec,
    cross_entropy,
    forward,
    init_weights,
    named_tensors,
    synthetic_sample,
)
from .events import VoxelGrid
from .rng import Rng
from .scan import init_s6, scan_bidirectional, scan_parallel, scan_sequential
from .ss2d import init_ss2d, ss2d
from .tensor import (
    GradTape,
    Tensor,
    activation,
    channel_pool,
    concat,
    conv2d,
    deinterleave,
    ewise,
    interleave,
    layernorm,
    matmul,
    mean_all,
    mul,
    reshape,
    reverse,
    scale,
    spatial_pool,
    split,
    sum_all,
    take_rows,
    transpose2d,
    upsample_bilinear,
)

F64 = np.float64
STEP = 1e-3
THRESHOLD = 1e-4


def _t(rng, shape, away_from_zero=False):
    """float64 leaf with entries in [-1, 1] (or magnitude in [0.1, 1])."""
    v = rng.uniform(-1.0, 1.0, shape)
    if away_from_zero:
        v = np.sign(v) * (0.1 + 0.9 * np.abs(v))
    return Tensor(v, requires_grad=True, dtype=F64)


def fd_check(build, wrt, seed=0, step=STEP, max_coords_per_tensor=None):
    """Compare taped gradients of a random projection of build() against
    central finite differences on the data of the `wrt` tensors."""
    rng = np.random.default_rng(seed)
    for t in wrt:
        t.grad = None
    with GradTape() as tape:
        out = build()
        proj = rng.uniform(-1.0, 1.0, out.data.shape)
        loss = sum_all(mul(out, Tensor(proj, dtype=F64)))
        tape.backward(loss)
    analytic = []
    for t in wrt:
        analytic.append(np.zeros_like(t.data) if t.grad is None else t.grad.copy())
        t.grad = None

    def eval_loss():
        return float((build().data * proj).sum())

    def central(flat, idx, h):
        orig = flat[idx]
        flat[idx] = orig + h
        f_plus = eval_loss()
        flat[idx] = orig - h
        f_minus = eval_loss()
        flat[idx] = orig
        return (f_plus - f_minus) / (2.0 * h)

    worst = 0.0
    scale_ = 0.0
    for t, ga in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        ga_flat = ga.reshape(-1)
        n = flat.size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        else:
            coords = range(n)
        for idx in coords:
            numeric = central(flat, idx, step)
            diff = abs(ga_flat[idx] - numeric)
            if diff >= 0.25 * THRESHOLD * max(1.0, abs(numeric)):
                # the O(h^2) truncation term can dominate where composition
                # makes the third derivative large; re-verify at a finer step
                numeric = central(flat, idx, step / 100.0)
                diff = abs(ga_flat[idx] - numeric)
            worst = max(worst, diff)
            scale_ = max(scale_, abs(numeric))
    return worst / max(1.0, scale_)


# ---------------------------------------------------------------------------
# scope: tensor


def check_tensor_ops(seed: int = 0) -> dict:
    report = {}
    for trial in range(3):
        rng = np.random.default_rng(seed * 1000 + trial)

        def run(name, build, wrt):
            err = fd_check(build, wrt, seed=seed * 1000 + trial)
            report[name] = max(report.get(name, 0.0), err)

        x = _t(rng, (2, 5, 5))
        w = _t(rng, (3, 2, 3, 3))
        b = _t(rng, (3,))
        run("conv2d", lambda: conv2d(x, w, b, padding=1, stride=1), [x, w, b])
        ws = _t(rng, (3, 2, 3, 3))
        run("conv2d_strided", lambda: conv2d(x, ws, b, padding=1, stride=2), [x, ws, b])

        cp = _t(rng, (3, 4, 4), away_from_zero=True)
        run("channel_pool_avg", lambda: channel_pool(cp, "avg"), [cp])
        run("channel_pool_max", lambda: channel_pool(cp, "max"), [cp])
        run("spatial_pool_avg", lambda: spatial_pool(cp, "avg"), [cp])
        run("spatial_pool_max", lambda: spatial_pool(cp, "max"), [cp])

        a = _t(rng, (2, 3, 4), away_from_zero=True)
        run("activation_sigmoid", lambda: activation(a, "sigmoid"), [a])
        run("activation_relu", lambda: activation(a, "relu"), [a])
        run("activation_softplus", lambda: activation(a, "softplus"), [a])
        run("activation_exp", lambda: activation(a, "exp"), [a])

        e1 = _t(rng, (3, 2, 2))
        e2 = _t(rng, (3, 2, 2))
        run("ewise_add", lambda: ewise(e1, e2, "add"), [e1, e2])
        run("ewise_mul", lambda: ewise(e1, e2, "mul"), [e1, e2])
        wsp = _t(rng, (1, 2, 2))
        wch = _t(rng, (3, 1, 1))
        run("ewise_mul_spatial_map", lambda: ewise(e1, wsp, "mul"), [e1, wsp])
        run("ewise_mul_channel_map", lambda: ewise(e1, wch, "mul"), [e1, wch])

        m1 = _t(rng, (3, 4))
        m2 = _t(rng, (4, 2))
        run("matmul", lambda: matmul(m1, m2), [m1, m2])
        run("scale", lambda: scale(m1, 1.7), [m1])

        c1 = _t(rng, (2, 3, 3))
        c2 = _t(rng, (4, 3, 3))
        run("concat", lambda: concat([c1, c2]), [c1, c2])
        sp = _t(rng, (6, 2, 2))
        run("split", lambda: concat(list(split(sp, 3))), [sp])
        i1 = _t(rng, (2, 3, 3))
        i2 = _t(rng, (2, 3, 3))
        run("interleave", lambda: interleave(i1, i2), [i1, i2])
        dv = _t(rng, (4, 2, 2))
        run("deinterleave", lambda: concat(list(deinterleave(dv))), [dv])
        run("reverse", lambda: reverse(c1, 0), [c1])
        run("reshape", lambda: reshape(c1, (3, 6)), [c1])
        run("transpose2d", lambda: transpose2d(m1), [m1])
        idx = np.random.default_rng(trial).permutation(4)
        tr = _t(rng, (4, 3))
        run("take_rows", lambda: take_rows(tr, idx), [tr])

        ln_x = _t(rng, (4, 3, 3))
        ln_g = _t(rng, (4,))
        ln_b = _t(rng, (4,))
        run("layernorm", lambda: layernorm(ln_x, ln_g, ln_b), [ln_x, ln_g, ln_b])

        run("sum_all", lambda: sum_all(c1), [c1])
        run("mean_all", lambda: mean_all(c1), [c1])
        up = _t(rng, (2, 3, 4))
        run("upsample_bilinear", lambda: upsample_bilinear(up, 6, 8), [up])

        lg = _t(rng, (3, 2, 2))
        lab = np.random.default_rng(trial + 7).integers(0, 3, (2, 2))
        run("cross_entropy", lambda: cross_entropy(lg, lab), [lg])
    return report


# ---------------------------------------------------------------------------
# composite scopes


def check_scan(seed: int = 0) -> dict:
    report = {}
    for trial in range(2):
        rng = Rng(seed * 977 + trial)
        nprng = np.random.default_rng(seed * 977 + trial)
        p = init_s6(2, 3, rng, dtype=F64)
        x = _t(nprng, (6, 2))
        wrt = p.tensors() + [x]
        err = fd_check(lambda: scan_sequential(p, x), wrt, seed=seed + trial)
        report["scan_sequential"] = max(report.get("scan_sequential", 0.0), err)
        err = fd_check(lambda: scan_parallel(p, x), wrt, seed=seed + trial)
        report["scan_parallel"] = max(report.get("scan_parallel", 0.0), err)
        pb = init_s6(2, 3, rng, dtype=F64)
        wrt2 = wrt + pb.tensors()
        err = fd_check(lambda: scan_bidirectional(p, pb, x), wrt2, seed=seed + trial)
        report["scan_bidirectional"] = max(report.get("scan_bidirectional", 0.0), err)
    return report


def check_ss2d(seed: int = 0) -> dict:
    rng = Rng(seed * 31 + 5)
    nprng = np.random.default_rng(seed * 31 + 5)
    params = init_ss2d(2, 2, rng, dtype=F64)
    x = _t(nprng, (2, 3, 3))
    err = fd_check(lambda: ss2d(x, params), params.tensors() + [x], seed=seed)
    return {"ss2d": err}


def check_csim(seed: int = 0) -> dict:
    rng = Rng(seed * 53 + 11)
    nprng = np.random.default_rng(seed * 53 + 11)
    p = init_csim(2, 3, 2, rng, dtype=F64)
    e = _t(nprng, (2, 3, 3))
    i = _t(nprng, (2, 3, 3))

    def build():
        out = csim(ModalityPair(event=e, image=i), p)
        return concat([out.event, out.image])

    err = fd_check(build, p.tensors() + [e, i], seed=seed, max_coords_per_tensor=8)
    return {"csim": err}


def check_ctim(seed: int = 0) -> dict:
    rng = Rng(seed * 67 + 13)
    nprng = np.random.default_rng(seed * 67 + 13)
    p = init_ctim(2, 9, 2, 2, rng, dtype=F64)
    e = _t(nprng, (2, 3, 3))
    i = _t(nprng, (2, 3, 3))

    def build():
        out = ctim(ModalityPair(event=e, image=i), p)
        return concat([out.event, out.image])

    err = fd_check(build, p.tensors() + [e, i], seed=seed, max_coords_per_tensor=8)
    return {"ctim": err}


def gradcheck_config() -> ModelConfig:
    """Small full-model config at 16x16 input for the end-to-end check."""
    return ModelConfig(
        t_bins=4,
        stages=(StageSpec(4, 1, 4), StageSpec(8, 1, 2)),
        num_classes=2,
        input_h=16,
        input_w=16,
        k_s=3,
        reduction=2,
        state_dim=2,
        vss_expand=1,
        decoder_width=8,
        seed=0,
    )


def check_model(seed: int = 0) -> dict:
    cfg = gradcheck_config()
    cfg.seed = seed
    weights = init_weights(cfg, dtype=F64)
    voxels, image, label = synthetic_sample(cfg, seed)
    voxels = VoxelGrid(data=Tensor(voxels.data.data, dtype=F64),
                       t0=voxels.t0, t1=voxels.t1)
    image = Tensor(image.data, dtype=F64)
    tensors = list(named_tensors(weights).values())

    def build():
        logits, _ = forward(voxels, image, cfg, weights)
        return cross_entropy(logits, label)

    err = fd_check(build, tensors, seed=seed, max_coords_per_tensor=2)
    return {"model": err}


SCOPES = {
    "tensor": check_tensor_ops,
    "scan": check_scan,
    "ss2d": check_ss2d,
    "csim": check_csim,
    "ctim": check_ctim,
    "model": check_model,
}


def run_scope(scope: str, seed: int = 0) -> dict:
    if scope not in SCOPES:
        raise ValueError(f"unknown gradcheck scope {scope!r}; choices: {sorted(SCOPES)}")
    return SCOPES[scope](seed)
