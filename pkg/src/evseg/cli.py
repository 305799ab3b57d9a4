"""Command-line front end.

Commands: voxelize, forward, train-toy, bench-scan, gradcheck, metrics,
gen-data. Every command is deterministic given its arguments and seed.

Exit codes: 0 success; 2 usage or parse error; 3 config/weights mismatch;
4 numeric divergence; 5 verification failure.

Config file: a JSON object whose `model` section mirrors the model
configuration (see `ModelConfig`; run `evseg forward --help` for the
defaults) and whose optional `paths` section supplies {events, voxels,
image, labels, weights, out_dir}. Command-line flags override paths.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import counting, gradcheck, io, kernels
from .errors import ConfigError, DataError, DimensionError, EvsegError, NumericError
from .events import gen_synthetic, voxelize
from .metrics import metrics as compute_metrics
from .model import (
    ModelConfig,
    forward,
    init_weights,
    named_tensors,
    synthetic_sample,
    train_toy,
)
from .scan import bench_scan, doubling_ratio
from .tensor import Tensor

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4
EXIT_VERIFY = 5


class UsageError(EvsegError):
    pass


def _say(args, msg):
    if not args.quiet:
        print(msg)


def _load_run_config(path) -> tuple[ModelConfig, dict]:
    """Parse the run-config JSON: returns (model config, paths dict)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise UsageError(f"{path}: invalid JSON: {err}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    known = {"model", "paths"}
    unknown = set(doc) - known
    if unknown:
        raise UsageError(f"{path}: unknown config keys: {sorted(unknown)}")
    try:
        cfg = ModelConfig.from_dict(doc.get("model", {}))
    except (ConfigError, TypeError) as err:
        raise UsageError(f"{path}: bad model section: {err}") from None
    paths = doc.get("paths", {})
    if not isinstance(paths, dict):
        raise UsageError(f"{path}: paths section must be an object")
    allowed = {"events", "voxels", "image", "labels", "weights", "out_dir"}
    bad = set(paths) - allowed
    if bad:
        raise UsageError(f"{path}: unknown paths keys: {sorted(bad)}")
    return cfg, paths


def _effective_seed(args, cfg: ModelConfig | None) -> int:
    if args.seed is not None:
        return args.seed
    return cfg.seed if cfg is not None else 0


def _out(args, paths, name):
    out_dir = args.out_dir or paths.get("out_dir") or "."
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


# ---------------------------------------------------------------------------
# commands


def cmd_voxelize(args) -> int:
    if args.t1 <= args.t0:
        raise UsageError(f"t1 ({args.t1}) must be greater than t0 ({args.t0})")
    if args.bins < 1:
        raise UsageError(f"bins must be >= 1, got {args.bins}")
    stream = io.read_events(args.events)
    grid = voxelize(stream, args.t0, args.t1, args.bins)
    out_path = args.out or "voxels.msvg"
    io.write_voxels(out_path, grid)
    in_window = int(((stream.t >= args.t0) & (stream.t < args.t1)).sum())
    with open(out_path, "rb") as fh:
        checksum = hashlib.sha256(fh.read()).hexdigest()[:16]
    _say(args, f"events={len(stream)} in_window={in_window} checksum={checksum}")
    return EXIT_OK


def _build_weights(cfg: ModelConfig, weights_path):
    weights = init_weights(cfg)
    if weights_path:
        digest, loaded = io.load_weights(weights_path)
        io.apply_weights(named_tensors(weights), loaded, digest, cfg.digest())
    return weights


def cmd_forward(args) -> int:
    cfg, paths = _load_run_config(args.config)
    voxels_path = args.voxels or paths.get("voxels")
    image_path = args.image or paths.get("image")
    if not voxels_path or not image_path:
        raise UsageError("forward needs voxel and image paths (flags or config paths)")
    voxels = io.read_voxels(voxels_path)
    img_raw = io.read_pgm(image_path)
    image = Tensor(img_raw[None].astype(np.float32) / 255.0)
    weights = _build_weights(cfg, args.weights or paths.get("weights"))
    logits, _ = forward(voxels, image, cfg, weights)
    pred = logits.data.argmax(axis=0)
    pred_path = _out(args, paths, "prediction.pgm")
    io.write_pgm(pred_path, io.classes_to_pgm(pred, cfg.num_classes))
    if args.render:
        io.write_ppm(_out(args, paths, "prediction.ppm"), io.classes_to_ppm(pred))
    params, macs = counting.count_params_macs(cfg)
    _say(args, f"params={params} macs={macs}")
    _say(args, f"prediction written to {pred_path}")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    cfg, paths = _load_run_config(args.config)
    seed = _effective_seed(args, cfg)
    cfg.seed = seed
    sample = synthetic_sample(cfg, seed)
    weights, losses = train_toy(cfg, [sample], args.steps, args.lr)
    loss_path = _out(args, paths, "loss.csv")
    with open(loss_path, "w") as fh:
        fh.write("step,loss\n")
        for i, v in enumerate(losses):
            fh.write(f"{i},{v:.8f}\n")
    weights_path = args.out_weights or _out(args, paths, "weights.mswt")
    io.save_weights(weights_path, cfg.digest(), named_tensors(weights))
    voxels, image, label = sample
    logits, _ = forward(voxels, image, cfg, weights)
    m = compute_metrics(logits.data.argmax(axis=0), label, cfg.num_classes)
    m.params, m.macs = counting.count_params_macs(cfg)
    io.write_metrics_json(_out(args, paths, "metrics.json"), m)
    _say(args, f"final_loss={losses[-1]:.6f} miou={m.miou:.4f}")
    return EXIT_OK


def cmd_bench_scan(args) -> int:
    lengths = [int(v) for v in args.lengths.split(",")]
    if lengths != sorted(lengths):
        raise UsageError(f"lengths must be ascending, got {lengths}")
    seed = args.seed if args.seed is not None else 0
    rows = bench_scan(lengths, d=args.d, n=args.n, repeats=args.repeats, seed=seed)
    out_path = args.out or "bench.csv"
    with open(out_path, "w") as fh:
        fh.write("L,ns_per_element,total_ns\n")
        for r in rows:
            fh.write(f"{r.length},{r.ns_per_element:.2f},{r.total_ns}\n")
    for r in rows:
        _say(args, f"L={r.length} ns_per_element={r.ns_per_element:.2f} total_ns={r.total_ns}")
    if len(rows) >= 2 and rows[-1].length == 2 * rows[-2].length:
        ratio = doubling_ratio(rows)
        verdict = "PASS" if 1.6 <= ratio <= 2.6 else "FAIL"
        _say(args, f"doubling_ratio={ratio:.3f} window=[1.6,2.6] verdict={verdict}")
    if args.compare_backends:
        if len(kernels.available_backends()) < 2:
            _say(args, "only one backend available; nothing to compare")
        else:
            for name in kernels.available_backends():
                with kernels.backend(name):
                    brows = bench_scan(lengths, d=args.d, n=args.n,
                                       repeats=args.repeats, seed=seed)
                for r in brows:
                    _say(args, f"backend={name} L={r.length} total_ns={r.total_ns}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.scope not in gradcheck.SCOPES:
        raise UsageError(
            f"unknown scope {args.scope!r}; choices: {sorted(gradcheck.SCOPES)}")
    report = gradcheck.run_scope(args.scope, seed)
    failing = []
    for name in sorted(report):
        err = report[name]
        ok = err < gradcheck.THRESHOLD
        _say(args, f"{name} max_rel_err={err:.3e} {'PASS' if ok else 'FAIL'}")
        if not ok:
            failing.append(name)
    if failing:
        print(f"gradcheck FAILED for: {', '.join(failing)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_metrics(args) -> int:
    pred_img = io.read_pgm(args.pred)
    label_img = io.read_pgm(args.label)
    if pred_img.shape != label_img.shape:
        raise UsageError(
            f"size mismatch: prediction {pred_img.shape} vs label {label_img.shape}")
    pred = io.pgm_to_classes(pred_img, args.classes)
    label = io.pgm_to_classes(label_img, args.classes)
    m = compute_metrics(pred, label, args.classes)
    if args.config:
        cfg, _ = _load_run_config(args.config)
        m.params, m.macs = counting.count_params_macs(cfg)
    out_path = args.out or "metrics.json"
    io.write_metrics_json(out_path, m)
    _say(args, f"miou={m.miou:.5f} pixel_acc={m.pixel_acc:.5f}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    seed = args.seed if args.seed is not None else 0
    image, events, label = gen_synthetic(seed, args.height, args.width,
                                         frames=args.frames, speed=args.speed)
    paths = {}
    io.write_events(_out(args, paths, "events.txt"), events)
    io.write_pgm(_out(args, paths, "image.pgm"),
                 np.rint(image.data[0] * 255.0).astype(np.uint8))
    io.write_pgm(_out(args, paths, "label.pgm"),
                 io.classes_to_pgm(label, 2))
    _say(args, f"events={len(events)} label_pixels={int(label.sum())}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="seed for all randomness (default: config seed or 0)")
    common.add_argument("--config", help="run-config JSON path")
    common.add_argument("--out-dir", help="directory for generated files (default .)")
    common.add_argument("--quiet", action="store_true", help="suppress status output")

    parser = argparse.ArgumentParser(
        prog="evseg",
        description="Event/image segmentation toolkit: selective-scan encoders, "
                    "spatial/temporal fusion, and its verification harness.",
        epilog="model config defaults: " + json.dumps(ModelConfig().to_dict()),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", parents=[common],
                       help="accumulate an event text file into a voxel grid")
    p.add_argument("--events", required=True, help="event text file")
    p.add_argument("--t0", type=int, required=True, help="window start (us, inclusive)")
    p.add_argument("--t1", type=int, required=True, help="window end (us, exclusive)")
    p.add_argument("--bins", type=int, required=True, help="temporal bin count")
    p.add_argument("--out", help="output voxel file (default voxels.msvg)")
    p.set_defaults(fn=cmd_voxelize)

    p = sub.add_parser("forward", parents=[common],
                       help="run inference and write the prediction map")
    p.add_argument("--voxels", help="voxel grid file (overrides config paths)")
    p.add_argument("--image", help="image PGM file (overrides config paths)")
    p.add_argument("--weights", help="weights checkpoint (default: seeded init)")
    p.add_argument("--render", action="store_true", help="also write a color PPM")
    p.set_defaults(fn=cmd_forward, needs_config=True)

    p = sub.add_parser("train-toy", parents=[common],
                       help="gradient-descent training on the synthetic scene")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--out-weights", help="checkpoint path (default out-dir/weights.mswt)")
    p.set_defaults(fn=cmd_train_toy, needs_config=True)

    p = sub.add_parser("bench-scan", parents=[common],
                       help="wall-clock scan benchmark, CSV output")
    p.add_argument("--lengths", default="1024,2048,4096,8192",
                   help="comma-separated ascending sequence lengths")
    p.add_argument("--d", type=int, default=4,
                   help="channel count (default keeps the working set cache-resident)")
    p.add_argument("--n", type=int, default=8, help="state dimension")
    p.add_argument("--repeats", type=int, default=9, help="median of this many runs")
    p.add_argument("--out", help="CSV path (default bench.csv)")
    p.add_argument("--compare-backends", action="store_true",
                   help="also time every available kernel backend")
    p.set_defaults(fn=cmd_bench_scan)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference gradient verification")
    p.add_argument("--scope", required=True,
                   help="one of: tensor, scan, ss2d, csim, ctim, model")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("metrics", parents=[common],
                       help="confusion metrics between two class PGM files")
    p.add_argument("--pred", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--out", help="metrics JSON path (default metrics.json)")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("gen-data", parents=[common],
                       help="write a synthetic scene (events, image, label)")
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--speed", type=float, default=1.0)
    p.set_defaults(fn=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "needs_config", False) and not args.config:
        print("error: this command requires --config", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except (UsageError, DataError, DimensionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
