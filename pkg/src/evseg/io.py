"""On-disk formats: event text, voxel and weight binaries, PGM/PPM images,
and the metrics JSON report.

Event text: header `# events w=<W> h=<H>`, then one `t_us x y p` per line
with p in {-1, 1}.

Voxel binary: magic `MSVG`, little-endian u32 T, H, W, then T*H*W
little-endian float32 values in (t, y, x) row-major order.

Weights checkpoint: magic `MSWT`, a 32-byte config digest, u32 tensor count,
then per tensor: u32 name length, name bytes, u32 rank, u32 extents,
float32 data (all little-endian).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ConfigError, DataError
from .events import EventStream, VoxelGrid
from .metrics import SegMetrics
from .tensor import Tensor

VOXEL_MAGIC = b"MSVG"
WEIGHTS_MAGIC = b"MSWT"

# 11 distinguishable colors; class index -> RGB
PALETTE = (
    (0, 0, 0), (230, 25, 75), (60, 180, 75), (255, 225, 25),
    (0, 130, 200), (245, 130, 48), (145, 30, 180), (70, 240, 240),
    (240, 50, 230), (128, 128, 0), (0, 128, 128),
)


# ---------------------------------------------------------------------------
# event text


def write_events(path, stream: EventStream):
    with open(path, "w") as fh:
        fh.write(f"# events w={stream.sensor_w} h={stream.sensor_h}\n")
        for t, x, y, p in zip(stream.t, stream.x, stream.y, stream.p):
            fh.write(f"{int(t)} {int(x)} {int(y)} {int(p)}\n")


def read_events(path) -> EventStream:
    with open(path) as fh:
        header = fh.readline()
        parts = header.strip().split()
        if (len(parts) != 4 or parts[0] != "#" or parts[1] != "events"
                or not parts[2].startswith("w=") or not parts[3].startswith("h=")):
            raise DataError(f"{path}: line 1: bad header {header.strip()!r}")
        try:
            w = int(parts[2][2:])
            h = int(parts[3][2:])
        except ValueError:
            raise DataError(f"{path}: line 1: bad sensor dims in header") from None
        records = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cols = line.split()
            if len(cols) != 4:
                raise DataError(f"{path}: line {lineno}: expected 4 fields, got {len(cols)}")
            try:
                t, x, y, p = (int(c) for c in cols)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-integer field") from None
            if p not in (-1, 1):
                raise DataError(f"{path}: line {lineno}: polarity {p} not in {{-1, 1}}")
            records.append((t, x, y, p))
    try:
        return EventStream.from_records(records, sensor_w=w, sensor_h=h)
    except DataError as err:
        raise DataError(f"{path}: {err}") from err


# ---------------------------------------------------------------------------
# voxel binary


def write_voxels(path, grid: VoxelGrid):
    data = np.ascontiguousarray(grid.data.data, dtype="<f4")
    t, h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(VOXEL_MAGIC)
        fh.write(struct.pack("<III", t, h, w))
        fh.write(data.tobytes())


def read_voxels(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != VOXEL_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {VOXEL_MAGIC!r}")
        t, h, w = struct.unpack("<III", fh.read(12))
        payload = fh.read(4 * t * h * w)
        if len(payload) != 4 * t * h * w:
            raise DataError(f"{path}: truncated voxel payload")
        data = np.frombuffer(payload, dtype="<f4").reshape(t, h, w).copy()
    return VoxelGrid(data=Tensor(data), t0=0, t1=0)


# ---------------------------------------------------------------------------
# weights checkpoint


def save_weights(path, digest: bytes, named: dict):
    if len(digest) != 32:
        raise ConfigError("config digest must be 32 bytes")
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(digest)
        fh.write(struct.pack("<I", len(named)))
        for name, tensor in named.items():
            raw = name.encode()
            arr = np.ascontiguousarray(tensor.data, dtype="<f4")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_weights(path) -> tuple[bytes, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != WEIGHTS_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {WEIGHTS_MAGIC!r}")
        digest = fh.read(32)
        (count,) = struct.unpack("<I", fh.read(4))
        named = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode()
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            n = int(np.prod(shape)) if shape else 1
            payload = fh.read(4 * n)
            if len(payload) != 4 * n:
                raise DataError(f"{path}: truncated tensor {name!r}")
            named[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return digest, named


def apply_weights(weights_tree_named: dict, loaded: dict, digest: bytes,
                  expected_digest: bytes):
    """Overwrite in-memory weights with checkpoint data after a digest check."""
    if digest != expected_digest:
        raise ConfigError("checkpoint config digest does not match the given config")
    missing = set(weights_tree_named) - set(loaded)
    extra = set(loaded) - set(weights_tree_named)
    if missing or extra:
        raise ConfigError(f"checkpoint tensors mismatch: missing={sorted(missing)[:3]} "
                          f"extra={sorted(extra)[:3]}")
    for name, tensor in weights_tree_named.items():
        arr = loaded[name]
        if arr.shape != tensor.data.shape:
            raise ConfigError(f"checkpoint tensor {name!r} has shape {arr.shape}, "
                              f"expected {tensor.data.shape}")
        tensor.data = arr.astype(tensor.data.dtype)


# ---------------------------------------------------------------------------
# PGM / PPM


def write_pgm(path, arr: np.ndarray):
    arr = np.asarray(arr)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise DataError(f"PGM wants a 2-d uint8 array, got {arr.shape} {arr.dtype}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval}")
    pixels = parts[4][: w * h]
    if len(pixels) != w * h:
        raise DataError(f"{path}: truncated pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w).copy()


def write_ppm(path, rgb: np.ndarray):
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise DataError(f"PPM wants an (H, W, 3) uint8 array, got {rgb.shape} {rgb.dtype}")
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(rgb.tobytes())


def class_scale(num_classes: int) -> int:
    return 255 // max(num_classes - 1, 1)


def classes_to_pgm(pred: np.ndarray, num_classes: int) -> np.ndarray:
    return (pred * class_scale(num_classes)).astype(np.uint8)


def pgm_to_classes(arr: np.ndarray, num_classes: int) -> np.ndarray:
    scale = class_scale(num_classes)
    cls = np.rint(arr.astype(np.float64) / scale).astype(np.int64)
    return np.clip(cls, 0, num_classes - 1)


def classes_to_ppm(pred: np.ndarray) -> np.ndarray:
    out = np.zeros(pred.shape + (3,), dtype=np.uint8)
    for k in range(int(pred.max()) + 1):
        out[pred == k] = PALETTE[k % len(PALETTE)]
    return out


def write_metrics_json(path, m: SegMetrics):
    with open(path, "w") as fh:
        json.dump(m.to_json_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
