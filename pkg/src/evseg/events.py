"""Event streams, voxel grids, and synthetic scene generation.

An event is (t microseconds, x column, y row, polarity +-1). Voxelization
accumulates polarities into T temporal bins over a half-open window
[t0, t1): bin = floor(T * (t - t0) / (t1 - t0)), computed in exact integer
arithmetic so every in-window event lands in exactly one bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError
from .rng import Rng
from .tensor import Tensor


@dataclass
class EventStream:
    t: np.ndarray  # int64 microseconds, non-decreasing
    x: np.ndarray  # int32 column, 0 <= x < sensor_w
    y: np.ndarray  # int32 row, 0 <= y < sensor_h
    p: np.ndarray  # int8 polarity in {-1, +1}
    sensor_w: int
    sensor_h: int

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.int32)
        self.y = np.asarray(self.y, dtype=np.int32)
        self.p = np.asarray(self.p, dtype=np.int8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise DataError("event field lengths differ")
        if n > 1 and (np.diff(self.t) < 0).any():
            bad = int(np.argwhere(np.diff(self.t) < 0)[0, 0]) + 1
            raise DataError(f"timestamps decrease at record {bad}")
        self._check_bounds()
        bad_p = (self.p != 1) & (self.p != -1)
        if bad_p.any():
            raise DataError(f"polarity not in {{-1, 1}} at record {int(np.argwhere(bad_p)[0, 0])}")

    def _check_bounds(self):
        oob = (self.x < 0) | (self.x >= self.sensor_w) | (self.y < 0) | (self.y >= self.sensor_h)
        if oob.any():
            i = int(np.argwhere(oob)[0, 0])
            raise DataError(
                f"record {i}: coordinates ({int(self.x[i])}, {int(self.y[i])}) outside "
                f"sensor {self.sensor_w}x{self.sensor_h}")

    @classmethod
    def from_records(cls, records, sensor_w: int, sensor_h: int) -> "EventStream":
        """Build from an iterable of (t, x, y, p) tuples."""
        recs = list(records)
        if recs:
            t, x, y, p = (np.array(col) for col in zip(*recs))
        else:
            t = x = y = p = np.array([], dtype=np.int64)
        return cls(t=t, x=x, y=y, p=p, sensor_w=sensor_w, sensor_h=sensor_h)

    def records(self):
        return list(zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()))

    def __len__(self):
        return len(self.t)

    def slice(self, start: int, stop: int) -> "EventStream":
        return EventStream(t=self.t[start:stop], x=self.x[start:stop],
                           y=self.y[start:stop], p=self.p[start:stop],
                           sensor_w=self.sensor_w, sensor_h=self.sensor_h)


@dataclass
class VoxelGrid:
    data: Tensor  # (T, H, W) signed accumulation
    t0: int
    t1: int

    @property
    def bins(self) -> int:
        return self.data.shape[0]


def voxelize(stream: EventStream, t0: int, t1: int, bins: int) -> VoxelGrid:
    """Accumulate polarities into bins over [t0, t1); t == t1 is excluded."""
    if t1 <= t0:
        raise DataError(f"empty voxel window: t0={t0}, t1={t1}")
    if bins < 1:
        raise DataError(f"need at least one bin, got {bins}")
    stream._check_bounds()
    grid = np.zeros((bins, stream.sensor_h, stream.sensor_w), dtype=np.float32)
    mask = (stream.t >= t0) & (stream.t < t1)
    if mask.any():
        t = stream.t[mask].astype(np.int64)
        b = (bins * (t - t0)) // (t1 - t0)
        np.add.at(grid, (b, stream.y[mask], stream.x[mask]), stream.p[mask])
    return VoxelGrid(data=Tensor(grid), t0=int(t0), t1=int(t1))


def segment_by_count(stream: EventStream, n: int) -> list[EventStream]:
    """Consecutive chunks of exactly n events; the remainder stays as a final
    short segment."""
    if n < 1:
        raise DataError(f"segment size must be >= 1, got {n}")
    total = len(stream)
    if total == 0:
        return [stream]
    return [stream.slice(i, min(i + n, total)) for i in range(0, total, n)]


FRAME_DT_US = 10_000  # synthetic inter-frame spacing
EVENT_THRESHOLD = 0.2  # intensity change that fires an event


def gen_synthetic(seed: int, h: int, w: int, frames: int = 10, speed: float = 1.0):
    """A bright rectangle translating right over a dark background.

    Returns (image, events, label): image is the final frame (1, H, W) in
    [0, 1]; events are per-pixel signs of above-threshold inter-frame change,
    timestamped by frame; label is 1 on the final rectangle footprint.
    """
    if h < 16 or w < 16:
        raise DimensionError(f"scene must be at least 16x16, got {h}x{w}")
    if frames < 2:
        raise DataError("need at least 2 frames")
    rng = Rng(seed)
    rect_h = int(rng.integers(h // 4, h // 2 + 1)[0])
    rect_w = int(rng.integers(w // 4, w // 3 + 1)[0])
    y0 = int(rng.integers(1, h - rect_h)[0])
    travel = int(round(abs(speed) * (frames - 1)))
    x_max = max(1, w - rect_w - travel - 1)
    x0 = int(rng.integers(1, x_max + 1)[0])
    bg, fg = 0.1, 0.9

    def frame(i: int) -> np.ndarray:
        img = np.full((h, w), bg, dtype=np.float64)
        xi = min(x0 + int(round(speed * i)), w - rect_w)
        img[y0:y0 + rect_h, xi:xi + rect_w] = fg
        return img

    records = []
    prev = frame(0)
    for i in range(1, frames):
        cur = frame(i)
        diff = cur - prev
        ys, xs = np.nonzero(np.abs(diff) > EVENT_THRESHOLD)
        t_us = i * FRAME_DT_US
        for yy, xx in zip(ys.tolist(), xs.tolist()):
            records.append((t_us, xx, yy, 1 if diff[yy, xx] > 0 else -1))
        prev = cur
    events = EventStream.from_records(records, sensor_w=w, sensor_h=h)
    image = Tensor(prev[None, :, :])
    label = (prev > 0.5).astype(np.int64)
    return image, events, label


def synthetic_window(frames: int = 10) -> tuple[int, int]:
    """Voxelization window covering all synthetic frames."""
    return 0, frames * FRAME_DT_US
