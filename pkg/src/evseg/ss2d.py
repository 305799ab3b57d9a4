"""2D selective scan: unfold a (C, H, W) map into four directional pixel
sequences, run an independent S6 block along each, and merge the refolded
outputs by elementwise sum.

Traversals are pixel-granularity. The merge adds the two row-order results
and the two column-order results first, then adds the pair sums, so the
combination order is fixed and the skip-only limit gives exactly 4*x.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from enum import Enum
from functools import lru_cache

import numpy as np

from .errors import DimensionError, NumericError
from .rng import Rng
from .scan import S6Params, init_s6, scan_sequential
from .tensor import DTYPE, Tensor, add, reshape, take_rows, transpose2d


class ScanDirection(Enum):
    ROW_FORWARD = "row-major forward"
    ROW_BACKWARD = "row-major backward"
    COL_FORWARD = "column-major forward"
    COL_BACKWARD = "column-major backward"


DIRECTIONS = (
    ScanDirection.ROW_FORWARD,
    ScanDirection.ROW_BACKWARD,
    ScanDirection.COL_FORWARD,
    ScanDirection.COL_BACKWARD,
)


@lru_cache(maxsize=128)
def _orders(h: int, w: int):
    """Traversal order per direction: position index (y*w + x) visited at
    each step, plus the inverse permutation for refolding."""
    row_f = np.arange(h * w)
    col_f = np.ascontiguousarray(row_f.reshape(h, w).T).reshape(-1)
    orders = {
        ScanDirection.ROW_FORWARD: row_f,
        ScanDirection.ROW_BACKWARD: row_f[::-1].copy(),
        ScanDirection.COL_FORWARD: col_f,
        ScanDirection.COL_BACKWARD: col_f[::-1].copy(),
    }
    return {d: (o, np.argsort(o)) for d, o in orders.items()}


def _check_map(x: Tensor):
    if x.data.ndim != 3 or x.shape[1] < 1 or x.shape[2] < 1:
        raise DimensionError(f"expected a (C, H, W) map with H, W >= 1, got {x.shape}")


def unfold(x: Tensor, direction: ScanDirection) -> Tensor:
    """(C, H, W) -> (L, C) sequence in the direction's traversal order."""
    _check_map(x)
    c, h, w = x.shape
    order, _ = _orders(h, w)[direction]
    rows = transpose2d(reshape(x, (c, h * w)))  # (HW, C)
    return take_rows(rows, order)


def refold(seq: Tensor, direction: ScanDirection, h: int, w: int) -> Tensor:
    """Inverse of unfold: (L, C) -> (C, H, W)."""
    if seq.data.ndim != 2 or seq.shape[0] != h * w:
        raise DimensionError(f"refold needs ({h * w}, C), got {seq.shape}")
    _, inv = _orders(h, w)[direction]
    rows = take_rows(seq, inv)
    return reshape(transpose2d(rows), (seq.shape[1], h, w))


@dataclass
class Ss2dParams:
    """One independent S6 block per scan direction (4x parameter cost)."""

    row_f: S6Params
    row_b: S6Params
    col_f: S6Params
    col_b: S6Params

    def by_direction(self):
        return dict(zip(DIRECTIONS, (self.row_f, self.row_b, self.col_f, self.col_b)))

    def tensors(self):
        out = []
        for f in fields(self):
            out.extend(getattr(self, f.name).tensors())
        return out


def init_ss2d(channels: int, state_dim: int, rng: Rng, dtype=DTYPE) -> Ss2dParams:
    return Ss2dParams(*(init_s6(channels, state_dim, rng, dtype) for _ in range(4)))


def ss2d(x: Tensor, params: Ss2dParams) -> Tensor:
    """Sum over the four directions of refold(scan(unfold(x, d)), d)."""
    _check_map(x)
    _, h, w = x.shape
    outs = []
    for direction, p in params.by_direction().items():
        try:
            y = scan_sequential(p, unfold(x, direction))
        except NumericError as err:
            raise NumericError(f"{direction.value} scan failed: {err}") from err
        outs.append(refold(y, direction, h, w))
    return add(add(outs[0], outs[1]), add(outs[2], outs[3]))
