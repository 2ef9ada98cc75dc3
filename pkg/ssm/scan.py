"""
2-D feature maps <-> 1-D token sequences along fixed traversal orders.

Grid positions are row-major indices ``h * W + w``. A permutation's
``order[t]`` is the grid index visited at sequence position ``t``.
"""
import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from numerics import ops
from numerics.exceptions import ConfigError, ContractError, DimensionError


class ScanDirection(str, enum.Enum):
    TL_BR = "tl_br"
    TR_BL = "tr_bl"
    BR_TL = "br_tl"
    BL_TR = "bl_tr"
    SPIRAL_IN = "spiral_in"

    def __str__(self):
        return self.value


STANDARD_DIRECTIONS = (
    ScanDirection.TL_BR,
    ScanDirection.TR_BL,
    ScanDirection.BR_TL,
    ScanDirection.BL_TR,
)


@dataclass(frozen=True)
class ScanPermutation:
    order: np.ndarray
    inverse: np.ndarray

    def __len__(self):
        return len(self.order)


def parse_directions(value):
    """Accepts ``"tl_br,br_tl"`` or an iterable of names/members."""
    if isinstance(value, str):
        value = [part.strip() for part in value.split(",") if part.strip()]
    dirs = []
    for item in value:
        try:
            dirs.append(ScanDirection(str(item).strip().lower()))
        except ValueError:
            names = ", ".join(d.value for d in ScanDirection)
            raise ConfigError(f"unknown scan direction {item!r}; expected one of {names}") from None
    if not dirs:
        raise ConfigError("at least one scan direction is required")
    return tuple(dirs)


def _spiral(h, w):
    """Clockwise boundary walk from (0, 0), one ring at a time."""
    top, bottom, left, right = 0, h - 1, 0, w - 1
    out = []
    while top <= bottom and left <= right:
        out.extend(top * w + c for c in range(left, right + 1))
        out.extend(r * w + right for r in range(top + 1, bottom + 1))
        if top < bottom:
            out.extend(bottom * w + c for c in range(right - 1, left - 1, -1))
        if left < right:
            out.extend(r * w + left for r in range(bottom - 1, top, -1))
        top, bottom, left, right = top + 1, bottom - 1, left + 1, right - 1
    return out


@lru_cache(maxsize=256)
def _cached(direction, h, w):
    grid = np.arange(h * w).reshape(h, w)
    if direction is ScanDirection.TL_BR:
        order = grid.reshape(-1)
    elif direction is ScanDirection.BR_TL:
        order = grid.reshape(-1)[::-1]
    elif direction is ScanDirection.TR_BL:
        order = grid[:, ::-1].T.reshape(-1)
    elif direction is ScanDirection.BL_TR:
        order = grid[:, ::-1].T.reshape(-1)[::-1]
    else:
        order = np.array(_spiral(h, w))
    order = np.ascontiguousarray(order, dtype=np.intp)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    order.flags.writeable = False
    inverse.flags.writeable = False
    return ScanPermutation(order=order, inverse=inverse)


def permutation_for(direction, h, w):
    if h < 1 or w < 1:
        raise DimensionError(f"scan needs a non-empty map, got {h}x{w}")
    return _cached(ScanDirection(direction), int(h), int(w))


def unfold(x, direction):
    """[B, C, H, W] -> [B, H*W, C] in the direction's visiting order."""
    if x.ndim != 4:
        raise DimensionError(f"unfold expects [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape
    perm = permutation_for(direction, h, w)
    flat = ops.reshape(x, (b, c, h * w))
    seq = ops.take(flat, perm.order, axis=2, inverse=perm.inverse)
    return ops.transpose(seq, (0, 2, 1))


def fold(seq, direction, h, w):
    """Exact inverse of ``unfold`` for the same direction."""
    if seq.ndim != 3 or seq.shape[1] != h * w:
        raise DimensionError(f"fold of {seq.shape} into a {h}x{w} map needs L == {h * w}")
    b, _, c = seq.shape
    perm = permutation_for(direction, h, w)
    flat = ops.transpose(seq, (0, 2, 1))
    grid = ops.take(flat, perm.inverse, axis=2, inverse=perm.order)
    return ops.reshape(grid, (b, c, h, w))


def rmerge(branches):
    """Re-weight: elementwise sum of the folded directional outputs."""
    branches = list(branches)
    if not branches:
        raise ContractError("rmerge needs at least one branch")
    shape = branches[0].shape
    for other in branches[1:]:
        if other.shape != shape:
            raise ContractError(f"rmerge branch shapes differ: {shape} vs {other.shape}")
    out = branches[0]
    for other in branches[1:]:
        out = ops.add(out, other)
    return out
