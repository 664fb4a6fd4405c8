"""3D grid primitives, overlap metrics and volume measurement.

All grids are dense arrays in row-major (C) order, x fastest when linearized.
Types are immutable after construction and all operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_SMOOTH = 1e-6


@dataclass(frozen=True)
class Image3D:
    """Dense 3D scalar intensity grid with a physical voxel volume (mm^3)."""

    data: np.ndarray
    voxel_volume: float = 1.0

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"image data must be a 3D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image intensities must be finite")
        if not (self.voxel_volume > 0):
            raise ValueError(f"voxel_volume must be > 0, got {self.voxel_volume}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "voxel_volume", float(self.voxel_volume))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class Mask3D:
    """Binary 3D grid; values are exactly 0 or 1 (stored as bool)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"mask data must be a 3D grid, got shape {arr.shape}")
        if arr.dtype != np.bool_:
            vals = np.unique(arr)
            if not np.all(np.isin(vals, (0, 1))):
                raise ValueError("mask values must be exactly 0 or 1")
            arr = arr.astype(bool)
        object.__setattr__(self, "data", np.ascontiguousarray(arr))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class OverlapParams:
    """Tversky penalties: alpha weighs false positives, beta false negatives."""

    alpha: float
    beta: float
    smooth: float = DEFAULT_SMOOTH

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if self.smooth < 0:
            raise ValueError(f"smooth must be >= 0, got {self.smooth}")


def _check_same_dims(a: Mask3D, b: Mask3D) -> None:
    if a.dims != b.dims:
        raise ValueError(f"mask dimension mismatch: {a.dims} vs {b.dims}")


def volume(mask: Mask3D, voxel_volume: float = 1.0) -> float:
    """Volume of a binary mask in mm^3: voxel count times voxel volume."""
    if not (voxel_volume > 0):
        raise ValueError(f"voxel_volume must be > 0, got {voxel_volume}")
    return mask.count() * float(voxel_volume)


def overlap_counts(pred: Mask3D, truth: Mask3D) -> tuple[int, int, int]:
    """(TP, FP, FN) voxel counts between a predicted and a reference mask."""
    _check_same_dims(pred, truth)
    p, t = pred.data, truth.data
    tp = int(np.count_nonzero(p & t))
    fp = pred.count() - tp
    fn = truth.count() - tp
    return tp, fp, fn


def dice(a: Mask3D, b: Mask3D) -> float:
    """Dice overlap 2|a&b| / (|a|+|b|); 1.0 when both masks are empty."""
    _check_same_dims(a, b)
    na, nb = a.count(), b.count()
    if na == 0 and nb == 0:
        return 1.0
    inter = int(np.count_nonzero(a.data & b.data))
    return (2.0 * inter) / (na + nb)


def tversky_index(pred: Mask3D, truth: Mask3D, params: OverlapParams) -> float:
    """Tversky index (TP + s) / (TP + alpha*FP + beta*FN + s)."""
    tp, fp, fn = overlap_counts(pred, truth)
    num = tp + params.smooth
    den = tp + params.alpha * fp + params.beta * fn + params.smooth
    if den == 0.0:
        # all three counts zero and smooth == 0: treat as perfect agreement
        return 1.0
    return num / den
