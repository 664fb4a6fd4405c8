"""Tri-mask volume estimator: restrictive / balanced / permissive masks.

Three global intensity thresholds are tuned on training data to minimize
three Tversky objectives with penalty pairs (1-g, g), (0.5, 0.5), (g, 1-g).
Binarizing one image at the three (ordered) thresholds yields nested masks
and hence an ordered volume triple (lo, mid, hi).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grids import DEFAULT_SMOOTH, Image3D, Mask3D, volume
from .synth import Sample

THRESHOLD_GRID_SIZE = 512
GRID_QUANTILES = (0.001, 0.999)


@dataclass(frozen=True)
class TriThresholds:
    """Ordered decision thresholds for the three estimator heads."""

    t_lower: float
    t_mean: float
    t_upper: float
    gamma: float = 0.2

    def __post_init__(self):
        if not (0.0 < self.gamma <= 0.5):
            raise ValueError(f"gamma must be in (0, 0.5], got {self.gamma}")
        if not (self.t_upper <= self.t_mean <= self.t_lower):
            raise ValueError(
                "thresholds must satisfy t_upper <= t_mean <= t_lower, got "
                f"{self.t_upper}, {self.t_mean}, {self.t_lower}"
            )

    def to_json(self) -> str:
        return json.dumps(
            {
                "t_lower": self.t_lower,
                "t_mean": self.t_mean,
                "t_upper": self.t_upper,
                "gamma": self.gamma,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "TriThresholds":
        obj = json.loads(text)
        return cls(
            t_lower=float(obj["t_lower"]),
            t_mean=float(obj["t_mean"]),
            t_upper=float(obj["t_upper"]),
            gamma=float(obj["gamma"]),
        )


@dataclass(frozen=True)
class TriMask:
    lower: Mask3D
    mean: Mask3D
    upper: Mask3D

    def __post_init__(self):
        if not (self.lower.dims == self.mean.dims == self.upper.dims):
            raise ValueError("tri-mask heads must share dimensions")
        if np.any(self.lower.data & ~self.mean.data) or np.any(
            self.mean.data & ~self.upper.data
        ):
            raise ValueError("tri-mask must be nested: lower <= mean <= upper")


@dataclass(frozen=True)
class VolumeTriple:
    """Lower / central / upper volume estimates in mm^3."""

    lo: float
    mid: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.mid <= self.hi):
            raise ValueError(
                f"volume triple must be ordered, got {self.lo}, {self.mid}, {self.hi}"
            )


def _head_params(gamma: float) -> tuple[tuple[float, float], ...]:
    # (alpha, beta) = (FP penalty, FN penalty) per head: lower, mean, upper
    return ((1.0 - gamma, gamma), (0.5, 0.5), (gamma, 1.0 - gamma))


def fit_thresholds(
    train: Sequence[Sample],
    gamma: float = 0.2,
    grid_size: int = THRESHOLD_GRID_SIZE,
    smooth: float = DEFAULT_SMOOTH,
) -> TriThresholds:
    """Tune the three thresholds on training samples.

    Each head's threshold minimizes the mean Tversky loss (1 - index) over the
    training set, searched on an even grid spanning the pooled intensity range
    between the 0.1% and 99.9% quantiles. Ties go to the larger threshold for
    the lower and mean heads and to the smaller one for the upper head.
    """
    if len(train) == 0:
        raise ValueError("training set must be nonempty")
    if not (0.0 < gamma <= 0.5):
        raise ValueError(f"gamma must be in (0, 0.5], got {gamma}")

    pooled = np.concatenate([s.image.data.ravel() for s in train])
    qlo, qhi = np.quantile(pooled, GRID_QUANTILES)
    del pooled
    grid = np.linspace(qlo, qhi, grid_size)

    # per-threshold mean losses, accumulated image by image via sorted
    # intensity lookups: TP(t) = #{fg > t}, FP(t) = #{bg > t}
    heads = _head_params(gamma)
    losses = np.zeros((3, grid_size))
    for s in train:
        fg = np.sort(s.image.data[s.truth.data])
        bg = np.sort(s.image.data[~s.truth.data])
        tp = fg.size - np.searchsorted(fg, grid, side="right")
        fp = bg.size - np.searchsorted(bg, grid, side="right")
        fn = fg.size - tp
        for h, (alpha, beta) in enumerate(heads):
            idx = (tp + smooth) / (tp + alpha * fp + beta * fn + smooth)
            losses[h] += 1.0 - idx
    losses /= len(train)

    def argmin_tie(vals: np.ndarray, prefer_larger: bool) -> int:
        best = vals.min()
        ties = np.flatnonzero(vals == best)
        return int(ties[-1] if prefer_larger else ties[0])

    t_lower = float(grid[argmin_tie(losses[0], prefer_larger=True)])
    t_mean = float(grid[argmin_tie(losses[1], prefer_larger=True)])
    t_upper = float(grid[argmin_tie(losses[2], prefer_larger=False)])
    t_upper, t_mean, t_lower = sorted((t_lower, t_mean, t_upper))
    return TriThresholds(t_lower=t_lower, t_mean=t_mean, t_upper=t_upper, gamma=gamma)


def predict(image: Image3D, th: TriThresholds) -> TriMask:
    """Binarize one image at the three thresholds (strict inequality)."""
    data = image.data
    return TriMask(
        lower=Mask3D(data > th.t_lower),
        mean=Mask3D(data > th.t_mean),
        upper=Mask3D(data > th.t_upper),
    )


def volumes(tm: TriMask, voxel_volume: float = 1.0) -> VolumeTriple:
    return VolumeTriple(
        lo=volume(tm.lower, voxel_volume),
        mid=volume(tm.mean, voxel_volume),
        hi=volume(tm.upper, voxel_volume),
    )
