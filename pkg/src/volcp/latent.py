"""Compressed latent representations from a fixed random 3D filter bank.

Each image is reduced to a K-vector by cross-correlating it with K zero-mean
unit-norm random kernels (valid positions only, no padding) and averaging the
responses over space. Raw averaging preserves linearity; the "abs" mode
averages absolute responses instead, which keeps local-contrast information
and is what the experiment harness uses to detect covariate shift.
Externally computed latents can be ingested from CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .grids import Image3D
from .synth import SeedLike

DEFAULT_K = 64
DEFAULT_KERNEL_SIZE = 3
MODES = ("raw", "abs")


@dataclass(frozen=True)
class FilterBank:
    """K zero-mean, unit-norm kernels of shape (k, k, k)."""

    weights: np.ndarray
    seed: int | tuple[int, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 4 or w.shape[1] != w.shape[2] or w.shape[1] != w.shape[3]:
            raise ValueError(f"weights must have shape (K, k, k, k), got {w.shape}")
        object.__setattr__(self, "weights", w)

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class LatentVector:
    values: np.ndarray
    sample_id: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("latent values must be a finite 1D vector")
        object.__setattr__(self, "values", v)

    @property
    def K(self) -> int:
        return self.values.size


def make_filter_bank(
    seed: SeedLike, K: int = DEFAULT_K, kernel_size: int = DEFAULT_KERNEL_SIZE
) -> FilterBank:
    """Seeded random bank: standard-normal draws, centered then unit-normalized."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if kernel_size % 2 == 0 or kernel_size < 3:
        # kernel_size == 1 cannot be both zero-mean and unit-norm
        raise ValueError(f"kernel_size must be odd and >= 3, got {kernel_size}")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((K, kernel_size, kernel_size, kernel_size))
    w -= w.mean(axis=(1, 2, 3), keepdims=True)
    w /= np.linalg.norm(w.reshape(K, -1), axis=1)[:, None, None, None]
    return FilterBank(weights=w, seed=seed if isinstance(seed, int) else tuple(seed))


def extract(
    image: Image3D, bank: FilterBank, sample_id: int = -1, mode: str = "raw"
) -> LatentVector:
    """Spatial mean of valid cross-correlation responses, one value per kernel."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    ks = bank.kernel_size
    if min(image.dims) < ks:
        raise ValueError(f"image dims {image.dims} smaller than kernel size {ks}")
    windows = sliding_window_view(image.data.astype(np.float64), (ks, ks, ks))
    flat = windows.reshape(-1, ks**3)
    resp = flat @ bank.weights.reshape(bank.K, -1).T
    if mode == "abs":
        np.abs(resp, out=resp)
    return LatentVector(values=resp.mean(axis=0), sample_id=sample_id)


def save_latents(path: str | Path, latents: Iterable[LatentVector]) -> None:
    """Write latents as CSV with header id,z0,...,z{K-1}."""
    latents = list(latents)
    if not latents:
        raise ValueError("no latent vectors to write")
    K = latents[0].K
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id"] + [f"z{i}" for i in range(K)])
        for lv in latents:
            if lv.K != K:
                raise ValueError("inconsistent latent dimensions")
            writer.writerow([lv.sample_id] + [repr(float(v)) for v in lv.values])


def load_latents(path: str | Path) -> list[LatentVector]:
    """Load latents from the CSV schema written by save_latents."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ValueError(f"empty latent file: {path}")
    header = rows[0]
    if len(header) < 2 or header[0] != "id":
        raise ValueError(f"malformed latent header in {path}: {header[:3]}...")
    K = len(header) - 1
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != K + 1:
            raise ValueError(f"row {i} of {path} has {len(row)} fields, expected {K + 1}")
        out.append(
            LatentVector(values=np.array([float(v) for v in row[1:]]), sample_id=int(row[0]))
        )
    if not out:
        raise ValueError(f"latent file {path} contains a header but no rows")
    return out
