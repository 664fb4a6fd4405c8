"""Synthetic sphere dataset with a controllable SNR covariate.

Each sample is one hard-edged sphere in a cubic grid: background voxels are
N(bg, sigma^2), foreground voxels N(bg + snr*sigma, sigma^2), so the SNR
(mu_fg - mu_bg) / sigma_noise is the single controlled covariate.

Reproducibility: every sample is generated from its own PCG64 stream keyed by
(dataset_seed, sample_id, tag) with tag 0 for the SNR draw and tag 1 for the
sphere geometry and noise, so generation is order-independent and portable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grids import Image3D, Mask3D

SeedLike = int | Sequence[int]

_SNR_TAG = 0
_SAMPLE_TAG = 1


@dataclass(frozen=True)
class SphereSpec:
    """Geometry and intensity parameters of one synthetic sphere."""

    center: tuple[float, float, float]
    radius: float
    fg_intensity: float
    bg_intensity: float
    noise_sigma: float

    def __post_init__(self):
        if not (self.radius > 0):
            raise ValueError(f"radius must be > 0, got {self.radius}")
        if not (self.noise_sigma > 0):
            raise ValueError(f"noise_sigma must be > 0, got {self.noise_sigma}")
        if not self.snr > 0:
            raise ValueError("foreground must exceed background (snr > 0)")

    @property
    def snr(self) -> float:
        return (self.fg_intensity - self.bg_intensity) / self.noise_sigma


@dataclass(frozen=True)
class Sample:
    image: Image3D
    truth: Mask3D
    spec: SphereSpec
    id: int


@dataclass(frozen=True)
class GenerationConfig:
    grid_dim: int = 32
    n_train: int = 1000
    n_calib: int = 1000
    n_id_test: int = 1000
    n_shift_test: int = 1000
    snr_id_range: tuple[float, float] = (2.0, 5.0)
    snr_shift_range: tuple[float, float] = (2.0, 2.9)
    radius_range: tuple[float, float] = (4.0, 10.0)
    bg_intensity: float = 0.0
    noise_sigma: float = 1.0
    voxel_volume: float = 1.0

    def __post_init__(self):
        if self.grid_dim < 8:
            raise ValueError(f"grid_dim must be >= 8, got {self.grid_dim}")
        for name in ("n_train", "n_calib", "n_id_test", "n_shift_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("snr_id_range", "snr_shift_range", "radius_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        _check_radius_feasible(self.grid_dim, self.radius_range)

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_calib + self.n_id_test + self.n_shift_test


SPLIT_NAMES = ("train", "calib", "id_test", "shift_test")


@dataclass(frozen=True)
class DatasetSplits:
    train: list[Sample]
    calib: list[Sample]
    id_test: list[Sample]
    shift_test: list[Sample]


def _check_radius_feasible(grid_dim: int, radius_range: tuple[float, float]) -> None:
    lo, hi = radius_range
    if not (0 < lo <= hi):
        raise ValueError(f"invalid radius range ({lo}, {hi})")
    if hi > (grid_dim - 1) / 2:
        raise ValueError(
            f"radius range ({lo}, {hi}) infeasible for grid_dim={grid_dim}"
        )


def digitize_sphere(
    grid_dim: int, center: tuple[float, float, float], radius: float
) -> Mask3D:
    """Center-sampled digitization: a voxel belongs to the sphere iff its
    integer center lies within the radius of the sphere center."""
    cx, cy, cz = center
    ix, iy, iz = np.ogrid[:grid_dim, :grid_dim, :grid_dim]
    d2 = (ix - cx) ** 2 + (iy - cy) ** 2 + (iz - cz) ** 2
    return Mask3D(d2 <= radius**2)


def generate_sample(
    seed: SeedLike,
    grid_dim: int = 32,
    snr: float = 3.0,
    radius_range: tuple[float, float] = (4.0, 10.0),
    bg_intensity: float = 0.0,
    noise_sigma: float = 1.0,
    voxel_volume: float = 1.0,
    sample_id: int = 0,
) -> Sample:
    """Generate one sphere sample, deterministic given the seed."""
    if grid_dim < 8:
        raise ValueError(f"grid_dim must be >= 8, got {grid_dim}")
    if not snr > 0:
        raise ValueError(f"snr must be > 0, got {snr}")
    _check_radius_feasible(grid_dim, radius_range)

    rng = np.random.default_rng(seed)
    radius = float(rng.uniform(*radius_range))
    # containment: sphere must stay within the voxel-center box
    low, high = radius, grid_dim - 1 - radius
    center = tuple(float(c) for c in rng.uniform(low, high, size=3))
    spec = SphereSpec(
        center=center,
        radius=radius,
        fg_intensity=bg_intensity + snr * noise_sigma,
        bg_intensity=bg_intensity,
        noise_sigma=noise_sigma,
    )
    truth = digitize_sphere(grid_dim, center, radius)
    data = rng.normal(bg_intensity, noise_sigma, size=(grid_dim,) * 3)
    data[truth.data] += snr * noise_sigma
    return Sample(
        image=Image3D(data.astype(np.float32), voxel_volume=voxel_volume),
        truth=truth,
        spec=spec,
        id=sample_id,
    )


def snr_of(image: Image3D, truth: Mask3D) -> float:
    """Measured SNR: (mean inside - mean outside) / stddev outside."""
    if image.dims != truth.dims:
        raise ValueError(f"dimension mismatch: {image.dims} vs {truth.dims}")
    n_in = truth.count()
    if n_in == 0 or n_in == truth.data.size:
        raise ValueError("truth mask must be nonempty and non-full")
    inside = image.data[truth.data]
    outside = image.data[~truth.data]
    return float((inside.mean() - outside.mean()) / outside.std())


def split_of_id(config: GenerationConfig, sample_id: int) -> str:
    """Split name owning the given sample id (ids are assigned contiguously)."""
    bounds = np.cumsum(
        [config.n_train, config.n_calib, config.n_id_test, config.n_shift_test]
    )
    if not (0 <= sample_id < bounds[-1]):
        raise ValueError(f"sample id {sample_id} out of range")
    return SPLIT_NAMES[int(np.searchsorted(bounds, sample_id, side="right"))]


def split_ids(config: GenerationConfig, split: str) -> range:
    sizes = (config.n_train, config.n_calib, config.n_id_test, config.n_shift_test)
    start = 0
    for name, size in zip(SPLIT_NAMES, sizes):
        if name == split:
            return range(start, start + size)
        start += size
    raise ValueError(f"unknown split {split!r}")


def sample_snr(seed: int, config: GenerationConfig, sample_id: int) -> float:
    lo, hi = (
        config.snr_shift_range
        if split_of_id(config, sample_id) == "shift_test"
        else config.snr_id_range
    )
    rng = np.random.default_rng([seed, sample_id, _SNR_TAG])
    return float(rng.uniform(lo, hi))


def generate_sample_by_id(seed: int, config: GenerationConfig, sample_id: int) -> Sample:
    """Generate the sample a dataset (seed, config) assigns to this id."""
    return generate_sample(
        seed=[seed, sample_id, _SAMPLE_TAG],
        grid_dim=config.grid_dim,
        snr=sample_snr(seed, config, sample_id),
        radius_range=config.radius_range,
        bg_intensity=config.bg_intensity,
        noise_sigma=config.noise_sigma,
        voxel_volume=config.voxel_volume,
        sample_id=sample_id,
    )


def iter_split(seed: int, config: GenerationConfig, split: str):
    """Yield the samples of one split without materializing the others."""
    for sid in split_ids(config, split):
        yield generate_sample_by_id(seed, config, sid)


def generate_splits(seed: int, config: GenerationConfig) -> DatasetSplits:
    """Generate the full train/calib/id_test/shift_test dataset."""
    return DatasetSplits(
        train=list(iter_split(seed, config, "train")),
        calib=list(iter_split(seed, config, "calib")),
        id_test=list(iter_split(seed, config, "id_test")),
        shift_test=list(iter_split(seed, config, "shift_test")),
    )
