"""Experiment orchestration: dataset prep, trial loops, aggregation, export.

A trial reshuffles the pooled ID calibration + ID test samples into fresh
halves (the shifted test set is fixed across trials), then evaluates each
conformal variant: `standard` uses one global quantile; `w_oracle` reweights
by a classifier on the measured SNR covariate; `w_latent` by a classifier on
filter-bank latents. Everything is a pure function of the config.

Seed streams (all PCG64 via numpy SeedSequence lists):
  [seed, id, 0/1]          per-sample SNR draw / geometry+noise (synth)
  [seed, 2, trial]         trial reshuffle permutation
  [seed, 3, trial, s, v]   cross-fit fold assignment (s=setting, v=variant)
  [seed, 4]                filter bank
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import conformal, density_ratio, synth, trimask
from .grids import Image3D, Mask3D, dice, volume
from .latent import FilterBank, extract, make_filter_bank
from .synth import GenerationConfig, Sample
from .trimask import TriThresholds

SETTINGS = ("id", "shift")
VARIANTS = ("standard", "w_oracle", "w_latent")
WEIGHTED_VARIANTS = ("w_oracle", "w_latent")

_TRIAL_TAG = 2
_CROSSFIT_TAG = 3
_FILTER_BANK_TAG = 4


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 1)."""


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    alpha: float = 0.05
    trials: int = 250
    n_train: int = 1000
    n_calib: int = 1000
    n_id_test: int = 1000
    n_shift_test: int = 1000
    grid_dim: int = 32
    snr_id_range: tuple[float, float] = (2.0, 5.0)
    snr_shift_range: tuple[float, float] = (2.0, 2.9)
    radius_range: tuple[float, float] = (4.0, 10.0)
    voxel_volume: float = 1.0
    gamma: float = 0.2
    K: int = 64
    kernel_size: int = 3
    latent_mode: str = "abs"
    cp_variants: tuple[str, ...] = VARIANTS
    folds: int = 20
    l2_lambda: float = density_ratio.DEFAULT_L2
    tol: float = density_ratio.DEFAULT_TOL
    max_iter: int = density_ratio.DEFAULT_MAX_ITER
    out_dir: str = "results"

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        bad = [v for v in self.cp_variants if v not in VARIANTS]
        if bad or not self.cp_variants:
            raise ConfigError(f"cp_variants must be a nonempty subset of {VARIANTS}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.latent_mode not in ("raw", "abs"):
            raise ConfigError(f"latent_mode must be 'raw' or 'abs', got {self.latent_mode}")
        try:
            self.generation_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def generation_config(self) -> GenerationConfig:
        return GenerationConfig(
            grid_dim=self.grid_dim,
            n_train=self.n_train,
            n_calib=self.n_calib,
            n_id_test=self.n_id_test,
            n_shift_test=self.n_shift_test,
            snr_id_range=tuple(self.snr_id_range),
            snr_shift_range=tuple(self.snr_shift_range),
            radius_range=tuple(self.radius_range),
            voxel_volume=self.voxel_volume,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("snr_id_range", "snr_shift_range", "radius_range", "cp_variants"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(obj)
        for key in ("snr_id_range", "snr_shift_range", "radius_range", "cp_variants"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as f:
                obj = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError("config file must contain a JSON object")
        return cls.from_dict(obj)


@dataclass(frozen=True)
class TrialResult:
    variant: str
    setting: str
    coverage: float
    mean_width: float  # may be +inf
    classifier_accuracy: float | None
    dice_mean: float
    trial_seed: int


@dataclass(frozen=True)
class VariantStats:
    coverage_mean: float
    coverage_std: float
    width_mean: float  # mean over finite-width trials; +inf if none finite
    width_std: float
    width_infinite_trials: int
    accuracy_mean: float | None
    accuracy_std: float | None
    dice_mean: float
    dice_std: float
    trials: int


@dataclass(frozen=True)
class WeightRecord:
    variant: str
    setting: str
    sample_id: int
    covariate_value: float
    weight: float


@dataclass(frozen=True)
class AggregateResult:
    config: ExperimentConfig
    stats: dict[tuple[str, str], VariantStats]
    trial_results: tuple[TrialResult, ...]
    weight_profile: tuple[WeightRecord, ...]


@dataclass(frozen=True)
class SplitArrays:
    """Per-sample measurements a trial needs, images already discarded."""

    ids: np.ndarray
    y: np.ndarray
    lo: np.ndarray
    mid: np.ndarray
    hi: np.ndarray
    score: np.ndarray
    dice: np.ndarray
    snr: np.ndarray
    latents: np.ndarray

    def take(self, idx: np.ndarray) -> "SplitArrays":
        return SplitArrays(*(getattr(self, f.name)[idx] for f in
                             self.__dataclass_fields__.values()))


@dataclass(frozen=True)
class PreparedData:
    """Everything derived once per experiment: thresholds and filter bank come
    from the train split only; pool = ID calibration + ID test."""

    thresholds: TriThresholds
    filter_bank: FilterBank
    pool: SplitArrays
    shift: SplitArrays
    n_calib: int


def measure_samples(
    samples: Iterable[Sample],
    thresholds: TriThresholds,
    bank: FilterBank,
    voxel_volume: float,
    latent_mode: str,
) -> SplitArrays:
    """Reduce samples to the scalar records used by the trial loop."""
    ids, ys, los, mids, his, dices, snrs, zs = [], [], [], [], [], [], [], []
    for s in samples:
        tm = trimask.predict(s.image, thresholds)
        vt = trimask.volumes(tm, voxel_volume)
        ids.append(s.id)
        ys.append(volume(s.truth, voxel_volume))
        los.append(vt.lo)
        mids.append(vt.mid)
        his.append(vt.hi)
        dices.append(dice(tm.mean, s.truth))
        snrs.append(synth.snr_of(s.image, s.truth))
        zs.append(extract(s.image, bank, sample_id=s.id, mode=latent_mode).values)
    y = np.array(ys)
    lo = np.array(los)
    hi = np.array(his)
    return SplitArrays(
        ids=np.array(ids),
        y=y,
        lo=lo,
        mid=np.array(mids),
        hi=hi,
        score=np.maximum(lo - y, y - hi),
        dice=np.array(dices),
        snr=np.array(snrs),
        latents=np.vstack(zs),
    )


def prepare_data(config: ExperimentConfig) -> PreparedData:
    """Generate the dataset, fit thresholds on train only, measure the rest."""
    gen = config.generation_config()
    train = list(synth.iter_split(config.seed, gen, "train"))
    thresholds = trimask.fit_thresholds(train, gamma=config.gamma)
    del train
    bank = make_filter_bank(
        [config.seed, _FILTER_BANK_TAG], K=config.K, kernel_size=config.kernel_size
    )

    def measured(split: str) -> SplitArrays:
        return measure_samples(
            synth.iter_split(config.seed, gen, split),
            thresholds,
            bank,
            config.voxel_volume,
            config.latent_mode,
        )

    calib = measured("calib")
    id_test = measured("id_test")
    pool = SplitArrays(
        *(
            np.concatenate([getattr(calib, f), getattr(id_test, f)])
            for f in ("ids", "y", "lo", "mid", "hi", "score", "dice", "snr")
        ),
        latents=np.vstack([calib.latents, id_test.latents]),
    )
    return PreparedData(
        thresholds=thresholds,
        filter_bank=bank,
        pool=pool,
        shift=measured("shift_test"),
        n_calib=config.n_calib,
    )


def _trial_split(
    config: ExperimentConfig, trial_seed: int, data: PreparedData, setting: str
) -> tuple[SplitArrays, SplitArrays]:
    rng = np.random.default_rng([config.seed, _TRIAL_TAG, trial_seed])
    perm = rng.permutation(data.pool.y.size)
    calib = data.pool.take(perm[: data.n_calib])
    test = data.shift if setting == "shift" else data.pool.take(perm[data.n_calib:])
    return calib, test


def _variant_features(arrays: SplitArrays, variant: str) -> np.ndarray:
    if variant == "w_oracle":
        return arrays.snr[:, None]
    if variant == "w_latent":
        return arrays.latents
    raise ValueError(f"no classifier features for variant {variant!r}")


def _run_trial(
    config: ExperimentConfig,
    trial_seed: int,
    data: PreparedData,
    setting: str,
    variant: str,
) -> tuple[TrialResult, list[WeightRecord]]:
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    calib, test = _trial_split(config, trial_seed, data, setting)

    accuracy = None
    weight_rows: list[WeightRecord] = []
    if variant == "standard":
        q = conformal.standard_quantile(calib.score, config.alpha)
        q_arr = np.full(test.y.size, q.q_hat)
    else:
        seed = [
            config.seed,
            _CROSSFIT_TAG,
            trial_seed,
            SETTINGS.index(setting),
            VARIANTS.index(variant),
        ]
        probs_c, probs_t = density_ratio.cross_fit_probabilities(
            _variant_features(calib, variant),
            _variant_features(test, variant),
            folds=config.folds,
            seed=seed,
            l2_lambda=config.l2_lambda,
            tol=config.tol,
            max_iter=config.max_iter,
        )
        labels = np.concatenate(
            [np.zeros(probs_c.size, dtype=int), np.ones(probs_t.size, dtype=int)]
        )
        accuracy = density_ratio.classifier_accuracy(
            np.concatenate([probs_c, probs_t]), labels
        )
        w_c = density_ratio.weight_array(probs_c)
        w_t = density_ratio.weight_array(probs_t)
        q_arr = conformal.weighted_quantile_batch(
            calib.score, w_c, w_t, config.alpha
        )
        weight_rows = [
            WeightRecord(
                variant=variant,
                setting=setting,
                sample_id=int(sid),
                covariate_value=float(snr),
                weight=float(w),
            )
            for sid, snr, w in zip(calib.ids, calib.snr, w_c)
        ]

    lo_adj = np.maximum(0.0, test.lo - q_arr)
    hi_adj = test.hi + q_arr
    covered = (test.y >= lo_adj) & (test.y <= hi_adj)
    result = TrialResult(
        variant=variant,
        setting=setting,
        coverage=float(covered.mean()),
        mean_width=float(np.mean(hi_adj - lo_adj)),
        classifier_accuracy=accuracy,
        dice_mean=float(test.dice.mean()),
        trial_seed=trial_seed,
    )
    return result, weight_rows


def run_trial(
    config: ExperimentConfig,
    trial_seed: int,
    data: PreparedData,
    setting: str,
    variant: str,
) -> TrialResult:
    """One trial of one conformal variant in one setting."""
    return _run_trial(config, trial_seed, data, setting, variant)[0]


def _aggregate(results: Sequence[TrialResult]) -> VariantStats:
    cov = np.array([r.coverage for r in results])
    width = np.array([r.mean_width for r in results])
    dice_vals = np.array([r.dice_mean for r in results])
    finite = np.isfinite(width)
    accs = [r.classifier_accuracy for r in results]
    has_acc = accs[0] is not None
    acc = np.array(accs, dtype=float) if has_acc else None
    return VariantStats(
        coverage_mean=float(cov.mean()),
        coverage_std=float(cov.std()),
        width_mean=float(width[finite].mean()) if finite.any() else math.inf,
        width_std=float(width[finite].std()) if finite.any() else math.inf,
        width_infinite_trials=int((~finite).sum()),
        accuracy_mean=float(acc.mean()) if has_acc else None,
        accuracy_std=float(acc.std()) if has_acc else None,
        dice_mean=float(dice_vals.mean()),
        dice_std=float(dice_vals.std()),
        trials=len(results),
    )


def run_experiment(
    config: ExperimentConfig, data: PreparedData | None = None
) -> AggregateResult:
    """Full deterministic experiment: all trials, settings, variants.

    `data` may carry a precomputed `prepare_data(config)` result to avoid
    regenerating the dataset when the caller also needs the raw measurements.
    """
    if data is None:
        data = prepare_data(config)
    per_cell: dict[tuple[str, str], list[TrialResult]] = {
        (v, s): [] for v in config.cp_variants for s in SETTINGS
    }
    all_results: list[TrialResult] = []
    profile: list[WeightRecord] = []
    for t in range(config.trials):
        for setting in SETTINGS:
            for variant in config.cp_variants:
                result, weight_rows = _run_trial(config, t, data, setting, variant)
                per_cell[(variant, setting)].append(result)
                all_results.append(result)
                if t == 0:
                    profile.extend(weight_rows)
    stats = {cell: _aggregate(rs) for cell, rs in per_cell.items()}
    return AggregateResult(
        config=config,
        stats=stats,
        trial_results=tuple(all_results),
        weight_profile=tuple(profile),
    )


RESULTS_CSV_HEADER = [
    "variant",
    "setting",
    "coverage_mean",
    "coverage_std",
    "width_mean",
    "width_std",
    "accuracy_mean",
    "accuracy_std",
    "dice_mean",
    "dice_std",
]


def export_results(agg: AggregateResult, out_dir: str | Path) -> tuple[Path, Path]:
    """Write results.json (full precision) and results.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for variant in agg.config.cp_variants:
        for setting in SETTINGS:
            st = agg.stats[(variant, setting)]
            rows.append(
                {
                    "variant": variant,
                    "setting": setting,
                    "coverage_mean": st.coverage_mean,
                    "coverage_std": st.coverage_std,
                    "width_mean": st.width_mean,
                    "width_std": st.width_std,
                    "width_infinite_trials": st.width_infinite_trials,
                    "accuracy_mean": st.accuracy_mean,
                    "accuracy_std": st.accuracy_std,
                    "dice_mean": st.dice_mean,
                    "dice_std": st.dice_std,
                    "trials": st.trials,
                }
            )
    json_path = out / "results.json"
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(
            {"config": agg.config.to_dict(), "results": rows},
            f,
            indent=2,
            sort_keys=True,
            allow_nan=True,
        )
        f.write("\n")

    csv_path = out / "results.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(RESULTS_CSV_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row[k] if row[k] is not None else ""
                    for k in RESULTS_CSV_HEADER
                ]
            )
    return json_path, csv_path


def export_weight_profile(
    profile: Sequence[WeightRecord], path: str | Path
) -> Path:
    """Write the representative-trial calibration weights as CSV."""
    if not profile:
        raise ValueError("no weighted variant was executed; nothing to export")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "setting", "sample_id", "covariate_value", "weight"])
        for rec in profile:
            writer.writerow(
                [rec.variant, rec.setting, rec.sample_id, rec.covariate_value, rec.weight]
            )
    return path


# ---------------------------------------------------------------------------
# dataset directory format: metadata.json + one headerless binary per sample
# (little-endian float32 image then uint8 mask, row-major)


def write_dataset(config: ExperimentConfig, out_dir: str | Path) -> Path:
    gen = config.generation_config()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for split in synth.SPLIT_NAMES:
        for sample in synth.iter_split(config.seed, gen, split):
            fname = f"{sample.id:05d}.bin"
            img = np.ascontiguousarray(sample.image.data, dtype="<f4")
            msk = sample.truth.data.astype(np.uint8)
            with open(out / fname, "wb") as f:
                f.write(img.tobytes(order="C"))
                f.write(msk.tobytes(order="C"))
            entries.append(
                {
                    "id": sample.id,
                    "split": split,
                    "file": fname,
                    "center": list(sample.spec.center),
                    "radius": sample.spec.radius,
                    "fg_intensity": sample.spec.fg_intensity,
                    "bg_intensity": sample.spec.bg_intensity,
                    "noise_sigma": sample.spec.noise_sigma,
                    "snr": sample.spec.snr,
                }
            )
    meta = {
        "format_version": 1,
        "grid_dim": config.grid_dim,
        "voxel_volume": config.voxel_volume,
        "image_dtype": "<f4",
        "mask_dtype": "u1",
        "order": "C",
        "samples": entries,
    }
    meta_path = out / "metadata.json"
    with open(meta_path, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    return meta_path


def load_dataset(dataset_dir: str | Path) -> dict[str, list[Sample]]:
    """Load a dataset directory back into per-split sample lists."""
    root = Path(dataset_dir)
    with open(root / "metadata.json", encoding="utf-8") as f:
        meta = json.load(f)
    g = meta["grid_dim"]
    nvox = g**3
    splits: dict[str, list[Sample]] = {name: [] for name in synth.SPLIT_NAMES}
    for entry in meta["samples"]:
        raw = (root / entry["file"]).read_bytes()
        img = np.frombuffer(raw, dtype="<f4", count=nvox).reshape(g, g, g)
        msk = np.frombuffer(raw, dtype="u1", offset=4 * nvox, count=nvox).reshape(g, g, g)
        spec = synth.SphereSpec(
            center=tuple(entry["center"]),
            radius=entry["radius"],
            fg_intensity=entry["fg_intensity"],
            bg_intensity=entry["bg_intensity"],
            noise_sigma=entry["noise_sigma"],
        )
        splits[entry["split"]].append(
            Sample(
                image=Image3D(img.copy(), voxel_volume=meta["voxel_volume"]),
                truth=Mask3D(msk.copy().astype(bool)),
                spec=spec,
                id=entry["id"],
            )
        )
    return splits
