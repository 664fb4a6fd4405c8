import json

import numpy as np
import pytest

from volcp import trimask
from volcp.grids import Image3D, Mask3D, dice, overlap_counts, volume
from volcp.synth import Sample, SphereSpec, digitize_sphere, generate_sample, iter_split
from volcp.trimask import TriMask, TriThresholds, VolumeTriple, fit_thresholds, predict, volumes


def noiseless_sample(seed, fg=5.0, grid_dim=16, radius=4.0):
    center = (grid_dim / 2 - 0.5,) * 3
    truth = digitize_sphere(grid_dim, center, radius)
    data = np.where(truth.data, fg, 0.0)
    spec = SphereSpec(
        center=center, radius=radius, fg_intensity=fg, bg_intensity=0.0, noise_sigma=1e-6
    )
    return Sample(image=Image3D(data), truth=truth, spec=spec, id=seed)


class TestFitThresholds:
    def test_separable_case(self):
        train = [noiseless_sample(i) for i in range(4)]
        th = fit_thresholds(train, gamma=0.2)
        for t in (th.t_lower, th.t_mean, th.t_upper):
            assert 0.0 <= t < 5.0
        assert th.t_upper <= th.t_mean <= th.t_lower
        # with a clean gap every head recovers the truth exactly
        s = noiseless_sample(99)
        tm = predict(s.image, th)
        for mask in (tm.lower, tm.mean, tm.upper):
            assert dice(mask, s.truth) == 1.0

    def test_gamma_half_collapses_heads(self):
        train = [generate_sample(seed=i, snr=3.0, grid_dim=16, radius_range=(3, 6)) for i in range(6)]
        th = fit_thresholds(train, gamma=0.5)
        assert th.t_lower == th.t_mean == th.t_upper

    def test_empty_train_rejected(self):
        with pytest.raises(ValueError):
            fit_thresholds([], gamma=0.2)

    def test_invalid_gamma(self):
        with pytest.raises(ValueError):
            fit_thresholds([noiseless_sample(0)], gamma=0.7)

    def test_head_ordering_and_precision(self, fitted_thresholds, small_id_test):
        th = fitted_thresholds
        assert th.t_lower >= th.t_mean >= th.t_upper
        lower_prec, upper_prec = [], []
        for s in small_id_test:
            tm = predict(s.image, th)
            for mask, acc in ((tm.lower, lower_prec), (tm.upper, upper_prec)):
                tp, fp, _ = overlap_counts(mask, s.truth)
                if tp + fp > 0:
                    acc.append(tp / (tp + fp))
        assert np.mean(lower_prec) > np.mean(upper_prec)

    def test_recall_ordering(self, fitted_thresholds, small_id_test):
        recalls = {"lower": [], "mean": [], "upper": []}
        for s in small_id_test:
            tm = predict(s.image, fitted_thresholds)
            for name, mask in (("lower", tm.lower), ("mean", tm.mean), ("upper", tm.upper)):
                tp, _, fn = overlap_counts(mask, s.truth)
                recalls[name].append(tp / (tp + fn))
        assert np.mean(recalls["upper"]) >= np.mean(recalls["mean"]) >= np.mean(recalls["lower"])


class TestPredict:
    def test_constant_image_below_thresholds(self):
        th = TriThresholds(t_lower=3.0, t_mean=2.0, t_upper=1.0)
        img = Image3D(np.full((4, 4, 4), 0.5))
        tm = predict(img, th)
        assert tm.lower.count() == tm.mean.count() == tm.upper.count() == 0

    def test_degenerate_equal_thresholds(self):
        th = TriThresholds(t_lower=1.0, t_mean=1.0, t_upper=1.0)
        rng = np.random.default_rng(0)
        img = Image3D(rng.normal(1.0, 1.0, (6, 6, 6)))
        tm = predict(img, th)
        assert np.array_equal(tm.lower.data, tm.mean.data)
        assert np.array_equal(tm.mean.data, tm.upper.data)

    def test_strict_inequality(self):
        th = TriThresholds(t_lower=1.0, t_mean=1.0, t_upper=1.0)
        img = Image3D(np.full((4, 4, 4), 1.0))
        assert predict(img, th).upper.count() == 0

    def test_dice_on_snr4_sample(self, fitted_thresholds):
        s = generate_sample(seed=123, snr=4.0)
        tm = predict(s.image, fitted_thresholds)
        assert dice(tm.mean, s.truth) >= 0.85

    def test_nestedness(self, fitted_thresholds):
        for seed in range(5):
            s = generate_sample(seed=seed, snr=2.5)
            tm = predict(s.image, fitted_thresholds)
            assert not np.any(tm.lower.data & ~tm.mean.data)
            assert not np.any(tm.mean.data & ~tm.upper.data)

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(5)
        img = Image3D(rng.normal(0, 1, (8, 8, 8)))
        vols = []
        for t in np.linspace(-2, 2, 9):
            th = TriThresholds(t_lower=t, t_mean=t, t_upper=t)
            vols.append(volume(predict(img, th).mean))
        assert all(a >= b for a, b in zip(vols, vols[1:]))


class TestVolumes:
    def test_empty(self):
        empty = Mask3D(np.zeros((3, 3, 3), dtype=bool))
        vt = volumes(TriMask(lower=empty, mean=empty, upper=empty))
        assert (vt.lo, vt.mid, vt.hi) == (0.0, 0.0, 0.0)

    def test_counting(self):
        arrs = []
        for n in (1, 2, 3):
            a = np.zeros((3, 3, 3), dtype=bool)
            a.flat[:n] = True
            arrs.append(Mask3D(a))
        vt = volumes(TriMask(lower=arrs[0], mean=arrs[1], upper=arrs[2]))
        assert (vt.lo, vt.mid, vt.hi) == (1.0, 2.0, 3.0)

    def test_ordering_on_generated_samples(self, fitted_thresholds, small_gen_config):
        for s in iter_split(0, small_gen_config, "calib"):
            vt = volumes(predict(s.image, fitted_thresholds))
            assert vt.lo <= vt.mid <= vt.hi

    def test_unordered_triple_rejected(self):
        with pytest.raises(ValueError):
            VolumeTriple(lo=3.0, mid=2.0, hi=1.0)


class TestTriTypes:
    def test_thresholds_json_round_trip(self):
        th = TriThresholds(t_lower=2.5, t_mean=1.5, t_upper=0.5, gamma=0.3)
        again = TriThresholds.from_json(th.to_json())
        assert again == th
        assert set(json.loads(th.to_json())) == {"t_lower", "t_mean", "t_upper", "gamma"}

    def test_threshold_ordering_enforced(self):
        with pytest.raises(ValueError):
            TriThresholds(t_lower=0.0, t_mean=1.0, t_upper=2.0)

    def test_gamma_range(self):
        with pytest.raises(ValueError):
            TriThresholds(t_lower=1.0, t_mean=1.0, t_upper=1.0, gamma=0.6)
        TriThresholds(t_lower=1.0, t_mean=1.0, t_upper=1.0, gamma=0.5)

    def test_trimask_nestedness_enforced(self):
        a = np.zeros((3, 3, 3), dtype=bool)
        b = np.zeros((3, 3, 3), dtype=bool)
        a[0, 0, 0] = True
        b[1, 1, 1] = True
        with pytest.raises(ValueError):
            TriMask(lower=Mask3D(a), mean=Mask3D(b), upper=Mask3D(b))
