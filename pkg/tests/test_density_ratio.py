import numpy as np
import pytest

from volcp.density_ratio import (
    FeatureMatrix,
    LogisticModel,
    Standardization,
    build_feature_matrix,
    classifier_accuracy,
    cross_fit_probabilities,
    fit_logistic,
    penalized_gradient,
    penalized_loglik,
    predict_proba,
    predict_proba_many,
    weight_array,
    weights_from_probs,
)


def finite_difference_gradient(X, y, coef, intercept, lam, step=1e-5):
    """Central finite differences of the penalized log-likelihood."""
    params = np.concatenate([coef, [intercept]])
    grad = np.zeros_like(params)
    for i in range(params.size):
        hi, lo = params.copy(), params.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (
            penalized_loglik(X, y, hi[:-1], hi[-1], lam)
            - penalized_loglik(X, y, lo[:-1], lo[-1], lam)
        ) / (2 * step)
    return grad


def make_features(X, y):
    return FeatureMatrix(
        rows=np.asarray(X, float),
        labels=np.asarray(y, int),
        standardization=Standardization(
            mean=np.zeros(np.asarray(X).shape[1]), std=np.ones(np.asarray(X).shape[1])
        ),
    )


class TestGradient:
    def test_analytic_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            n, d = 60, 5
            X = rng.normal(size=(n, d))
            y = rng.integers(0, 2, n).astype(float)
            coef = rng.normal(size=d)
            intercept = float(rng.normal())
            lam = 1e-4
            g_coef, g_int = penalized_gradient(X, y, coef, intercept, lam)
            analytic = np.concatenate([g_coef, [g_int]])
            fd = finite_difference_gradient(X, y, coef, intercept, lam)
            rel = np.abs(fd - analytic) / np.maximum(np.abs(analytic), 1e-8)
            assert rel.max() < 1e-5


class TestFitLogistic:
    def test_separable_1d(self):
        X = np.concatenate([np.linspace(-3, -1, 50), np.linspace(1, 3, 50)])[:, None]
        y = np.r_[np.zeros(50), np.ones(50)]
        model = fit_logistic(make_features(X, y), l2_lambda=1e-4)
        probs = predict_proba_many(model, X)
        assert classifier_accuracy(probs, y.astype(int)) == 1.0

    def test_uninformative_features(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(1000, 3))
        y = np.r_[np.zeros(500), np.ones(500)]
        model = fit_logistic(make_features(X, y))
        # intercept-only behavior: predictions hover at the class prior
        probs = predict_proba_many(model, rng.normal(size=(400, 3)))
        assert abs(probs.mean() - 0.5) < 0.05
        held_y = rng.integers(0, 2, 400)
        acc = classifier_accuracy(predict_proba_many(model, rng.normal(size=(400, 3))), held_y)
        assert abs(acc - 0.5) <= 0.06

    def test_single_class_rejected(self):
        X = np.zeros((5, 2))
        with pytest.raises(ValueError):
            fit_logistic(make_features(X, np.zeros(5)))

    def test_converges_with_gradient_at_tol(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(200, 4))
        y = (X[:, 0] + rng.normal(scale=2.0, size=200) > 0).astype(int)
        model = fit_logistic(make_features(X, y), tol=1e-8)
        assert model.converged
        g_coef, g_int = penalized_gradient(
            X, y.astype(float), model.coefficients, model.intercept, model.l2_lambda
        )
        assert max(np.abs(g_coef).max(), abs(g_int)) <= 1e-8

    def test_label_symmetry(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(300, 3))
        y = (X[:, 0] + rng.normal(scale=1.0, size=300) > 0).astype(int)
        m1 = fit_logistic(make_features(X, y), tol=1e-10)
        m2 = fit_logistic(make_features(X, 1 - y), tol=1e-10)
        p1 = predict_proba_many(m1, X)
        p2 = predict_proba_many(m2, X)
        assert np.allclose(p1, 1.0 - p2, atol=1e-6)

    def test_zero_variance_feature_dropped(self):
        rng = np.random.default_rng(4)
        calib = np.column_stack([rng.normal(size=100), np.full(100, 7.0)])
        test = np.column_stack([rng.normal(loc=1.0, size=100), np.full(100, 7.0)])
        fm = build_feature_matrix(calib, test)
        assert np.all(fm.rows[:, 1] == 0.0)
        model = fit_logistic(fm)
        assert model.coefficients[1] == pytest.approx(0.0, abs=1e-9)


class TestPredictProba:
    def test_zero_model(self):
        model = LogisticModel(
            coefficients=np.zeros(2), intercept=0.0, l2_lambda=0.0, converged=True, iterations=0
        )
        assert predict_proba(model, [1.0, -1.0]) == 0.5

    def test_hand_computed_sigmoid(self):
        model = LogisticModel(
            coefficients=np.array([0.3]), intercept=-0.1, l2_lambda=0.0, converged=True, iterations=0
        )
        assert predict_proba(model, [1.0]) == pytest.approx(0.549834, abs=1e-6)

    def test_monotone_in_intercept(self):
        probs = []
        for b in (-1.0, 0.0, 1.0, 2.0):
            model = LogisticModel(
                coefficients=np.array([0.5]), intercept=b, l2_lambda=0.0, converged=True, iterations=0
            )
            probs.append(predict_proba(model, [0.3]))
        assert all(a < b for a, b in zip(probs, probs[1:]))

    def test_length_mismatch(self):
        model = LogisticModel(
            coefficients=np.zeros(2), intercept=0.0, l2_lambda=0.0, converged=True, iterations=0
        )
        with pytest.raises(ValueError):
            predict_proba(model, [1.0, 2.0, 3.0])


class TestCrossFit:
    def test_mechanics_small(self):
        calib = np.array([[0.0], [1.0]])
        test = np.array([[0.5], [1.5]])
        pc, pt = cross_fit_probabilities(calib, test, folds=2, seed=0)
        for p in np.r_[pc, pt]:
            assert 0.0 < p < 1.0

    def test_identical_distributions(self):
        rng = np.random.default_rng(5)
        calib = rng.normal(size=(200, 5))
        test = rng.normal(size=(200, 5))
        pc, pt = cross_fit_probabilities(calib, test, folds=10, seed=0)
        assert abs(pc.mean() - 0.5) < 0.05
        assert abs(pt.mean() - 0.5) < 0.05

    def test_strong_shift(self):
        rng = np.random.default_rng(6)
        calib = rng.normal(size=(200, 5))
        test = rng.normal(size=(200, 5))
        test[:, 0] += 3.0
        pc, pt = cross_fit_probabilities(calib, test, folds=10, seed=0)
        assert pt.mean() > 0.8
        assert pc.mean() < 0.2

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(7)
        calib = rng.normal(size=(40, 2))
        test = rng.normal(loc=0.5, size=(40, 2))
        a = cross_fit_probabilities(calib, test, folds=5, seed=11)
        b = cross_fit_probabilities(calib, test, folds=5, seed=11)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_too_few_folds_rejected(self):
        with pytest.raises(ValueError):
            cross_fit_probabilities(np.zeros((4, 1)), np.ones((4, 1)), folds=1)

    def test_id_vs_id_weights_near_unit(self):
        # over 50 seeded runs the median weight stays close to 1
        medians = []
        for seed in range(50):
            rng = np.random.default_rng(seed)
            calib = rng.normal(size=(100, 3))
            test = rng.normal(size=(100, 3))
            pc, pt = cross_fit_probabilities(calib, test, folds=5, seed=seed)
            medians.append(np.median(weight_array(np.r_[pc, pt])))
        assert all(0.7 <= m <= 1.4 for m in medians)


class TestWeights:
    def test_half_probability(self):
        (w,) = weights_from_probs([0.5])
        assert w.weight == 1.0

    def test_clipping_caps_at_99(self):
        (w,) = weights_from_probs([0.999])
        assert w.prob == 0.99
        assert w.weight == pytest.approx(99.0)

    def test_quarter_probability(self):
        (w,) = weights_from_probs([0.25])
        assert w.weight == pytest.approx(1.0 / 3.0)

    def test_bounds_guarantee(self):
        rng = np.random.default_rng(8)
        w = weight_array(rng.uniform(-0.5, 1.5, 1000))
        assert np.all(w >= 1.0 / 99.0) and np.all(w <= 99.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            weight_array([0.5, np.nan])


class TestAccuracy:
    def test_all_correct(self):
        assert classifier_accuracy(np.full(5, 0.9), np.ones(5, dtype=int)) == 1.0

    def test_tie_rule(self):
        labels = np.array([0, 1, 0, 1])
        assert classifier_accuracy(np.full(4, 0.5), labels) == 0.5

    def test_hand_count(self):
        probs = np.array([0.2, 0.7, 0.6, 0.4])
        labels = np.array([0, 1, 0, 0])
        assert classifier_accuracy(probs, labels) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            classifier_accuracy(np.array([0.5]), np.array([0, 1]))
