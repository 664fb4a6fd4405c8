"""Classifier-based density ratio estimation.

A from-scratch L2-regularized logistic regression separates calibration
(label 0) from test (label 1) samples; the density ratio is p/(1-p) with
probabilities clipped to [0.01, 0.99]. Out-of-fold probabilities from a
stratified cross-fit feed the weights so no sample influences its own weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

PROB_CLIP = (0.01, 0.99)
DEFAULT_L2 = 1e-4
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500
DEFAULT_FOLDS = 20


@dataclass(frozen=True)
class Standardization:
    """Per-feature (mean, std); zero-variance features are mapped to zeros."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        safe = np.where(self.std > 0, self.std, 1.0)
        out = (X - self.mean) / safe
        out[:, self.std == 0] = 0.0
        return out


@dataclass(frozen=True)
class FeatureMatrix:
    """Standardized feature rows with 0/1 distribution labels."""

    rows: np.ndarray
    labels: np.ndarray
    standardization: Standardization

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[0] != self.labels.shape[0]:
            raise ValueError("rows and labels must be aligned")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("non-finite features after standardization")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise ValueError("labels must be 0 or 1")


def build_feature_matrix(calib_X: np.ndarray, test_X: np.ndarray) -> FeatureMatrix:
    """Stack calibration (0) and test (1) features, standardized pooled."""
    calib_X = np.atleast_2d(np.asarray(calib_X, dtype=np.float64))
    test_X = np.atleast_2d(np.asarray(test_X, dtype=np.float64))
    if calib_X.shape[1] != test_X.shape[1]:
        raise ValueError("calibration and test feature dimensions differ")
    X = np.vstack([calib_X, test_X])
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    stand = Standardization(mean=X.mean(axis=0), std=X.std(axis=0))
    labels = np.concatenate(
        [np.zeros(len(calib_X), dtype=int), np.ones(len(test_X), dtype=int)]
    )
    return FeatureMatrix(rows=stand.apply(X), labels=labels, standardization=stand)


@dataclass(frozen=True)
class LogisticModel:
    coefficients: np.ndarray
    intercept: float
    l2_lambda: float
    converged: bool
    iterations: int
    standardization: Standardization | None = None


@dataclass(frozen=True)
class WeightEstimate:
    """Clipped probability and the induced density-ratio weight p/(1-p)."""

    prob: float
    weight: float


def penalized_loglik(
    X: np.ndarray, y: np.ndarray, coef: np.ndarray, intercept: float, l2_lambda: float
) -> float:
    """Log-likelihood minus (lambda/2)*||coef||^2 (intercept unpenalized)."""
    eta = X @ coef + intercept
    # log sigma(eta) = -log(1 + e^-eta), stable in both tails
    ll = -(np.logaddexp(0.0, -eta) * y + np.logaddexp(0.0, eta) * (1 - y)).sum()
    return float(ll - 0.5 * l2_lambda * coef @ coef)


def penalized_gradient(
    X: np.ndarray, y: np.ndarray, coef: np.ndarray, intercept: float, l2_lambda: float
) -> tuple[np.ndarray, float]:
    """Gradient of the penalized log-likelihood wrt (coef, intercept)."""
    resid = y - expit(X @ coef + intercept)
    return X.T @ resid - l2_lambda * coef, float(resid.sum())


def fit_logistic(
    features: FeatureMatrix,
    l2_lambda: float = DEFAULT_L2,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> LogisticModel:
    """Newton (IRLS) ascent of the penalized log-likelihood, with step halving."""
    X, y = features.rows, features.labels.astype(np.float64)
    if y.min() == y.max():
        raise ValueError("both classes must be present")
    n, d = X.shape
    coef = np.zeros(d)
    intercept = 0.0
    converged = False
    it = 0
    ll = penalized_loglik(X, y, coef, intercept, l2_lambda)
    for it in range(1, max_iter + 1):
        g_coef, g_int = penalized_gradient(X, y, coef, intercept, l2_lambda)
        grad_inf = max(np.abs(g_coef).max(initial=0.0), abs(g_int))
        if grad_inf <= tol:
            converged = True
            it -= 1
            break
        p = expit(X @ coef + intercept)
        w = np.clip(p * (1.0 - p), 1e-12, None)
        Xw = X * w[:, None]
        H = np.empty((d + 1, d + 1))
        H[:d, :d] = X.T @ Xw + l2_lambda * np.eye(d)
        H[:d, d] = H[d, :d] = Xw.sum(axis=0)
        H[d, d] = w.sum()
        step = np.linalg.solve(H, np.concatenate([g_coef, [g_int]]))
        # halve until the penalized log-likelihood does not decrease
        scale = 1.0
        for _ in range(40):
            new_coef = coef + scale * step[:d]
            new_int = intercept + scale * step[d]
            new_ll = penalized_loglik(X, y, new_coef, new_int, l2_lambda)
            if new_ll >= ll - 1e-12:
                break
            scale *= 0.5
        coef, intercept, ll = new_coef, new_int, new_ll
    else:
        g_coef, g_int = penalized_gradient(X, y, coef, intercept, l2_lambda)
        converged = max(np.abs(g_coef).max(initial=0.0), abs(g_int)) <= tol
    return LogisticModel(
        coefficients=coef,
        intercept=float(intercept),
        l2_lambda=l2_lambda,
        converged=converged,
        iterations=it,
        standardization=features.standardization,
    )


def predict_proba(model: LogisticModel, x: np.ndarray) -> float:
    """P(test distribution | x) for one raw (unstandardized) feature vector."""
    return float(predict_proba_many(model, np.atleast_2d(np.asarray(x, float)))[0])


def predict_proba_many(model: LogisticModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if model.standardization is not None:
        X = model.standardization.apply(X)
    if X.shape[1] != model.coefficients.size:
        raise ValueError(
            f"feature length {X.shape[1]} != model dimension {model.coefficients.size}"
        )
    return expit(X @ model.coefficients + model.intercept)


def _stratified_folds(labels: np.ndarray, folds: int, seed) -> np.ndarray:
    """Deterministic fold index per sample, class ratios preserved."""
    rng = np.random.default_rng(seed)
    assign = np.empty(labels.size, dtype=int)
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        assign[idx] = np.arange(idx.size) % folds
    return assign


def cross_fit_probabilities(
    calib_features: np.ndarray,
    test_features: np.ndarray,
    folds: int = DEFAULT_FOLDS,
    seed=0,
    l2_lambda: float = DEFAULT_L2,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[np.ndarray, np.ndarray]:
    """Out-of-fold test-membership probabilities for every sample.

    Returns (probs_calib, probs_test) aligned with the input rows.
    """
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    fm = build_feature_matrix(calib_features, test_features)
    n_calib = np.atleast_2d(np.asarray(calib_features)).shape[0]
    counts = (int((fm.labels == 0).sum()), int((fm.labels == 1).sum()))
    if min(counts) < 2:
        raise ValueError("need at least 2 samples per class for cross-fitting")
    folds = min(folds, *counts)
    assign = _stratified_folds(fm.labels, folds, seed)
    probs = np.empty(fm.labels.size)
    for k in range(folds):
        hold = assign == k
        sub = FeatureMatrix(
            rows=fm.rows[~hold],
            labels=fm.labels[~hold],
            standardization=fm.standardization,
        )
        model = fit_logistic(sub, l2_lambda=l2_lambda, tol=tol, max_iter=max_iter)
        probs[hold] = expit(fm.rows[hold] @ model.coefficients + model.intercept)
    return probs[:n_calib], probs[n_calib:]


def weights_from_probs(probs: np.ndarray) -> list[WeightEstimate]:
    """Clip to [0.01, 0.99] and map p -> p/(1-p)."""
    w = weight_array(probs)
    p = np.clip(np.asarray(probs, dtype=np.float64), *PROB_CLIP)
    return [WeightEstimate(prob=float(pi), weight=float(wi)) for pi, wi in zip(p, w)]


def weight_array(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if not np.all(np.isfinite(probs)):
        raise ValueError("probabilities must be finite")
    p = np.clip(probs, *PROB_CLIP)
    return p / (1.0 - p)


def classifier_accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction with (prob > 0.5) == label; a tie at 0.5 predicts class 0."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape:
        raise ValueError(f"length mismatch: {probs.shape} vs {labels.shape}")
    return float(((probs > 0.5).astype(int) == labels).mean())
