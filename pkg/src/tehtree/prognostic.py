"""Stacked-ensemble estimate of the prognostic score E(Y | Z = 0, X).

The ensemble is fit on control subjects only.  Five base learners span the
usual bias/variance range (constant, linear, linear with interactions, bagged
stumps, k-nearest neighbours); each is scored by V-fold cross-validation and
the stacking weights minimize the cross-validated squared error over the unit
simplex.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.neighbors import KNeighborsRegressor
from sklearn.preprocessing import PolynomialFeatures
from sklearn.utils.validation import check_is_fitted

from ._rng import STREAM_PROGNOSTIC, derive_seed, make_rng
from ._validation import check_matrix, check_positive_int
from .exceptions import ValidationError

RIDGE_SCALE = 1e-8


def _standardize_fit(X):
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return mean, sd


class MeanRegressor(RegressorMixin, BaseEstimator):
    """Intercept-only model."""

    def fit(self, X, y):
        self.mean_ = float(np.mean(y))
        self.n_features_in_ = np.shape(X)[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "mean_")
        return np.full(np.shape(X)[0], self.mean_)


class StabilizedLinearRegressor(RegressorMixin, BaseEstimator):
    """Least squares with a vanishing ridge penalty.

    The penalty is ``ridge_scale * trace(Xc' Xc)`` on the centered design, which
    keeps the normal equations solvable under collinearity while leaving
    well-conditioned fits unchanged to working precision.  With
    ``interactions=True`` all pairwise products of the covariates are added.
    """

    def __init__(self, interactions=False, ridge_scale=RIDGE_SCALE):
        self.interactions = interactions
        self.ridge_scale = ridge_scale

    def n_terms(self, p):
        """Number of coefficients including the intercept."""
        return 1 + p + (p * (p - 1) // 2 if self.interactions else 0)

    def _design(self, X):
        if not self.interactions or X.shape[1] < 2:
            return X
        return PolynomialFeatures(degree=2, interaction_only=True, include_bias=False).fit_transform(X)

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.n_features_in_ = X.shape[1]
        D = self._design(X)
        self.x_mean_ = D.mean(axis=0)
        self.y_mean_ = float(y.mean())
        Dc = D - self.x_mean_
        gram = Dc.T @ Dc
        penalty = self.ridge_scale * np.trace(gram)
        if penalty > 0:
            self.coef_ = np.linalg.solve(gram + penalty * np.eye(gram.shape[0]), Dc.T @ (y - self.y_mean_))
        else:
            self.coef_ = np.zeros(D.shape[1])
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        D = self._design(np.asarray(X, dtype=float))
        return self.y_mean_ + (D - self.x_mean_) @ self.coef_


class BaggedStumpsRegressor(RegressorMixin, BaseEstimator):
    """Average of depth-one regression trees.

    Each stump sees a bootstrap resample of the rows and one covariate drawn
    uniformly at random, and splits at the midpoint that minimizes the squared
    error.  Covariates are standardized on the training data first.
    """

    def __init__(self, n_stumps=200, random_state=None):
        self.n_stumps = n_stumps
        self.random_state = random_state

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, p = X.shape
        self.n_features_in_ = p
        self.x_mean_, self.x_sd_ = _standardize_fit(X)
        Xs = (X - self.x_mean_) / self.x_sd_
        rng = np.random.default_rng(self.random_state)
        B = self.n_stumps
        rows = rng.integers(0, n, size=(B, n))
        feats = rng.integers(0, p, size=B)

        vals = Xs[rows, feats[:, None]]  # (B, n)
        targ = y[rows]
        order = np.argsort(vals, axis=1, kind="stable")
        vals = np.take_along_axis(vals, order, axis=1)
        targ = np.take_along_axis(targ, order, axis=1)
        csum = np.cumsum(targ, axis=1)
        total = csum[:, -1:]
        n_left = np.arange(1, n, dtype=float)
        left_sum = csum[:, :-1]
        gain = left_sum**2 / n_left + (total - left_sum) ** 2 / (n - n_left)
        gain[vals[:, :-1] == vals[:, 1:]] = -np.inf  # no split between equal values
        cut = np.argmax(gain, axis=1)
        splittable = np.isfinite(gain[np.arange(B), cut])

        idx = np.arange(B)
        mean_all = total[:, 0] / n
        nl = cut + 1.0
        left_mean = left_sum[idx, cut] / nl
        right_mean = (total[:, 0] - left_sum[idx, cut]) / (n - nl)
        self.features_ = feats
        self.thresholds_ = np.where(splittable, 0.5 * (vals[idx, cut] + vals[idx, cut + 1]), np.inf)
        self.left_values_ = np.where(splittable, left_mean, mean_all)
        self.right_values_ = np.where(splittable, right_mean, mean_all)
        return self

    def predict(self, X):
        check_is_fitted(self, "thresholds_")
        Xs = (np.asarray(X, dtype=float) - self.x_mean_) / self.x_sd_
        v = Xs[:, self.features_]  # (m, B)
        out = np.where(v <= self.thresholds_, self.left_values_, self.right_values_)
        return out.mean(axis=1)


class StandardizedKNNRegressor(RegressorMixin, BaseEstimator):
    """k-nearest-neighbour mean on standardized covariates.

    ``n_neighbors=None`` uses ``ceil(sqrt(n_train))``.
    """

    def __init__(self, n_neighbors=None):
        self.n_neighbors = n_neighbors

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        self.n_features_in_ = X.shape[1]
        self.x_mean_, self.x_sd_ = _standardize_fit(X)
        k = self.n_neighbors or math.ceil(math.sqrt(X.shape[0]))
        self.k_ = min(k, X.shape[0])
        self.knn_ = KNeighborsRegressor(n_neighbors=self.k_, algorithm="brute")
        self.knn_.fit((X - self.x_mean_) / self.x_sd_, np.asarray(y, dtype=float))
        return self

    def predict(self, X):
        check_is_fitted(self, "knn_")
        return self.knn_.predict((np.asarray(X, dtype=float) - self.x_mean_) / self.x_sd_)


LEARNER_NAMES = ("mean", "linear", "linear_interactions", "bagged_stumps", "knn")


def default_learners(n_control, p):
    """The fixed roster for ``n_control`` training controls and ``p`` covariates.

    The interaction model is left out when its coefficient count reaches half
    the control-arm size.
    """
    roster = [
        ("mean", MeanRegressor()),
        ("linear", StabilizedLinearRegressor()),
        ("linear_interactions", StabilizedLinearRegressor(interactions=True)),
        ("bagged_stumps", BaggedStumpsRegressor()),
        ("knn", StandardizedKNNRegressor()),
    ]
    if roster[2][1].n_terms(p) >= n_control / 2:
        del roster[2]
    return roster


def simplex_least_squares(P, y, rtol=1e-12):
    """Minimize ``||y - P w||^2`` subject to ``w >= 0`` and ``sum(w) == 1``.

    Solved exactly by enumerating supports: on each support the equality-
    constrained problem is a small KKT system, and the best feasible support
    wins.  Near-ties (objective within ``rtol`` of the best, relative to
    ``mean(y^2)``) go to the smallest support, then the lowest learner indices,
    so the result is deterministic.  Intended for a handful of columns.
    """
    P = np.asarray(P, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = P.shape
    tol = rtol * max(1.0, float(np.mean(y * y)))
    best = None
    candidates = []
    for size in range(1, m + 1):
        for support in itertools.combinations(range(m), size):
            S = P[:, support]
            if size == 1:
                w = np.ones(1)
            else:
                kkt = np.zeros((size + 1, size + 1))
                kkt[:size, :size] = 2.0 * S.T @ S
                kkt[:size, size] = 1.0
                kkt[size, :size] = 1.0
                rhs = np.concatenate([2.0 * S.T @ y, [1.0]])
                w = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:size]
                if np.any(w < -1e-12):
                    continue
                w = np.clip(w, 0.0, None)
                w = w / w.sum()
            risk = float(np.mean((y - S @ w) ** 2))
            candidates.append((risk, support, w))
            if best is None or risk < best:
                best = risk
    for risk, support, w in candidates:  # enumeration order is size, then lexicographic
        if risk <= best + tol:
            weights = np.zeros(m)
            weights[list(support)] = w
            return weights
    raise AssertionError("unreachable: singletons are always feasible")


@dataclass(frozen=True, eq=False)
class PrognosticModel:
    """Fitted ensemble: learners refit on all controls, simplex weights, CV risks."""

    names: tuple
    learners: tuple
    weights: np.ndarray
    cv_risk: np.ndarray
    n_features: int
    ensemble_cv_risk: float = float("nan")

    def learner_predictions(self, x):
        x = check_matrix(x, "x", self.n_features)
        return np.column_stack([est.predict(x) for est in self.learners])

    def predict(self, x):
        return self.learner_predictions(x) @ self.weights


def _fold_ids(n, folds, rng):
    ids = np.empty(n, dtype=int)
    for f, chunk in enumerate(np.array_split(rng.permutation(n), folds)):
        ids[chunk] = f
    return ids


def _with_stream(est, seed, learner_idx, fold):
    est = clone(est)
    if "random_state" in est.get_params():
        est.set_params(random_state=derive_seed(seed, STREAM_PROGNOSTIC, learner_idx, fold))
    return est


def fit_prognostic_xy(x, y, folds=10, seed=0, learners=None):
    """Fit the ensemble on covariates ``x`` and outcomes ``y`` (controls only)."""
    x = check_matrix(x, "x")
    y = np.asarray(y, dtype=float).ravel()
    folds = check_positive_int(folds, "folds", minimum=2)
    n, p = x.shape
    if y.shape[0] != n:
        raise ValidationError(f"x has {n} rows but y has {y.shape[0]}")
    if n < 2 * folds:
        raise ValidationError(f"control arm has {n} subjects; need at least {2 * folds} for {folds}-fold CV")
    roster = default_learners(n, p) if learners is None else list(learners)

    fold_id = _fold_ids(n, folds, make_rng(seed, STREAM_PROGNOSTIC))
    oof = np.empty((n, len(roster)))
    for f in range(folds):
        train, test = fold_id != f, fold_id == f
        for j, (_, est) in enumerate(roster):
            fitted = _with_stream(est, seed, j, f + 1).fit(x[train], y[train])
            oof[test, j] = fitted.predict(x[test])
    cv_risk = np.mean((y[:, None] - oof) ** 2, axis=0)
    weights = simplex_least_squares(oof, y)
    final = tuple(_with_stream(est, seed, j, 0).fit(x, y) for j, (_, est) in enumerate(roster))
    return PrognosticModel(
        names=tuple(name for name, _ in roster),
        learners=final,
        weights=weights,
        cv_risk=cv_risk,
        n_features=p,
        ensemble_cv_risk=float(np.mean((y - oof @ weights) ** 2)),
    )


def fit_prognostic(data, folds=10, seed=0, rows=None):
    """Fit the ensemble on the control subjects of ``data`` (optionally within ``rows``)."""
    idx = np.arange(data.n) if rows is None else np.asarray(rows, dtype=int)
    ctrl = idx[data.z[idx] == 0]
    if ctrl.size < 2 * folds:
        raise ValidationError(
            f"control arm has {ctrl.size} subjects; need at least {2 * folds} for {folds}-fold CV"
        )
    return fit_prognostic_xy(data.x[ctrl], data.y[ctrl], folds=folds, seed=seed)


def predict_prognostic(model, x):
    """Ensemble prediction ``sum_m weights[m] * learner_m(x)`` for each row."""
    return model.predict(x)


class SuperLearnerRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_prognostic_xy` for sklearn pipelines."""

    def __init__(self, folds=10, random_state=0):
        self.folds = folds
        self.random_state = random_state

    def fit(self, X, y):
        self.model_ = fit_prognostic_xy(X, y, folds=self.folds, seed=self.random_state)
        self.n_features_in_ = self.model_.n_features
        self.weights_ = self.model_.weights
        self.cv_risk_ = self.model_.cv_risk
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(X)
