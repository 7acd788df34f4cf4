"""End-to-end fit: split, prognostic score, matching, tree, leaf effects."""

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive_int, check_probability
from .dataset import TrialDataset, split_train_holdout
from .exceptions import StageError, TEHTreeError, ValidationError
from .matching import match_pairs
from .prognostic import fit_prognostic, predict_prognostic
from .tree import DOUBLE, SINGLE, build_tree, estimate_effects


@dataclass(frozen=True)
class FitConfig:
    alpha: float = 0.05
    min_node: int = 10
    max_depth: int = 10
    mode: str = SINGLE
    train_frac: float = 0.75
    folds: int = 10
    seed: int = 0
    caliper: float = None

    def __post_init__(self):
        check_probability(self.alpha, "alpha")
        check_positive_int(self.min_node, "min_node")
        check_positive_int(self.max_depth, "max_depth", minimum=0)
        check_positive_int(self.folds, "folds", minimum=2)
        check_positive_int(self.seed, "seed", minimum=0)
        if self.mode not in (SINGLE, DOUBLE):
            raise ValidationError(f"mode must be 'single' or 'double', got {self.mode!r}")
        if self.mode == DOUBLE:
            check_probability(self.train_frac, "train_frac")
        if self.caliper is not None and not self.caliper > 0:
            raise ValidationError(f"caliper must be positive, got {self.caliper!r}")

    @property
    def effective_train_frac(self):
        return 1.0 if self.mode == SINGLE else float(self.train_frac)


@dataclass
class FitDiagnostics:
    learner_names: tuple
    cv_risk: np.ndarray
    weights: np.ndarray
    distance_quantiles: dict
    n_pairs: int
    n_reused_controls: int
    n_dropped: int
    n_train: int
    n_holdout: int
    seed: int
    overall_effect: float = float("nan")
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "learners": list(self.learner_names),
            "cv_risk": [float(v) for v in self.cv_risk],
            "weights": [float(v) for v in self.weights],
            "distance_quantiles": {k: float(v) for k, v in self.distance_quantiles.items()},
            "n_pairs": self.n_pairs,
            "n_reused_controls": self.n_reused_controls,
            "n_dropped": self.n_dropped,
            "n_train": self.n_train,
            "n_holdout": self.n_holdout,
            "seed": self.seed,
            "overall_effect": self.overall_effect,
        }


@contextmanager
def _stage(name):
    try:
        yield
    except TEHTreeError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def fit_tehtree(data, config=None):
    """Run the full method on ``data``.

    Steps: stratified split (skipped in single mode), prognostic ensemble on
    training controls, scores for everyone, nearest-score matching of training
    treated to training controls, gated tree on the pair differences, and leaf
    effects from the pairs (single) or the holdout (double).

    Returns
    -------
    tree : TehTree
        Annotated with leaf effects.
    diagnostics : FitDiagnostics
    """
    config = FitConfig() if config is None else config
    if not isinstance(data, TrialDataset):
        raise ValidationError("data must be a TrialDataset")
    seed = config.seed

    with _stage("split"):
        split = split_train_holdout(data, config.effective_train_frac, seed)
    train = split.train
    with _stage("prognostic"):
        model = fit_prognostic(data, folds=config.folds, seed=seed, rows=train)
        scores = predict_prognostic(model, data.x)
    with _stage("matching"):
        pairs = match_pairs(
            data,
            scores,
            seed,
            caliper=config.caliper,
            treated=train[data.z[train] == 1],
            controls=train[data.z[train] == 0],
        )
    with _stage("tree"):
        tree = build_tree(
            pairs,
            alpha=config.alpha,
            min_node=config.min_node,
            max_depth=config.max_depth,
            col_names=data.col_names,
        )
    with _stage("effects"):
        if config.mode == SINGLE:
            estimate_effects(tree, SINGLE, pairs=pairs)
            overall = float(np.mean(pairs.delta))
        else:
            holdout = data.subset(split.holdout)
            estimate_effects(tree, DOUBLE, holdout=holdout)
            overall = float(holdout.y[holdout.z == 1].mean() - holdout.y[holdout.z == 0].mean())

    q = np.quantile(pairs.distance, [0.0, 0.25, 0.5, 0.75, 1.0])
    diagnostics = FitDiagnostics(
        learner_names=model.names,
        cv_risk=model.cv_risk,
        weights=model.weights,
        distance_quantiles=dict(zip(("min", "q25", "median", "q75", "max"), q)),
        n_pairs=len(pairs),
        n_reused_controls=pairs.n_reused_controls,
        n_dropped=pairs.n_dropped,
        n_train=int(train.size),
        n_holdout=int(split.holdout.size),
        seed=seed,
        overall_effect=overall,
        extra={"pairs": pairs, "scores": scores, "model": model, "split": split},
    )
    return tree, diagnostics


class TEHTreeRegressor(BaseEstimator):
    """Estimator interface: ``fit(X, y, treatment)`` then ``predict(X)`` for CATEs.

    Parameters
    ----------
    alpha : float, default=0.05
        Family-wise level of the split gate.
    min_node : int, default=10
        Minimum number of matched pairs per leaf.
    max_depth : int, default=10
    mode : {"single", "double"}, default="single"
        Leaf effects from the matched pairs, or from a held-out sample.
    train_frac : float, default=0.75
        Training share per arm; used only when ``mode="double"``.
    folds : int, default=10
        Cross-validation folds of the prognostic ensemble.
    random_state : int, default=0

    Attributes
    ----------
    tree_ : TehTree
    diagnostics_ : FitDiagnostics
    n_features_in_ : int
    """

    def __init__(self, alpha=0.05, min_node=10, max_depth=10, mode=SINGLE, train_frac=0.75, folds=10,
                 random_state=0):
        self.alpha = alpha
        self.min_node = min_node
        self.max_depth = max_depth
        self.mode = mode
        self.train_frac = train_frac
        self.folds = folds
        self.random_state = random_state

    def _config(self):
        return FitConfig(
            alpha=self.alpha,
            min_node=self.min_node,
            max_depth=self.max_depth,
            mode=self.mode,
            train_frac=self.train_frac,
            folds=self.folds,
            seed=self.random_state,
        )

    def fit(self, X, y, treatment):
        data = TrialDataset(y=y, z=treatment, x=X)
        self.tree_, self.diagnostics_ = fit_tehtree(data, self._config())
        self.n_features_in_ = data.p
        return self

    def predict(self, X):
        """Leaf effect for each row; NaN where the leaf has no estimate."""
        check_is_fitted(self, "tree_")
        return self.tree_.predict(X)

    def apply(self, X):
        """Leaf index (pre-order) for each row."""
        check_is_fitted(self, "tree_")
        return self.tree_.apply(X)
