"""Treatment-effect heterogeneity trees for randomized trials.

Pipeline: prognostic-score ensemble on controls, nearest-score matching of
treated to control subjects, a Bonferroni-gated conditional inference tree on
the matched-pair differences (random-intercept mixed-model tests), and
per-leaf treatment-effect estimates.
"""

from .bench import ReplicationReport, aggregate_metrics, run_replications
from .dataset import SplitIndices, TrialDataset, load_csv, save_csv, split_train_holdout
from .exceptions import DegenerateRegressorError, ParseError, StageError, TEHTreeError, ValidationError
from .lmm import LmmFit, fit_random_intercept, fit_random_intercept_batch
from .matching import MatchedPairSet, match_pairs
from .pipeline import FitConfig, TEHTreeRegressor, fit_tehtree
from .prognostic import PrognosticModel, SuperLearnerRegressor, fit_prognostic, predict_prognostic
from .simgen import ScenarioSpec, generate_dataset, true_cate
from .tree import (
    TehTree,
    build_tree,
    estimate_effects,
    find_split_point,
    predict_effect,
    select_split_variable,
    tree_from_json,
    tree_to_json,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateRegressorError",
    "FitConfig",
    "LmmFit",
    "MatchedPairSet",
    "ParseError",
    "PrognosticModel",
    "ReplicationReport",
    "ScenarioSpec",
    "SplitIndices",
    "StageError",
    "SuperLearnerRegressor",
    "TEHTreeError",
    "TEHTreeRegressor",
    "TehTree",
    "TrialDataset",
    "ValidationError",
    "aggregate_metrics",
    "build_tree",
    "estimate_effects",
    "find_split_point",
    "fit_prognostic",
    "fit_random_intercept",
    "fit_random_intercept_batch",
    "fit_tehtree",
    "generate_dataset",
    "load_csv",
    "match_pairs",
    "predict_effect",
    "predict_prognostic",
    "run_replications",
    "save_csv",
    "select_split_variable",
    "split_train_holdout",
    "tree_from_json",
    "tree_to_json",
    "true_cate",
]
