"""Monte Carlo replication driver and metric aggregation.

Replicate ``r`` of a scenario uses the derived seed
``derive_seed(spec.seed, STREAM_REPLICATE, r)`` both for data generation and
for the fit, so every replicate is a pure function of ``(spec.seed, r)`` and the
results do not depend on the number of workers or on completion order.
"""

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import STREAM_EVALUATE, STREAM_REPLICATE, derive_seed, make_rng
from ._validation import check_positive_int
from .exceptions import TEHTreeError, ValidationError
from .pipeline import FitConfig, fit_tehtree
from .simgen import generate_covariates, generate_dataset, heterogeneity_vars, true_cate

METRICS_SCHEMA_VERSION = 1
MAX_FAILURE_RATE = 0.01
# central 5% of a standard normal: |x| < Phi^-1(0.525)
MIDDLE_5PCT = 0.0627

METRIC_COLUMNS = (
    "schema_version",
    "model",
    "covariates",
    "coeffs",
    "n",
    "rho",
    "seed",
    "alpha",
    "min_node",
    "max_depth",
    "mode",
    "train_frac",
    "folds",
    "reps",
    "n_failed",
    "targets",
    "type_I_error",
    "power_root",
    "power_any_node",
    "power_all",
    "power_any_split",
    "mean_n_terminal",
    "median_n_terminal",
    "n_first_split",
    "mean_first_split_point",
    "median_first_split_point",
    "pct_first_split_mid5",
    "pct_non_target_splits",
    "mean_mse",
)

PER_REP_COLUMNS = (
    "rep",
    "seed",
    "failed",
    "error",
    "split_any",
    "root_var",
    "split_vars",
    "first_split_point",
    "n_terminal",
    "mse",
    "leaf_effects",
)


class ReplicationFailure(TEHTreeError, RuntimeError):
    """More than 1% of the replicates raised; ``report`` holds what finished."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class RepResult:
    rep: int
    seed: int
    split_any: bool = False
    root_var: int = None
    split_var_list: tuple = ()
    first_split_point: float = None
    n_terminal: int = 1
    mse: float = float("nan")
    leaf_effects: tuple = ()
    error: str = None

    @property
    def failed(self):
        return self.error is not None

    @property
    def split_vars(self):
        return set(self.split_var_list)


@dataclass
class ReplicationReport:
    spec: object
    config: FitConfig
    reps: int
    per_rep: list = field(default_factory=list)

    @property
    def ok(self):
        return [r for r in self.per_rep if not r.failed]

    @property
    def n_failed(self):
        return sum(r.failed for r in self.per_rep)


def replicate_seed(seed, rep):
    return derive_seed(seed, STREAM_REPLICATE, rep)


def run_one(spec, config, rep):
    """Generate, fit and score replicate ``rep``; errors are captured, not raised."""
    seed = replicate_seed(spec.seed, rep)
    out = RepResult(rep=rep, seed=seed)
    try:
        rep_spec = spec.with_seed(seed)
        data, _ = generate_dataset(rep_spec)
        tree, diag = fit_tehtree(data, replace(config, seed=seed))
        internal = tree.root.internal_nodes()
        out.split_any = tree.n_terminal > 1
        out.root_var = tree.root.var
        out.split_var_list = tuple(node.var for node in internal)
        out.first_split_point = tree.root.threshold
        out.n_terminal = tree.n_terminal
        out.leaf_effects = tuple(leaf.effect for leaf in tree.root.leaves())

        # fresh evaluation sample of the same size
        x_eval = generate_covariates(rep_spec, rep_spec.n, make_rng(seed, STREAM_EVALUATE))
        pred = tree.predict(x_eval)
        pred = np.where(np.isnan(pred), diag.overall_effect, pred)
        out.mse = float(np.mean((pred - true_cate(rep_spec, x_eval)) ** 2))
    except Exception as exc:  # recorded per replicate
        out.error = f"{type(exc).__name__}: {exc}"
    return out


def _run_chunk(args):
    spec, config, reps = args
    return [run_one(spec, config, r) for r in reps]


def run_replications(spec, config=None, reps=500, workers=None):
    """Run ``reps`` independent replicates of ``spec`` under ``config``.

    Parameters
    ----------
    spec : ScenarioSpec
    config : FitConfig, optional
        Method settings; its ``seed`` is replaced per replicate.
    reps : int
    workers : int, optional
        Process count; defaults to the available CPUs.  ``1`` runs in-process.

    Raises
    ------
    ReplicationFailure
        When more than 1% of replicates fail.
    """
    config = FitConfig() if config is None else config
    reps = check_positive_int(reps, "reps")
    workers = check_positive_int(workers or os.cpu_count() or 1, "workers")
    indices = list(range(reps))
    if workers == 1:
        results = _run_chunk((spec, config, indices))
    else:
        n_chunks = min(reps, 4 * workers)
        chunks = [c.tolist() for c in np.array_split(indices, n_chunks)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for part in pool.map(_run_chunk, [(spec, config, c) for c in chunks]) for r in part]
    results.sort(key=lambda r: r.rep)
    report = ReplicationReport(spec=spec, config=config, reps=reps, per_rep=results)
    if report.n_failed > MAX_FAILURE_RATE * reps:
        first = next(r.error for r in results if r.failed)
        raise ReplicationFailure(f"{report.n_failed} of {reps} replicates failed; first error: {first}", report)
    return report


def _mean(values):
    return float(np.mean(values)) if len(values) else float("nan")


def _median(values):
    return float(np.median(values)) if len(values) else float("nan")


def aggregate_metrics(report, targets=None):
    """Summary metrics of a report.

    ``targets`` is the set of covariate indices (0-based) that carry a true
    treatment interaction; by default it is read off the scenario.  Failed
    replicates are excluded from every denominator.

    The first-split-point statistics use replicates whose root split is on a
    target covariate (all splitting replicates when there are no targets).
    """
    targets = set(heterogeneity_vars(report.spec) if targets is None else targets)
    ok = report.ok
    split_any = np.array([r.split_any for r in ok], dtype=bool)
    root_hit = np.array([r.root_var in targets for r in ok], dtype=bool)
    any_hit = np.array([bool(targets & r.split_vars) for r in ok], dtype=bool)
    all_hit = np.array([bool(targets) and targets <= r.split_vars for r in ok], dtype=bool)
    n_terminal = np.array([r.n_terminal for r in ok], dtype=float)

    first = [
        r.first_split_point
        for r in ok
        if r.split_any and (r.root_var in targets or not targets)
    ]
    all_splits = [v for r in ok for v in r.split_var_list]
    non_target = [v not in targets for v in all_splits]

    spec, cfg = report.spec, report.config
    return {
        "schema_version": METRICS_SCHEMA_VERSION,
        "model": spec.model,
        "covariates": spec.covariates,
        "coeffs": spec.coeff_string(),
        "n": spec.n,
        "rho": spec.rho,
        "seed": spec.seed,
        "alpha": cfg.alpha,
        "min_node": cfg.min_node,
        "max_depth": cfg.max_depth,
        "mode": cfg.mode,
        "train_frac": cfg.effective_train_frac,
        "folds": cfg.folds,
        "reps": report.reps,
        "n_failed": report.n_failed,
        "targets": ";".join(f"X{j + 1}" for j in sorted(targets)),
        "type_I_error": _mean(split_any),
        "power_root": _mean(root_hit),
        "power_any_node": _mean(any_hit),
        "power_all": _mean(all_hit),
        "power_any_split": _mean(split_any),
        "mean_n_terminal": _mean(n_terminal),
        "median_n_terminal": _median(n_terminal),
        "n_first_split": len(first),
        "mean_first_split_point": _mean(first),
        "median_first_split_point": _median(first),
        "pct_first_split_mid5": _mean([abs(v) < MIDDLE_5PCT for v in first]),
        "pct_non_target_splits": _mean(non_target),
        "mean_mse": _mean([r.mse for r in ok]),
    }


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_metrics_csv(rows, path):
    """Write metric records (dicts keyed by ``METRIC_COLUMNS``) to ``path``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in METRIC_COLUMNS])


def read_metrics_csv(path):
    """Read a metrics CSV back into a list of string-valued dicts."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("schema_version", "model") if c not in (reader.fieldnames or ())]
        if missing:
            raise ValidationError(f"{path} is not a metrics CSV (missing {missing})")
        rows = list(reader)
    for row in rows:
        if row["schema_version"] != str(METRICS_SCHEMA_VERSION):
            raise ValidationError(f"{path}: unsupported metrics schema version {row['schema_version']!r}")
    return rows


def write_per_rep_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PER_REP_COLUMNS)
        for r in report.per_rep:
            writer.writerow([
                r.rep,
                r.seed,
                int(r.failed),
                r.error or "",
                int(r.split_any),
                "" if r.root_var is None else r.root_var,
                ";".join(str(v) for v in r.split_var_list),
                _fmt(r.first_split_point),
                r.n_terminal,
                _fmt(r.mse),
                ";".join(_fmt(e) for e in r.leaf_effects),
            ])
