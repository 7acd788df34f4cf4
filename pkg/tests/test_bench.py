import math

import numpy as np
import pytest

from tehtree import bench
from tehtree.bench import (
    METRIC_COLUMNS,
    ReplicationFailure,
    ReplicationReport,
    RepResult,
    aggregate_metrics,
    read_metrics_csv,
    run_replications,
    write_metrics_csv,
    write_per_rep_csv,
)
from tehtree.exceptions import ValidationError
from tehtree.pipeline import FitConfig
from tehtree.simgen import ScenarioSpec

M1 = ScenarioSpec(model="M1", covariates="C2", n=60, rho=0.2, seed=3)
M3 = ScenarioSpec(model="M3", covariates="C2", coeffs={"gamma": 2.0}, n=120, seed=4)


def rep(i, splits=(), thresholds=(), failed=False):
    r = RepResult(rep=i, seed=i)
    if failed:
        r.error = "RuntimeError: boom"
        return r
    r.split_any = bool(splits)
    r.root_var = splits[0] if splits else None
    r.split_var_list = tuple(splits)
    r.first_split_point = thresholds[0] if thresholds else None
    r.n_terminal = len(splits) + 1
    r.mse = 0.1 * (i + 1)
    return r


def hand_report(per_rep, spec=M3):
    return ReplicationReport(spec=spec, config=FitConfig(), reps=len(per_rep), per_rep=per_rep)


def test_hand_built_report():
    report = hand_report([
        rep(0, splits=(0,), thresholds=(0.1,)),
        rep(1, splits=(2, 0), thresholds=(0.5, -0.2)),
        rep(2, splits=(1,), thresholds=(0.3,)),
        rep(3),
    ])
    m = aggregate_metrics(report, targets={0})
    assert m["power_root"] == 0.25
    assert m["power_any_node"] == 0.5
    assert m["power_any_split"] == 0.75
    assert m["power_all"] == 0.5
    assert m["mean_n_terminal"] == 2.0
    # only rep 0 has its root on the target
    assert m["n_first_split"] == 1 and m["median_first_split_point"] == pytest.approx(0.1)
    assert m["pct_non_target_splits"] == pytest.approx(2 / 4)
    assert m["mean_mse"] == pytest.approx(0.25)
    assert m["targets"] == "X1"


def test_targets_default_to_scenario():
    report = hand_report([rep(0, splits=(0,), thresholds=(0.0,))])
    assert aggregate_metrics(report)["targets"] == "X1"
    assert aggregate_metrics(hand_report([rep(0)], spec=M1))["targets"] == ""


def test_all_single_node():
    m = aggregate_metrics(hand_report([rep(i) for i in range(5)], spec=M1))
    assert m["type_I_error"] == 0.0
    assert m["power_root"] == m["power_any_node"] == m["power_all"] == 0.0
    assert m["mean_n_terminal"] == 1.0 and m["median_n_terminal"] == 1.0
    assert m["n_first_split"] == 0 and math.isnan(m["median_first_split_point"])


def test_failed_reps_leave_denominators():
    report = hand_report([rep(0, splits=(0,), thresholds=(0.0,)), rep(1, failed=True)])
    m = aggregate_metrics(report)
    assert m["n_failed"] == 1
    assert m["power_root"] == 1.0


def test_power_ordering():
    rng = np.random.default_rng(0)
    per_rep = []
    for i in range(40):
        k = rng.integers(0, 4)
        splits = tuple(rng.choice(5, size=k, replace=False))
        per_rep.append(rep(i, splits=splits, thresholds=tuple(rng.normal(size=k))))
    m = aggregate_metrics(hand_report(per_rep), targets={0, 1})
    assert m["power_all"] <= m["power_any_node"] <= m["power_any_split"]
    assert m["power_root"] <= m["power_any_node"]


def test_replications_are_deterministic():
    a = run_replications(M3, reps=2, workers=1)
    b = run_replications(M3, reps=2, workers=1)
    assert [(r.seed, r.split_var_list, r.mse) for r in a.per_rep] == [
        (r.seed, r.split_var_list, r.mse) for r in b.per_rep
    ]
    assert a.per_rep[0].seed != a.per_rep[1].seed


def test_worker_count_does_not_matter():
    one = run_replications(M3, reps=4, workers=1)
    two = run_replications(M3, reps=4, workers=2)
    assert aggregate_metrics(one) == aggregate_metrics(two)


def test_metrics_csv_round_trip(tmp_path):
    report = run_replications(M1, reps=2, workers=1)
    m = aggregate_metrics(report)
    path = tmp_path / "m.csv"
    write_metrics_csv([m], path)
    (row,) = read_metrics_csv(path)
    assert tuple(row) == METRIC_COLUMNS
    assert float(row["type_I_error"]) == m["type_I_error"]
    assert float(row["mean_mse"]) == m["mean_mse"]
    assert row["model"] == "M1" and row["mode"] == "single"
    write_per_rep_csv(report, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("rep,seed,failed")


def test_metrics_csv_schema_check(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValidationError):
        read_metrics_csv(path)
    m = aggregate_metrics(hand_report([rep(0)], spec=M1))
    m["schema_version"] = 99
    write_metrics_csv([m], path)
    with pytest.raises(ValidationError, match="schema"):
        read_metrics_csv(path)


def test_too_many_failures(monkeypatch):
    original = bench.run_one

    def flaky(spec, config, r):
        if r == 1:
            return rep(r, failed=True)
        return original(spec, config, r)

    monkeypatch.setattr(bench, "run_one", flaky)
    with pytest.raises(ReplicationFailure) as info:
        run_replications(M1, reps=3, workers=1)
    assert info.value.report.n_failed == 1
    assert "boom" in str(info.value)
