import numpy as np
import pytest
from sklearn.base import clone

from tehtree.dataset import TrialDataset
from tehtree.exceptions import ValidationError
from tehtree.pipeline import FitConfig, TEHTreeRegressor, fit_tehtree
from tehtree.simgen import ScenarioSpec, generate_dataset
from tehtree.tree import tree_to_json


def m3(n, seed, gamma=1.0, rho=0.0):
    return generate_dataset(ScenarioSpec(model="M3", covariates="C2", coeffs={"gamma": gamma}, n=n, rho=rho, seed=seed))[0]


def test_null_outcome_gives_single_node():
    single = 0
    for seed in range(100):
        r = np.random.default_rng(seed)
        n = 160
        data = TrialDataset(y=r.normal(size=n), z=np.r_[np.ones(n // 2), np.zeros(n // 2)], x=r.normal(size=(n, 4)))
        tree, _ = fit_tehtree(data, FitConfig(seed=seed))
        single += tree.n_terminal == 1
    assert single >= 95


def test_large_step_effect_found_near_zero():
    tree, diag = fit_tehtree(m3(2000, seed=1), FitConfig(seed=1))
    assert tree.root.var == 0
    assert abs(tree.root.threshold) < 0.25
    left, right = tree.root.left, tree.root.right
    assert left.leaves()[0].effect < right.leaves()[-1].effect


def test_diagnostics():
    data = m3(300, seed=2)
    tree, diag = fit_tehtree(data, FitConfig(seed=2))
    assert diag.n_pairs == data.n_treated == 150
    assert diag.n_holdout == 0 and diag.n_train == 300
    assert diag.weights.sum() == pytest.approx(1.0)
    q = diag.distance_quantiles
    assert 0 <= q["min"] <= q["median"] <= q["max"]
    assert 0 < diag.n_reused_controls < 150
    assert diag.overall_effect == pytest.approx(np.mean(diag.extra["pairs"].delta))


def test_double_mode_uses_training_pairs_only():
    data = m3(400, seed=3, gamma=2.0)
    tree, diag = fit_tehtree(data, FitConfig(seed=3, mode="double", train_frac=0.75))
    assert diag.n_pairs == 150 and diag.n_holdout == 100
    split = diag.extra["split"]
    assert np.all(np.isin(diag.extra["pairs"].pairs.ravel(), split.train))
    assert all(leaf.effect is not None or leaf.flagged for leaf in tree.root.leaves())


def test_holdout_outcomes_do_not_shape_the_tree():
    data = m3(400, seed=4, gamma=2.0)
    config = FitConfig(seed=4, mode="double")
    tree, diag = fit_tehtree(data, config)
    y = np.array(data.y)
    y[diag.extra["split"].holdout] += np.random.default_rng(0).normal(scale=10, size=diag.n_holdout)
    tree2, _ = fit_tehtree(TrialDataset(y, data.z, data.x, data.col_names), config)
    assert [(n.var, n.threshold) for n in tree.root.internal_nodes()] == [
        (n.var, n.threshold) for n in tree2.root.internal_nodes()
    ]


def test_single_mode_ignores_train_frac():
    data = m3(200, seed=5)
    a, _ = fit_tehtree(data, FitConfig(seed=5, train_frac=0.5))
    b, _ = fit_tehtree(data, FitConfig(seed=5, train_frac=0.9))
    assert tree_to_json(a) == tree_to_json(b)


def test_stage_annotation():
    r = np.random.default_rng(0)
    data = TrialDataset(y=r.normal(size=30), z=np.r_[np.ones(20), np.zeros(10)], x=r.normal(size=(30, 2)))
    with pytest.raises(ValidationError) as info:
        fit_tehtree(data, FitConfig(seed=0))
    assert info.value.stage == "prognostic"
    assert str(info.value).startswith("[prognostic]")


@pytest.mark.parametrize("kwargs", [{"alpha": 1.5}, {"mode": "triple"}, {"min_node": 0}, {"folds": 1},
                                    {"mode": "double", "train_frac": 1.0}])
def test_config_validation(kwargs):
    with pytest.raises(ValidationError):
        FitConfig(**kwargs)


def test_regressor_interface():
    data = m3(400, seed=6, gamma=2.0)
    est = TEHTreeRegressor(random_state=6)
    assert clone(est).get_params() == est.get_params()
    est.fit(data.x, data.y, data.z)
    pred = est.predict(data.x)
    assert pred.shape == (400,)
    assert est.n_features_in_ == 5
    assert est.apply(data.x).max() == est.tree_.n_terminal - 1
    tree, _ = fit_tehtree(data, FitConfig(seed=6))
    np.testing.assert_array_equal(pred, tree.predict(data.x))
