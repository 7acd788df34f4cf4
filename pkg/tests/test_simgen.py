import numpy as np
import pytest

from tehtree.exceptions import ValidationError
from tehtree.simgen import (
    MODEL_COEFFS,
    PRESETS,
    ScenarioSpec,
    equicorrelation,
    generate_dataset,
    heterogeneity_vars,
    load_config,
    outcome_mean,
    parse_coeffs,
    parse_scenario_code,
    prognostic_mean,
    true_cate,
)


def spec(model, covariates="C2", n=200, rho=0.0, seed=0, **coeffs):
    return ScenarioSpec(model=model, covariates=covariates, coeffs=coeffs, n=n, rho=rho, seed=seed)


def row(*first, p=5):
    x = np.zeros((1, p))
    x[0, : len(first)] = first
    return x


def test_null_model_effect_is_constant():
    x = np.random.default_rng(0).normal(size=(50, 5))
    np.testing.assert_array_equal(true_cate(spec("M1"), x), 0.8)


def test_step_effect():
    s = spec("M3", gamma=1.0)
    assert true_cate(s, row(0.7))[0] == pytest.approx(1.8)
    assert true_cate(s, row(-0.3))[0] == pytest.approx(0.8)


def test_sine_effect_at_zero():
    assert true_cate(spec("M7", gamma=2.0, eta=1.5), row(0.0))[0] == pytest.approx(0.8)


def test_two_step_preset():
    s = spec("M8", **parse_coeffs("P9iii", "M8"))
    assert true_cate(s, row(0.1, -0.2))[0] == pytest.approx(3.8)


@pytest.mark.parametrize(
    "model, coeffs, x, expected",
    [
        ("M4", {"gamma": 2.0}, row(0.5), 1.8),
        ("M5", {"gamma1": 1.0, "gamma2": -1.0}, row(0.5), 0.3),
        ("M6", {"gamma": 3.0}, row(0.2), 3.8),
        ("M6", {"gamma": 3.0}, row(0.6), 0.8),
        ("M9", {"gamma1": 1.0, "gamma2": 1.0}, row(-0.5, 0.5), 1.3),
        ("M10", {"gamma": 1.0}, row(0.1, 0.2, 0.3, 0.4, 0.5), 2.3),
    ],
)
def test_effect_formulas(model, coeffs, x, expected):
    assert true_cate(spec(model, **coeffs), x)[0] == pytest.approx(expected)


def test_mixed_covariate_interaction_uses_x1_and_x6():
    s = spec("M11", covariates="CM", gamma1=1.0, gamma2=2.0)
    x = row(0.5, 0, 0, 0, 0, 1, p=10)
    assert true_cate(s, x)[0] == pytest.approx(0.8 + 0.5 + 2.0)
    assert heterogeneity_vars(s) == {0, 5}
    assert s.col_kind == ("continuous",) * 5 + ("binary",) * 5
    data, _ = generate_dataset(s)
    assert set(np.unique(data.x[:, 5])) <= {0.0, 1.0}
    spec("M11", covariates="C3", gamma1=1.0, gamma2=1.0)
    with pytest.raises(ValidationError):
        spec("M11", covariates="C2", gamma1=1.0, gamma2=1.0)


def test_zero_interaction_reduces_to_null():
    x = np.random.default_rng(1).normal(size=(20, 5))
    np.testing.assert_allclose(true_cate(spec("M4", gamma=0.0), x), 0.8)
    for model, names in MODEL_COEFFS.items():
        covs = "C3" if model == "M11" else "C2"
        zeros = {k: (0.0,) * 5 if k == "phi" else 0.0 for k in names}
        if model == "M7":
            zeros["eta"] = 1.5
        s = spec(model, covariates=covs, **zeros)
        xm = np.random.default_rng(2).normal(size=(20, s.p))
        np.testing.assert_allclose(true_cate(s, xm), 0.8)


def test_thresholded_prognostic_terms():
    s = spec("M2", phi=(3.0, 0, 0, 0, 0))
    x = row(0.5)
    assert prognostic_mean(s, x)[0] == pytest.approx(0.8 + 0.5 + 3.0)
    assert heterogeneity_vars(s) == set()


def test_covariate_moments():
    data, _ = generate_dataset(spec("M1", n=2000, rho=0.4, seed=3))
    corr = np.corrcoef(data.x, rowvar=False)
    off = corr[~np.eye(5, dtype=bool)]
    assert np.all(np.abs(off - 0.4) < 0.07)
    resid = data.y - outcome_mean(spec("M1", n=2000, rho=0.4, seed=3), data.x, data.z)
    assert abs(resid.var() - 1.0) < 0.1


def test_binary_covariates():
    data, _ = generate_dataset(spec("M1", covariates="C1", n=1000, seed=2))
    assert data.col_kind == ("binary",) * 5
    assert np.all(np.abs(data.x.mean(axis=0) - 0.5) < 0.07)


def test_balanced_and_reproducible():
    s = spec("M3", gamma=1.0, n=100, seed=8)
    a, cate_a = generate_dataset(s)
    b, cate_b = generate_dataset(s)
    assert a.n_treated == 50
    assert np.array_equal(a.y, b.y) and np.array_equal(a.x, b.x) and np.array_equal(a.z, b.z)
    np.testing.assert_array_equal(cate_a, true_cate(s, a.x))
    c, _ = generate_dataset(s.with_seed(9))
    assert not np.array_equal(a.y, c.y)


def test_mean_consistency():
    s = spec("M9", gamma1=1.0, gamma2=-1.0, seed=4)
    data, cate = generate_dataset(s)
    mu = outcome_mean(s, data.x, data.z)
    np.testing.assert_allclose(mu, prognostic_mean(s, data.x) + data.z * cate)


def test_validation():
    with pytest.raises(ValidationError, match="eta"):
        spec("M7", gamma=2.0)
    with pytest.raises(ValidationError):
        spec("M1", n=101)
    with pytest.raises(ValidationError):
        spec("M1", rho=1.0)
    with pytest.raises(ValidationError):
        spec("M1", rho=-0.3)
    with pytest.raises(ValidationError):
        spec("M3", gamma=1.0, eta=2.0)
    with pytest.raises(ValidationError):
        spec("M12")
    with pytest.raises(ValidationError):
        true_cate(spec("M1"), np.zeros((3, 4)))


def test_presets():
    assert parse_coeffs("P8iii", "M7") == {"gamma": 2.0, "eta": 1.5}
    assert parse_coeffs("P8(iii)", "M7") == {"gamma": 2.0, "eta": 1.5}
    assert parse_coeffs("P5ii", "M4") == {"gamma": 1.0}
    assert parse_coeffs("P5", "M4") == {"gamma": 2.0}
    assert parse_coeffs("P1", "M2") == {"phi": (3.0, 0.0, 0.0, 0.0, 0.0)}
    assert parse_coeffs("P8iii,gamma=1", "M7") == {"gamma": 1.0, "eta": 1.5}
    assert parse_coeffs("phi=[1,1,0,0,0]", "M2") == {"phi": (1.0, 1.0, 0.0, 0.0, 0.0)}
    assert parse_coeffs("gamma=2, eta=1.5", "M7") == {"gamma": 2.0, "eta": 1.5}
    with pytest.raises(ValidationError, match="belongs to"):
        parse_coeffs("P8", "M3")
    with pytest.raises(ValidationError):
        parse_coeffs("P4iv", "M3")
    with pytest.raises(ValidationError):
        parse_coeffs("gamma=abc", "M3")
    for code, (model, variants) in PRESETS.items():
        for v in variants:
            spec(model, covariates="C3" if model == "M11" else "C2", **v)


def test_scenario_codes():
    assert parse_scenario_code("(M3)(C2)(P4)") == ("M3", "C2", "P4")
    assert parse_scenario_code("(M7)(C3)(P8(ii))") == ("M7", "C3", "P8(ii)")
    assert parse_scenario_code("M1 C1") == ("M1", "C1", "")
    with pytest.raises(ValidationError):
        parse_scenario_code("(C2)(P4)")


def test_config_file(tmp_path):
    f = tmp_path / "s.cfg"
    f.write_text("# scenario\nscenario = (M3)(C2)(P4)\nn = 500  # subjects\nrho=0.2\n", encoding="utf-8")
    assert load_config(f) == {"scenario": "(M3)(C2)(P4)", "n": "500", "rho": "0.2"}
    f.write_text("nonsense\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_config(f)


def test_equicorrelation():
    m = equicorrelation(3, 0.4)
    assert np.allclose(np.diag(m), 1.0) and np.isclose(m[0, 2], 0.4)
