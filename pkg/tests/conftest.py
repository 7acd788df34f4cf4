import numpy as np
import pytest

from tehtree.matching import MatchedPairSet, _dense


def make_pairs(x, delta, group=None):
    """Pair set built directly from covariates, differences and control labels."""
    delta = np.asarray(delta, dtype=float)
    n = delta.shape[0]
    x = np.asarray(x, dtype=float).reshape(n, -1)
    group = np.arange(n) if group is None else np.asarray(group)
    return MatchedPairSet(
        pairs=np.column_stack([np.arange(n), group]),
        delta=delta,
        group=_dense(group),
        x_treated=x,
        distance=np.zeros(n),
    )


def boxlunch_like(seed=11):
    """156 subjects, 4 covariates (age, female, bmi, baseline intake), constant effect."""
    rng = np.random.default_rng(seed)
    n = 156
    age = rng.uniform(25, 65, n).round()
    female = rng.integers(0, 2, n).astype(float)
    bmi = rng.normal(28, 4, n).round(1)
    intake = rng.normal(800, 150, n).round()
    z = np.zeros(n, dtype=int)
    z[rng.permutation(n)[: n // 2]] = 1
    y = 200 + 0.5 * intake - 3 * age + 40 * female + 5 * bmi - 60 * z + rng.normal(0, 80, n)
    return y, z, np.column_stack([age, female, bmi, intake])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
