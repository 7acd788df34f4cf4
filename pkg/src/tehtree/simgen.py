"""Simulated randomized trials with known conditional treatment effects.

Outcomes are ``Normal(mu, 1)`` with::

    mu = 0.8 + 0.8 Z + X beta + Z * modifier(X) [+ sum_m phi_m I(X_m > 0) for M2]

where ``beta = (1.0, 0.8, 0.6, 0.4, 0.2, 0, ...)`` and ``modifier`` depends on
the model code:

====  ==========================================================
M1    0
M2    0 (prognostic part gains thresholded main effects ``phi``)
M3    gamma I(X1 > 0)
M4    gamma X1
M5    gamma1 X1 + gamma2 I(X1 > 0)
M6    gamma I(-0.5 < X1 < 0.5)
M7    gamma sin(eta X1)
M8    gamma1 I(X1 > 0) + gamma2 I(X2 > 0)
M9    gamma1 X1 + gamma2 I(X2 > 0)
M10   gamma' X  (scalar gamma applies to every covariate)
M11   gamma1 X1 + gamma2 X6
====  ==========================================================

so the true effect at ``x`` is ``0.8 + modifier(x)``.  Covariate sets: C1 = 5
binary, C2 = 5 continuous, C3 = 10 continuous, CM = 5 continuous followed by
5 binary.  Continuous covariates are equicorrelated standard normals; binary
covariates are independent Bernoulli(0.5).  Exactly ``n / 2`` subjects are
treated.
"""

import re
from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import STREAM_SIMULATE, make_rng
from .dataset import TrialDataset
from .exceptions import ValidationError

INTERCEPT = 0.8
THETA = 0.8
BETA = (1.0, 0.8, 0.6, 0.4, 0.2)

# (n_continuous, n_binary)
COVARIATE_SETS = {
    "C1": (0, 5),
    "C2": (5, 0),
    "C3": (10, 0),
    "CM": (5, 5),
}

MODEL_COEFFS = {
    "M1": (),
    "M2": ("phi",),
    "M3": ("gamma",),
    "M4": ("gamma",),
    "M5": ("gamma1", "gamma2"),
    "M6": ("gamma",),
    "M7": ("gamma", "eta"),
    "M8": ("gamma1", "gamma2"),
    "M9": ("gamma1", "gamma2"),
    "M10": ("gamma",),
    "M11": ("gamma1", "gamma2"),
}

# preset -> (model, [variants]); a bare code means variant (i)
PRESETS = {
    "P1": ("M2", [{"phi": (3.0, 0.0, 0.0, 0.0, 0.0)}]),
    "P2": ("M2", [{"phi": (1.0, 0.0, 0.0, 0.0, 0.0)}]),
    "P3": ("M2", [{"phi": (1.0, 1.0, 0.0, 0.0, 0.0)}]),
    "P4": ("M3", [{"gamma": 1.0}]),
    "P5": ("M4", [{"gamma": 2.0}, {"gamma": 1.0}]),
    "P6": ("M5", [
        {"gamma1": 1.0, "gamma2": 1.0},
        {"gamma1": 1.0, "gamma2": -1.0},
        {"gamma1": -1.0, "gamma2": 1.0},
        {"gamma1": -1.0, "gamma2": -1.0},
    ]),
    "P7": ("M6", [{"gamma": 3.0}, {"gamma": 2.0}, {"gamma": 1.0}]),
    "P8": ("M7", [
        {"gamma": 2.0, "eta": 2.0},
        {"gamma": 1.0, "eta": 2.0},
        {"gamma": 2.0, "eta": 1.5},
        {"gamma": 1.0, "eta": 1.5},
    ]),
    "P9": ("M8", [
        {"gamma1": 3.0, "gamma2": 3.0},
        {"gamma1": 1.0, "gamma2": 1.0},
        {"gamma1": 3.0, "gamma2": -3.0},
        {"gamma1": 1.0, "gamma2": -3.0},
    ]),
    "P10": ("M9", [
        {"gamma1": 1.0, "gamma2": 1.0},
        {"gamma1": 1.0, "gamma2": -1.0},
        {"gamma1": -1.0, "gamma2": 1.0},
        {"gamma1": -1.0, "gamma2": -1.0},
    ]),
    "P11": ("M10", [{"gamma": 1.0}, {"gamma": 2.0}, {"gamma": 6.0}]),
}

_ROMAN = {"i": 0, "ii": 1, "iii": 2, "iv": 3}


@dataclass(frozen=True)
class ScenarioSpec:
    model: str = "M1"
    covariates: str = "C2"
    coeffs: dict = field(default_factory=dict)
    n: int = 200
    rho: float = 0.0
    seed: int = 0

    def __post_init__(self):
        model = str(self.model).upper()
        cov = str(self.covariates).upper()
        if model not in MODEL_COEFFS:
            raise ValidationError(f"unknown model {self.model!r}; expected one of {sorted(MODEL_COEFFS)}")
        if cov not in COVARIATE_SETS:
            raise ValidationError(f"unknown covariate set {self.covariates!r}; expected one of {sorted(COVARIATE_SETS)}")
        coeffs = {}
        for key, value in dict(self.coeffs).items():
            if key not in MODEL_COEFFS[model]:
                raise ValidationError(f"model {model} does not take coefficient {key!r}; it takes {MODEL_COEFFS[model]}")
            coeffs[key] = tuple(float(v) for v in value) if np.ndim(value) else float(value)
        missing = [k for k in MODEL_COEFFS[model] if k not in coeffs]
        if missing:
            raise ValidationError(f"model {model} requires coefficient(s) {missing}")
        n = int(self.n)
        if n < 4 or n % 2:
            raise ValidationError(f"n must be an even integer >= 4, got {self.n}")
        p = sum(COVARIATE_SETS[cov])
        if model in ("M8", "M9") and p < 2:
            raise ValidationError(f"{model} needs at least 2 covariates")
        if model == "M11" and p < 6:
            raise ValidationError("M11 needs at least 6 covariates (uses X1 and X6); use C3 or CM")
        if model == "M2" and len(np.atleast_1d(coeffs["phi"])) > p:
            raise ValidationError(f"phi has more entries than the {p} covariates")
        if model == "M10" and np.ndim(coeffs["gamma"]) and len(coeffs["gamma"]) != p:
            raise ValidationError(f"M10 gamma vector must have {p} entries")
        n_cont = COVARIATE_SETS[cov][0]
        rho = float(self.rho)
        if n_cont > 1 and not (-1.0 / (n_cont - 1) < rho < 1.0):
            raise ValidationError(
                f"rho={rho} does not give a positive-definite equicorrelation matrix for {n_cont} covariates"
            )
        object.__setattr__(self, "model", model)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def p(self):
        return sum(COVARIATE_SETS[self.covariates])

    @property
    def col_kind(self):
        n_cont, n_bin = COVARIATE_SETS[self.covariates]
        return ("continuous",) * n_cont + ("binary",) * n_bin

    def with_seed(self, seed):
        return replace(self, seed=seed)

    def coeff_string(self):
        parts = []
        for key in MODEL_COEFFS[self.model]:
            value = self.coeffs[key]
            if isinstance(value, tuple):
                parts.append(f"{key}=[{','.join(repr(v) for v in value)}]")
            else:
                parts.append(f"{key}={value!r}")
        return ",".join(parts)

    def code(self):
        return f"({self.model})({self.covariates})" + (f"[{self.coeff_string()}]" if self.coeffs else "")


def _split_top_level(text):
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "[(":
            depth += 1
        elif ch in "])":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def parse_coeffs(text, model):
    """Parse a coefficient string for ``model``.

    Accepts preset codes (``P4``, ``P5ii``, ``P8(iii)``), ``key=value`` pairs
    (``gamma=2,eta=1.5``), bracketed vectors (``phi=[0.5,1,0,0,0]``), or a
    preset followed by overrides (``P8iii,gamma=1``).
    """
    model = str(model).upper()
    coeffs = {}
    if text is None or str(text).strip() == "":
        return coeffs
    for item in _split_top_level(str(text)):
        m = re.fullmatch(r"\(?(P\d+)\)?\s*\(?(i{1,3}|iv)?\)?", item, flags=re.IGNORECASE)
        if m and "=" not in item:
            code = m.group(1).upper()
            if code not in PRESETS:
                raise ValidationError(f"unknown coefficient preset {code!r}")
            preset_model, variants = PRESETS[code]
            if preset_model != model:
                raise ValidationError(f"preset {code} belongs to {preset_model}, not {model}")
            variant = _ROMAN[(m.group(2) or "i").lower()]
            if variant >= len(variants):
                raise ValidationError(f"preset {code} has {len(variants)} variant(s)")
            coeffs.update(variants[variant])
            continue
        if "=" not in item:
            raise ValidationError(f"cannot parse coefficient item {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        key = key.lower()
        try:
            if value.startswith("["):
                coeffs[key] = tuple(float(v) for v in value.strip("[]").split(",") if v.strip())
            else:
                coeffs[key] = float(value)
        except ValueError:
            raise ValidationError(f"coefficient {key!r} has non-numeric value {value!r}") from None
    return coeffs


def parse_scenario_code(code):
    """Split a code such as ``(M3)(C2)(P4)`` into ``(model, covariates, coeffs-text)``."""
    tokens = re.findall(r"\(?\s*([A-Za-z]+\d*(?:\s*\((?:i{1,3}|iv)\)|(?:i{1,3}|iv))?)\s*\)?", code)
    model = covs = None
    coeffs = []
    for tok in tokens:
        t = tok.replace(" ", "")
        up = t.upper()
        if re.fullmatch(r"M\d+", up):
            model = up
        elif up in COVARIATE_SETS:
            covs = up
        elif re.match(r"P\d+", up):
            coeffs.append(t)
        else:
            raise ValidationError(f"unrecognized scenario token {tok!r} in {code!r}")
    if model is None:
        raise ValidationError(f"scenario code {code!r} has no model")
    return model, covs, ",".join(coeffs)


def equicorrelation(m, rho):
    return (1.0 - rho) * np.eye(m) + rho * np.ones((m, m))


def _phi_vector(spec):
    phi = np.zeros(spec.p)
    vals = np.atleast_1d(spec.coeffs["phi"])
    phi[: vals.size] = vals
    return phi


def effect_modifier(spec, x):
    """Treatment-by-covariate part of ``mu`` (zero for M1 and M2)."""
    c = spec.coeffs
    x1 = x[:, 0]
    model = spec.model
    if model in ("M1", "M2"):
        return np.zeros(x.shape[0])
    if model == "M3":
        return c["gamma"] * (x1 > 0)
    if model == "M4":
        return c["gamma"] * x1
    if model == "M5":
        return c["gamma1"] * x1 + c["gamma2"] * (x1 > 0)
    if model == "M6":
        return c["gamma"] * ((x1 > -0.5) & (x1 < 0.5))
    if model == "M7":
        return c["gamma"] * np.sin(c["eta"] * x1)
    if model == "M8":
        return c["gamma1"] * (x1 > 0) + c["gamma2"] * (x[:, 1] > 0)
    if model == "M9":
        return c["gamma1"] * x1 + c["gamma2"] * (x[:, 1] > 0)
    if model == "M10":
        gamma = np.broadcast_to(np.asarray(c["gamma"], dtype=float), (x.shape[1],))
        return x @ gamma
    if model == "M11":
        return c["gamma1"] * x1 + c["gamma2"] * x[:, 5]
    raise AssertionError(model)


def true_cate(spec, x):
    """Analytic conditional average treatment effect for each row of ``x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != spec.p:
        raise ValidationError(f"x must have {spec.p} columns for covariate set {spec.covariates}")
    return THETA + effect_modifier(spec, x)


def prognostic_mean(spec, x):
    """Control-arm mean ``E(Y | Z = 0, X = x)``, the true prognostic score."""
    x = np.asarray(x, dtype=float)
    beta = np.zeros(spec.p)
    beta[: min(5, spec.p)] = BETA[: min(5, spec.p)]
    mu0 = INTERCEPT + x @ beta
    if spec.model == "M2":
        mu0 = mu0 + (x > 0).astype(float) @ _phi_vector(spec)
    return mu0


def outcome_mean(spec, x, z):
    z = np.asarray(z, dtype=float)
    return prognostic_mean(spec, x) + z * true_cate(spec, x)


def heterogeneity_vars(spec):
    """Covariate indices with a nonzero treatment interaction."""
    c = spec.coeffs
    model = spec.model
    nz = lambda v: bool(np.any(np.asarray(v) != 0))  # noqa: E731
    if model in ("M3", "M4", "M6"):
        return {0} if nz(c["gamma"]) else set()
    if model == "M7":
        return {0} if nz(c["gamma"]) and nz(c["eta"]) else set()
    if model == "M5":
        return {0} if nz(c["gamma1"]) or nz(c["gamma2"]) else set()
    if model in ("M8", "M9"):
        return {j for j, g in ((0, c["gamma1"]), (1, c["gamma2"])) if nz(g)}
    if model == "M10":
        gamma = np.broadcast_to(np.asarray(c["gamma"], dtype=float), (spec.p,))
        return set(np.flatnonzero(gamma != 0).tolist())
    if model == "M11":
        return {j for j, g in ((0, c["gamma1"]), (5, c["gamma2"])) if nz(g)}
    return set()


def generate_covariates(spec, n, rng):
    n_cont, n_bin = COVARIATE_SETS[spec.covariates]
    parts = []
    if n_cont:
        chol = np.linalg.cholesky(equicorrelation(n_cont, spec.rho))
        parts.append(rng.standard_normal((n, n_cont)) @ chol.T)
    if n_bin:
        parts.append(rng.integers(0, 2, size=(n, n_bin)).astype(float))
    return np.hstack(parts)


def generate_dataset(spec):
    """Draw one trial from ``spec``; returns ``(TrialDataset, true_cate)``."""
    rng = make_rng(spec.seed, STREAM_SIMULATE)
    n = spec.n
    x = generate_covariates(spec, n, rng)
    z = np.zeros(n, dtype=int)
    z[rng.permutation(n)[: n // 2]] = 1
    mu = outcome_mean(spec, x, z)
    y = mu + rng.standard_normal(n)
    data = TrialDataset(
        y=y,
        z=z,
        x=x,
        col_names=tuple(f"X{j + 1}" for j in range(spec.p)),
        col_kind=spec.col_kind,
    )
    return data, true_cate(spec, x)


def load_config(path):
    """Read a ``key = value`` scenario file (``#`` comments allowed).

    Keys: ``scenario`` (e.g. ``(M3)(C2)(P4)``), ``model``, ``covariates``,
    ``coeffs``, ``n``, ``rho``, ``seed``; explicit keys override the code.
    """
    raw = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            raw[key.lower()] = value
    return raw
