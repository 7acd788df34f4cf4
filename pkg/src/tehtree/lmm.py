"""Random-intercept linear mixed model for matched-pair differences.

The model for pair ``l`` whose control member belongs to group ``g(l)`` is::

    delta_l = beta0 + beta1 * x_l + b_g(l) + eps_l,
    b_g ~ N(0, tau2),  eps_l ~ N(0, sigma2)

It is fit by restricted maximum likelihood.  Writing ``lam = tau2 / sigma2``
the marginal covariance is ``sigma2 * H(lam)`` with ``H = I + lam * Z Z'``,
which is block compound-symmetric, so ``H^-1`` has the closed form
``I - sum_g lam / (1 + lam n_g) 1_g 1_g'`` per group.  For fixed ``lam`` the
fixed effects come from generalized least squares and ``sigma2`` from the
REML residual variance; the profiled REML criterion is then maximized over
``lam`` in one dimension on a log scale.

:func:`fit_random_intercept_batch` fits many models that share ``delta`` and
the grouping but differ in the regressor column.  All quantities reduce to
per-group sums, so a batch of ``K`` regressors costs ``O(g K)`` per criterion
evaluation.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from scipy import stats

from .exceptions import DegenerateRegressorError, ValidationError

LAMBDA_MIN = 1e-8
LAMBDA_MAX = 1e8
GRID_SIZE = 64
GOLDEN_RTOL = 1e-8

_LOG_2PI = np.log(2.0 * np.pi)
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0  # 1/golden ratio


@dataclass(frozen=True)
class LmmFit:
    beta0: float
    beta1: float
    sigma2: float
    tau2: float
    se_beta1: float
    t_stat: float
    df: int
    p_value: float
    loglik: float


@dataclass(frozen=True)
class LmmBatch:
    """Column-wise results of :func:`fit_random_intercept_batch`.

    ``degenerate[k]`` marks regressors with zero variance; their p-value is 1
    and their estimates are NaN.
    """

    beta0: np.ndarray
    beta1: np.ndarray
    sigma2: np.ndarray
    tau2: np.ndarray
    se_beta1: np.ndarray
    t_stat: np.ndarray
    df: int
    p_value: np.ndarray
    loglik: np.ndarray
    degenerate: np.ndarray

    def __getitem__(self, k):
        if self.degenerate[k]:
            raise DegenerateRegressorError(f"regressor {k} has zero variance")
        return LmmFit(
            beta0=float(self.beta0[k]),
            beta1=float(self.beta1[k]),
            sigma2=float(self.sigma2[k]),
            tau2=float(self.tau2[k]),
            se_beta1=float(self.se_beta1[k]),
            t_stat=float(self.t_stat[k]),
            df=self.df,
            p_value=float(self.p_value[k]),
            loglik=float(self.loglik[k]),
        )


def degrees_of_freedom(n, n_groups):
    """Inner-level df ``n - g - 1``; ``n - 2`` when every group is a singleton."""
    if n_groups >= n:
        return n - 2
    return max(n - n_groups - 1, 1)


def p_value_from_t(t_stat, df):
    """Two-sided p-value of a central t statistic."""
    return 2.0 * stats.t.sf(np.abs(t_stat), df)


class _GroupedMoments:
    """Per-group sums needed by the profiled criterion, for centered data."""

    def __init__(self, x, delta, group):
        n, k = x.shape
        codes, inv = np.unique(group, return_inverse=True)
        g = codes.shape[0]
        self.n, self.k, self.g = n, k, g
        self.x_mean = x.mean(axis=0)
        self.y_mean = delta.mean()
        xc = x - self.x_mean
        yc = delta - self.y_mean
        onehot = sps.csr_matrix((np.ones(n), (inv, np.arange(n))), shape=(g, n))
        self.ng = np.bincount(inv, minlength=g).astype(float)
        self.sy = onehot @ yc
        self.sx = np.asarray(onehot @ xc)  # (g, k)
        self.sxx = np.einsum("ij,ij->j", xc, xc)
        self.sxy = xc.T @ yc
        self.syy = float(yc @ yc)
        # products reused at every lambda
        self.ng2 = self.ng * self.ng
        self.ng_sy = self.ng * self.sy
        self.sy2 = self.sy * self.sy
        self.ng_sx = self.ng[:, None] * self.sx
        self.sx2 = self.sx * self.sx
        self.sx_sy = self.sx * self.sy[:, None]

    def _weights(self, lam):
        lam = np.asarray(lam, dtype=float)
        return lam[..., None] / (1.0 + lam[..., None] * self.ng)

    def _weighted_sums(self, w, cols):
        """Weighted group sums entering ``X' H^-1 X``, ``X' H^-1 y`` and ``y' H^-1 y``.

        ``w`` has shape (g,) for a shared weight vector or (K, g) for one per column.
        """
        if w.ndim == 1:
            shape = cols.shape
            s_nn = np.full(shape, w @ self.ng2)
            s_ny = np.full(shape, w @ self.ng_sy)
            s_yy = np.full(shape, w @ self.sy2)
            s_nx = w @ self.ng_sx[:, cols]
            s_xx = w @ self.sx2[:, cols]
            s_xy = w @ self.sx_sy[:, cols]
        else:
            s_nn = w @ self.ng2
            s_ny = w @ self.ng_sy
            s_yy = w @ self.sy2
            s_nx = np.einsum("kg,gk->k", w, self.ng_sx[:, cols])
            s_xx = np.einsum("kg,gk->k", w, self.sx2[:, cols])
            s_xy = np.einsum("kg,gk->k", w, self.sx_sy[:, cols])
        return s_nn, s_nx, s_xx, s_ny, s_xy, s_yy

    def _system(self, lam, cols):
        lam = np.asarray(lam, dtype=float)
        s_nn, s_nx, s_xx, s_ny, s_xy, s_yy = self._weighted_sums(self._weights(lam), cols)
        a00 = self.n - s_nn
        a01 = -s_nx
        a11 = self.sxx[cols] - s_xx
        b0 = -s_ny
        b1 = self.sxy[cols] - s_xy
        c = self.syy - s_yy
        det = a00 * a11 - a01 * a01
        beta0c = (a11 * b0 - a01 * b1) / det
        beta1 = (a00 * b1 - a01 * b0) / det
        rss = np.maximum(c - (beta0c * b0 + beta1 * b1), 0.0)
        return a00, a01, a11, det, beta0c, beta1, rss

    def evaluate(self, lam, cols=None):
        """Profiled REML quantities at ``lam``.

        ``lam`` is either a scalar (shared by every column) or one value per
        column in ``cols``.  Returns a dict of arrays of shape ``(len(cols),)``.
        """
        cols = np.arange(self.k) if cols is None else cols
        lam = np.asarray(lam, dtype=float)
        n = self.n
        a00, _, _, det, beta0c, beta1, rss = self._system(lam, cols)
        logdet_h = np.sum(np.log1p(lam[..., None] * self.ng), axis=-1)
        sigma2 = rss / (n - 2)
        with np.errstate(divide="ignore"):
            loglik = -0.5 * (
                (n - 2) * (_LOG_2PI + np.log(sigma2) + 1.0) + logdet_h + np.log(det)
            )
        return {
            "loglik": loglik + np.zeros(cols.shape),
            "beta0c": beta0c,
            "beta1": beta1,
            "sigma2": sigma2,
            "var_beta1": sigma2 * a00 / det,
            "rss": rss,
        }

    def score(self, lam, cols):
        """Derivative of the profiled criterion with respect to ``log(lam)``, per column."""
        lam = np.asarray(lam, dtype=float)
        a00, a01, a11, det, beta0c, beta1, rss = self._system(lam, cols)
        # dw/dlam for w = lam / (1 + lam n_g)
        dw = 1.0 / (1.0 + lam[..., None] * self.ng) ** 2
        d_nn, d_nx, d_xx, d_ny, d_xy, d_yy = self._weighted_sums(dw, cols)
        # derivatives of A = X'H^-1X, b = X'H^-1y, c = y'H^-1y are minus the dw-weighted sums
        d_rss = -d_yy + 2.0 * (beta0c * d_ny + beta1 * d_xy) - (
            beta0c * beta0c * d_nn + 2.0 * beta0c * beta1 * d_nx + beta1 * beta1 * d_xx
        )
        d_logdet_a = -(a11 * d_nn - 2.0 * a01 * d_nx + a00 * d_xx) / det
        d_logdet_h = np.sum(self.ng / (1.0 + lam[..., None] * self.ng), axis=-1)
        d_loglik = -0.5 * ((self.n - 2) * d_rss / rss + d_logdet_h + d_logdet_a)
        return lam * d_loglik


def _golden_maximize(fun, lo, hi, rtol):
    """Vectorized golden-section search for the maximum of ``fun`` on ``[lo, hi]``.

    Returns the better of the two final interior points and its value.
    """
    a, b = lo.astype(float), hi.astype(float)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fun(c), fun(d)
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    width = float(np.max((b - a) / scale)) if a.size else 0.0
    n_iter = 0 if width <= rtol else int(np.ceil(np.log(rtol / width) / np.log(_INVPHI)))
    for _ in range(n_iter):
        left = fc >= fd  # maximum bracketed by [a, d]
        a, b = np.where(left, a, c), np.where(left, d, b)
        probe = np.where(left, b - _INVPHI * (b - a), a + _INVPHI * (b - a))
        fp = fun(probe)
        c, d, fc, fd = (
            np.where(left, probe, d),
            np.where(left, c, probe),
            np.where(left, fp, fd),
            np.where(left, fc, fp),
        )
    take_c = fc >= fd
    return np.where(take_c, c, d), np.where(take_c, fc, fd)


def _check_inputs(x, delta, group):
    delta = np.asarray(delta, dtype=float).ravel()
    group = np.asarray(group).ravel()
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    n = delta.shape[0]
    if x.shape[0] != n or group.shape[0] != n:
        raise ValidationError(
            f"length mismatch: len(delta)={n}, rows(x)={x.shape[0]}, len(group)={group.shape[0]}"
        )
    if n < 4:
        raise ValidationError(f"need at least 4 observations, got {n}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(delta))):
        raise ValidationError("x and delta must be finite")
    return x, delta, group


def fit_random_intercept_batch(x, delta, group):
    """Fit the random-intercept model once per column of ``x``.

    Parameters
    ----------
    x : array of shape (n,) or (n, K)
        Candidate regressors; each column is a separate model.
    delta : array of shape (n,)
        Response shared by all models.
    group : array of shape (n,)
        Grouping factor of the random intercept (any hashable labels).

    Returns
    -------
    LmmBatch
    """
    x, delta, group = _check_inputs(x, delta, group)
    n, k = x.shape
    degenerate = np.ptp(x, axis=0) == 0
    if degenerate.any():
        # any non-constant placeholder keeps the algebra finite; results are masked below
        x = x.copy()
        x[:, degenerate] = np.arange(n, dtype=float)[:, None]
    mom = _GroupedMoments(x, delta, group)
    df = degrees_of_freedom(n, mom.g)

    constant_response = np.ptp(delta) == 0
    ols = mom.evaluate(0.0)
    perfect = ols["rss"] <= 1e-24 * max(mom.syy, np.finfo(float).tiny)

    if mom.g >= n or constant_response:
        # singleton groups leave lam unidentified (criterion is flat); report tau2 = 0
        lam = np.zeros(k)
    else:
        lam = _maximize_lambda(mom)

    res = mom.evaluate(lam)
    beta1 = res["beta1"]
    sigma2 = res["sigma2"]
    se = np.sqrt(res["var_beta1"])
    loglik = res["loglik"]

    beta0c = res["beta0c"]
    exact = perfect | constant_response
    if np.any(exact):
        # zero residual variance: the slope is either exactly zero or infinitely significant
        ols_beta1 = np.zeros(k) if constant_response else ols["beta1"]
        ols_beta0c = np.zeros(k) if constant_response else ols["beta0c"]
        beta1 = np.where(exact, ols_beta1, beta1)
        beta0c = np.where(exact, ols_beta0c, beta0c)
        lam = np.where(exact, 0.0, lam)
        sigma2 = np.where(exact, 0.0, sigma2)
        se = np.where(exact, 0.0, se)
        loglik = np.where(exact, np.inf, loglik)

    safe_se = np.where(se > 0, se, 1.0)
    t_stat = np.where(se > 0, beta1 / safe_se, np.where(beta1 == 0, 0.0, np.copysign(np.inf, beta1)))
    p_value = np.clip(p_value_from_t(t_stat, df), 0.0, 1.0)

    beta0 = mom.y_mean + beta0c - beta1 * mom.x_mean
    tau2 = lam * sigma2

    nan = np.nan
    return LmmBatch(
        beta0=np.where(degenerate, nan, beta0),
        beta1=np.where(degenerate, nan, beta1),
        sigma2=np.where(degenerate, nan, sigma2),
        tau2=np.where(degenerate, nan, tau2),
        se_beta1=np.where(degenerate, nan, se),
        t_stat=np.where(degenerate, 0.0, t_stat),
        df=df,
        p_value=np.where(degenerate, 1.0, p_value),
        loglik=np.where(degenerate, nan, loglik),
        degenerate=degenerate,
    )


def _polish(mom, cols, u_star, f_star, lo, hi, half_width=1e-4, n_iter=60):
    """Refine ``log(lam)`` by bisection on the analytic score around the golden-section point.

    On the flat top of the criterion, comparisons of function values stop
    discriminating at about the square root of machine precision; the sign of
    the score stays informative much closer to the root.  Columns without a
    sign change in the small bracket keep the golden-section point.
    """
    a = np.maximum(u_star - half_width, lo)
    b = np.minimum(u_star + half_width, hi)
    with np.errstate(all="ignore"):
        sa = mom.score(np.exp(a), cols)
        sb = mom.score(np.exp(b), cols)
        ok = (sa > 0) & (sb < 0)
        if not np.any(ok):
            return u_star, f_star
        for _ in range(n_iter):
            mid = 0.5 * (a + b)
            up = mom.score(np.exp(mid), cols) > 0
            a = np.where(ok & up, mid, a)
            b = np.where(ok & ~up, mid, b)
        u_new = 0.5 * (a + b)
        f_new = mom.evaluate(np.exp(u_new), cols)["loglik"]
    better = ok & (f_new >= f_star - 1e-12 * np.maximum(1.0, np.abs(f_star)))
    return np.where(better, u_new, u_star), np.where(better, f_new, f_star)


def _maximize_lambda(mom):
    """Per-column maximizer of the profiled REML criterion over lam >= 0.

    A 64-point log grid on [1e-8, 1e8] locates the basin, golden-section
    search on log(lam) refines it inside the neighbouring grid cells, a short
    bisection on the score polishes the result, and the boundary lam = 0 is
    compared explicitly.
    """
    k = mom.k
    cols = np.arange(k)
    log_grid = np.linspace(np.log(LAMBDA_MIN), np.log(LAMBDA_MAX), GRID_SIZE)
    grid_vals = np.empty((GRID_SIZE, k))
    for i, u in enumerate(log_grid):
        grid_vals[i] = mom.evaluate(np.exp(u), cols)["loglik"]
    best = np.argmax(grid_vals, axis=0)
    lo = log_grid[np.maximum(best - 1, 0)]
    hi = log_grid[np.minimum(best + 1, GRID_SIZE - 1)]

    def objective(u):
        return mom.evaluate(np.exp(u), cols)["loglik"]

    u_star, f_star = _golden_maximize(objective, lo, hi, GOLDEN_RTOL)
    f_grid = grid_vals[best, cols]
    use_grid = f_grid > f_star
    u_star = np.where(use_grid, log_grid[best], u_star)
    f_star = np.where(use_grid, f_grid, f_star)
    u_star, f_star = _polish(mom, cols, u_star, f_star, lo, hi)

    f_zero = mom.evaluate(0.0, cols)["loglik"]
    tie = 1e-12 * np.maximum(1.0, np.abs(f_star))
    return np.where(f_zero >= f_star - tie, 0.0, np.exp(u_star))


def fit_random_intercept(x, delta, group):
    """Fit ``delta ~ beta0 + beta1 * x + (1 | group)`` by REML.

    Raises
    ------
    DegenerateRegressorError
        If ``x`` is constant.
    ValidationError
        On length mismatch, fewer than 4 observations or non-finite input.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size and np.ptp(x) == 0:
        raise DegenerateRegressorError("regressor has zero variance")
    return fit_random_intercept_batch(x, delta, group)[0]

