"""Numeric kernel: OLS with classical inference, Pearson correlation, and the
two-sample mean (Welch) and median (Mann-Whitney rank-sum) tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special, stats

from .errors import LengthMismatch, RankDeficient, TooFewObservations, ZeroVariance

RANK_TOL = 1e-10
MIN_RANKSUM_N = 8


@dataclass(frozen=True)
class RegressionResult:
    """One OLS fit.  Coefficient vectors start with the intercept when present."""

    names: tuple
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    r_squared: float
    residuals: np.ndarray
    fitted: np.ndarray
    n_obs: int
    k_regressors: int
    intercept: bool = True

    @property
    def dof(self) -> int:
        return self.n_obs - self.k_regressors - int(self.intercept)

    @property
    def slopes(self) -> np.ndarray:
        return self.coefficients[1:] if self.intercept else self.coefficients

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def t(self, name: str) -> float:
        return float(self.t_stats[self.names.index(name)])

    def se(self, name: str) -> float:
        return float(self.std_errors[self.names.index(name)])

    def p(self, name: str) -> float:
        return float(self.p_values[self.names.index(name)])

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "coefficients": self.coefficients.tolist(),
            "std_errors": self.std_errors.tolist(),
            "t_stats": self.t_stats.tolist(),
            "p_values": self.p_values.tolist(),
            "r_squared": self.r_squared,
            "n_obs": self.n_obs,
            "k_regressors": self.k_regressors,
            "intercept": self.intercept,
            "residuals": self.residuals.tolist(),
            "fitted": self.fitted.tolist(),
        }


def t_sf2(t, dof):
    """Two-sided Student-t tail probability P(|T| > |t|).

    Evaluated through the regularized incomplete beta function, which scipy
    computes by continued fraction.
    """
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = dof / (dof + t * t)
    p = special.betainc(0.5 * dof, 0.5, x)
    return np.where(np.isnan(t), np.nan, p)


def _design(y, X, intercept, names):
    y = np.asarray(y, dtype=float).ravel()
    if isinstance(X, np.ndarray) and X.ndim == 2:
        cols = [X[:, j] for j in range(X.shape[1])]
    elif isinstance(X, np.ndarray) and X.ndim == 1:
        cols = [X]
    else:
        cols = [np.asarray(c, dtype=float).ravel() for c in X]
    for j, c in enumerate(cols):
        if c.shape[0] != y.shape[0]:
            raise LengthMismatch(f"regressor {j} has {c.shape[0]} observations, y has {y.shape[0]}")
    k = len(cols)
    if names is None:
        names = [f"x{j + 1}" for j in range(k)]
    names = list(names)
    if len(names) != k:
        raise LengthMismatch(f"{len(names)} names for {k} regressors")
    if intercept:
        names = ["intercept"] + names
        cols = [np.ones_like(y)] + cols
    A = np.column_stack(cols) if cols else np.empty((y.shape[0], 0))
    return y, A, k, tuple(names)


def ols(y, X, intercept: bool = True, names=None) -> RegressionResult:
    """Least-squares fit of ``y`` on the regressor columns ``X``.

    ``X`` is a sequence of columns, or a 2-D array of shape (n, k).  The solve
    uses a column-pivoted Householder QR; the normal equations are never
    formed.  Standard errors are homoskedastic with n - k - 1 degrees of
    freedom (n - k without an intercept); p-values are two-sided Student-t.
    """
    y, A, k, names = _design(y, X, intercept, names)
    n, p = A.shape
    if n < p + 1:
        raise TooFewObservations(f"{n} observations for {p} coefficients; need at least {p + 1}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
        raise ValueError("ols inputs contain NaN or infinite values")

    Q, R, piv = linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RANK_TOL * max(diag[0], 1e-300) * max(n, p) ** 0.5)) if p else 0
    if rank < p:
        raise RankDeficient([names[j] for j in sorted(piv[rank:])])

    qty = Q.T @ y
    b_piv = linalg.solve_triangular(R, qty)
    beta = np.empty(p)
    beta[piv] = b_piv
    fitted = A @ beta
    resid = y - fitted
    dof = n - p
    ssr = float(resid @ resid)
    sigma2 = ssr / dof
    Rinv = linalg.solve_triangular(R, np.eye(p))
    se = np.empty(p)
    se[piv] = np.sqrt(sigma2 * np.sum(Rinv * Rinv, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = beta / se
    pval = t_sf2(tstat, dof)

    centre = y.mean() if intercept else 0.0
    dev = y - centre
    sst = float(dev @ dev)
    if sst > 0:
        # the explained-sum form keeps full precision when R^2 is tiny,
        # where 1 - SSR/SST would cancel
        r2 = 1.0 - ssr / sst
        if r2 < 0.5:
            expl = fitted - centre
            r2 = float(expl @ expl) / sst
    else:
        r2 = math.nan
    return RegressionResult(
        names=names, coefficients=beta, std_errors=se, t_stats=tstat, p_values=pval,
        r_squared=r2, residuals=resid, fitted=fitted, n_obs=n, k_regressors=k,
        intercept=intercept,
    )


def pearson(x, y) -> tuple[float, float]:
    """Pearson correlation and its two-sided p-value (t with n - 2 dof)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise LengthMismatch(f"lengths differ: {x.shape[0]} vs {y.shape[0]}")
    n = x.shape[0]
    if n < 3:
        raise TooFewObservations(f"pearson needs at least 3 observations, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ZeroVariance("pearson: a series has zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = min(1.0, max(-1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1 - r * r))
    return r, float(t_sf2(t, n - 2))


def welch_t(a, b) -> float:
    """Welch two-sample t statistic for mean(a) - mean(b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise TooFewObservations("welch_t needs at least 2 observations per sample")
    se2 = a.var(ddof=1) / a.size + b.var(ddof=1) / b.size
    if se2 == 0:
        raise ZeroVariance("welch_t: both samples are constant")
    return float((a.mean() - b.mean()) / math.sqrt(se2))


def welch_dof(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    return (va + vb) ** 2 / (va * va / (a.size - 1) + vb * vb / (b.size - 1))


def ranksum_z(a, b) -> float:
    """Mann-Whitney rank-sum z for sample a against sample b.

    Ties get average ranks and the variance carries the tie correction.  A
    0.5 continuity correction is applied toward zero.  Negative z means a
    tends to lie below b.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = a.size, b.size
    if na < MIN_RANKSUM_N or nb < MIN_RANKSUM_N:
        raise TooFewObservations(
            f"rank-sum normal approximation needs {MIN_RANKSUM_N}+ per sample, got {na} and {nb}")
    n = na + nb
    ranks = stats.rankdata(np.concatenate([a, b]))
    u = ranks[:na].sum() - na * (na + 1) / 2.0
    _, counts = np.unique(np.concatenate([a, b]), return_counts=True)
    ties = float(np.sum(counts.astype(float) ** 3 - counts))
    var = na * nb / 12.0 * ((n + 1) - ties / (n * (n - 1)))
    if var <= 0:
        raise ZeroVariance("ranksum_z: all observations are tied")
    diff = u - na * nb / 2.0
    diff = math.copysign(max(abs(diff) - 0.5, 0.0), diff)
    return float(diff / math.sqrt(var))


def normal_sf2(z) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


@dataclass(frozen=True)
class TwoSampleTest:
    t_value: float
    z_value: float
    mean_a: float
    mean_b: float
    median_a: float
    median_b: float
    n_a: int
    n_b: int
    t_p_value: float
    z_p_value: float


def two_sample_test(a, b) -> TwoSampleTest:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = welch_t(a, b)
    z = ranksum_z(a, b)
    return TwoSampleTest(
        t_value=t,
        z_value=z,
        mean_a=float(a.mean()), mean_b=float(b.mean()),
        median_a=float(np.median(a)), median_b=float(np.median(b)),
        n_a=int(a.size), n_b=int(b.size),
        t_p_value=float(t_sf2(t, welch_dof(a, b))),
        z_p_value=normal_sf2(z),
    )


def mean_t(x) -> float:
    """t statistic of the sample mean against zero."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise TooFewObservations("mean_t needs at least 2 observations")
    sd = x.std(ddof=1)
    if sd == 0:
        raise ZeroVariance("mean_t: constant sample")
    return float(x.mean() / (sd / math.sqrt(x.size)))


def stars(p: float) -> str:
    if p is None or not np.isfinite(p):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""
