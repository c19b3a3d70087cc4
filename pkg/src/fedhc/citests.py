"""Conditional independence tests and partial-correlation machinery.

Every test reports the natural log of its p-value so that extremely
significant associations (p far below the smallest double) still compare
correctly against ``log(alpha)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import mpmath
import numpy as np
from scipy import special, stats
from scipy.linalg import solve_triangular
from scipy.stats import rankdata

from .data import CategoricalDataset, ContinuousDataset
from .errors import DegenerateTable, InsufficientSample, SingularConditioningSet

SPEARMAN_FACTOR = 1.029563
R_CLAMP = 1e-12
PIVOT_TOL = 1e-12
_LOG2 = math.log(2.0)
# below this scipy's log-survival functions lose accuracy or underflow to -inf
_DEEP_TAIL = -700.0


@dataclass(frozen=True)
class CorrelationMatrix:
    R: np.ndarray
    kind: str = "pearson"

    def __post_init__(self):
        R = np.array(self.R, dtype=float, copy=True)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError("correlation matrix must be square")
        if not np.allclose(R, R.T, atol=1e-12):
            raise ValueError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(R), 1.0, atol=1e-12):
            raise ValueError("correlation matrix must have a unit diagonal")
        if self.kind not in ("pearson", "spearman"):
            raise ValueError(f"unknown correlation kind {self.kind!r}")
        R.setflags(write=False)
        object.__setattr__(self, "R", R)

    @property
    def D(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True)
class TestResult:
    statistic: float
    dof: int
    log_pvalue: float

    __test__ = False  # not a pytest class

    @property
    def pvalue(self) -> float:
        return math.exp(self.log_pvalue)


# -- tail probabilities ---------------------------------------------------------


def log_norm_sf2(x):
    """log of the two-sided standard-normal tail P(|N| > x), x >= 0."""
    # log_ndtr switches to an asymptotic series in the far tail, so this stays
    # accurate where norm.sf underflows
    return _LOG2 + special.log_ndtr(-np.asarray(x, dtype=float))


def log_t_sf2(x: float, dof: int) -> float:
    """log of the two-sided Student-t tail P(|T| > x)."""
    v = _LOG2 + float(stats.t.logsf(x, dof))
    if not math.isfinite(v) or v < _DEEP_TAIL:
        mx = mpmath.mpf(x)
        z = dof / (dof + mx * mx)
        v = float(mpmath.log(mpmath.betainc(dof / 2.0, 0.5, 0, z, regularized=True)))
    return min(v, 0.0)


def log_chi2_sf(x: float, dof: int) -> float:
    """log P(chi2_dof > x), accurate far into the upper tail."""
    if x <= 0:
        return 0.0
    v = float(stats.chi2.logsf(x, dof))
    if not math.isfinite(v) or v < _DEEP_TAIL:
        q = mpmath.gammainc(dof / 2.0, mpmath.mpf(x) / 2, mpmath.inf, regularized=True)
        v = float(mpmath.log(q))
    return min(v, 0.0)


# -- correlations -------------------------------------------------------------------


def correlation_matrix(data: ContinuousDataset, kind: str = "pearson") -> CorrelationMatrix:
    """Pearson correlation of the columns, or of their (average-tie) ranks."""
    x = data.values
    if kind == "spearman":
        x = rankdata(x, axis=0, method="average")
    elif kind != "pearson":
        raise ValueError(f"unknown correlation kind {kind!r}")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc
    sd = np.sqrt(np.diag(cov))
    R = cov / np.outer(sd, sd)
    R = np.clip((R + R.T) / 2, -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    return CorrelationMatrix(R, kind)


def _clamp(r):
    return np.clip(r, -1.0 + R_CLAMP, 1.0 - R_CLAMP)


def partial_correlation(R, i: int, j: int, Z: Sequence[int] = ()) -> float:
    """Partial correlation of variables i and j given the set Z.

    Uses the closed form for a single conditioner and the inverse of the
    (i, j, Z) sub-correlation matrix otherwise. The result is clamped away
    from +-1.
    """
    R = R.R if isinstance(R, CorrelationMatrix) else np.asarray(R, dtype=float)
    Z = list(Z)
    if i == j or i in Z or j in Z:
        raise ValueError("i, j must be distinct and outside Z")
    if not Z:
        return float(_clamp(R[i, j]))
    if len(Z) == 1:
        z = Z[0]
        den = (1.0 - R[i, z] ** 2) * (1.0 - R[j, z] ** 2)
        if den < PIVOT_TOL:
            raise SingularConditioningSet(f"variable collinear with conditioner {z}")
        return float(_clamp((R[i, j] - R[i, z] * R[j, z]) / math.sqrt(den)))
    idx = [i, j] + Z
    sub = R[np.ix_(idx, idx)]
    A = _spd_inverse(sub)
    return float(_clamp(-A[0, 1] / math.sqrt(A[0, 0] * A[1, 1])))


def _cholesky(sub: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(sub)
    except np.linalg.LinAlgError:
        raise SingularConditioningSet("conditioning matrix is not positive definite") from None
    if np.min(np.diag(L)) ** 2 < PIVOT_TOL:
        raise SingularConditioningSet("collinear conditioning variables")
    return L


def _spd_inverse(sub: np.ndarray) -> np.ndarray:
    L = _cholesky(sub)
    Linv = solve_triangular(L, np.eye(len(sub)), lower=True)
    return Linv.T @ Linv


def partial_correlations(R: np.ndarray, target: int, cands: Sequence[int], Z: Sequence[int]) -> np.ndarray:
    """Vectorised partial correlations of ``target`` with each candidate given Z.

    Entries are NaN where the candidate (or the target) is numerically
    collinear with Z. Raises SingularConditioningSet if Z itself is singular.
    """
    cands = np.asarray(cands, dtype=int)
    if not len(Z):
        return _clamp(R[target, cands])
    Z = np.asarray(Z, dtype=int)
    RZ = R[Z]
    L = _cholesky(RZ[:, Z])
    cols = np.empty(len(cands) + 1, dtype=int)
    cols[0] = target
    cols[1:] = cands
    W = solve_triangular(L, RZ[:, cols], lower=True, check_finite=False)
    wt, wc = W[:, 0], W[:, 1:]
    var_t = 1.0 - wt @ wt
    var_c = 1.0 - np.einsum("ij,ij->j", wc, wc)
    cov = R[target, cands] - wt @ wc
    with np.errstate(invalid="ignore", divide="ignore"):
        r = cov / np.sqrt(var_t * var_c)
    bad = (var_c < PIVOT_TOL) | (var_t < PIVOT_TOL)
    r = _clamp(r)
    r[bad] = np.nan
    return r


# -- continuous tests ------------------------------------------------------------------


def fisher_z_statistic(r, dof):
    return np.abs(np.arctanh(_clamp(r))) * np.sqrt(dof)


def fisher_z_test(r: float, n: int, nz: int, null_ref: str = "normal") -> TestResult:
    """Fisher z test of a (partial) Pearson correlation."""
    dof = n - nz - 3
    if dof < 1:
        raise InsufficientSample(f"n - |Z| - 3 = {dof} < 1")
    stat = float(fisher_z_statistic(r, dof))
    return TestResult(stat, dof, _z_log_pvalue(stat, dof, null_ref))


def _z_log_pvalue(stat: float, dof: int, null_ref: str) -> float:
    if null_ref == "normal":
        return min(float(log_norm_sf2(stat)), 0.0)
    if null_ref == "student_t":
        return log_t_sf2(stat, dof)
    raise ValueError(f"unknown null reference {null_ref!r}")


def z_log_pvalues(stat: np.ndarray, dof: int, null_ref: str = "normal") -> np.ndarray:
    """Vectorised counterpart of the Fisher-z tail; NaN statistics map to log p = 0."""
    stat = np.asarray(stat, dtype=float)
    out = np.zeros_like(stat)
    ok = np.isfinite(stat)
    if null_ref == "normal":
        out[ok] = np.minimum(log_norm_sf2(stat[ok]), 0.0)
    else:
        out[ok] = [_z_log_pvalue(float(s), dof, null_ref) for s in stat[ok]]
    return out


def spearman_test(r_rank: float, n: int, nz: int, null_ref: str = "normal") -> TestResult:
    """Fisher z test applied to a rank correlation, statistic scaled by 1.029563."""
    dof = n - nz - 3
    if dof < 1:
        raise InsufficientSample(f"n - |Z| - 3 = {dof} < 1")
    stat = float(fisher_z_statistic(r_rank, dof)) * SPEARMAN_FACTOR
    return TestResult(stat, dof, _z_log_pvalue(stat, dof, null_ref))


# -- categorical tests ------------------------------------------------------------------


def _strata_tables(data: CategoricalDataset, i: int, j: int, Z: Sequence[int]) -> np.ndarray:
    """Observed counts, shape (observed Z-configurations, |X_i|, |X_j|)."""
    Z = list(Z)
    if i == j or i in Z or j in Z:
        raise ValueError("i, j must be distinct and outside Z")
    codes = data.codes
    ri, rj = data.levels[i], data.levels[j]
    if Z:
        strata = np.ravel_multi_index(tuple(codes[:, z] for z in Z), tuple(data.levels[z] for z in Z))
        _, strata = np.unique(strata, return_inverse=True)
        L = int(strata.max()) + 1
    else:
        strata = np.zeros(data.n, dtype=np.int64)
        L = 1
    flat = (strata * ri + codes[:, i]) * rj + codes[:, j]
    return np.bincount(flat, minlength=L * ri * rj).reshape(L, ri, rj).astype(float)


def _expected(O: np.ndarray) -> np.ndarray:
    n_l = O.sum(axis=(1, 2), keepdims=True)
    return O.sum(axis=2, keepdims=True) * O.sum(axis=1, keepdims=True) / n_l


def g2_test(data: CategoricalDataset, i: int, j: int, Z: Sequence[int] = ()) -> TestResult:
    """Likelihood-ratio G^2 test of X_i independent of X_j given Z."""
    O = _strata_tables(data, i, j, Z)
    E = _expected(O)
    pos = O > 0
    g2 = 2.0 * float(np.sum(O[pos] * np.log(O[pos] / E[pos])))
    g2 = max(g2, 0.0)
    dof = (data.levels[i] - 1) * (data.levels[j] - 1) * O.shape[0]
    return TestResult(g2, dof, log_chi2_sf(g2, dof))


def x2_test(data: CategoricalDataset, i: int, j: int, Z: Sequence[int] = ()) -> TestResult:
    """Pearson X^2 test; cells with zero expected count are skipped."""
    O = _strata_tables(data, i, j, Z)
    E = _expected(O)
    keep = E > 0
    if not keep.any():
        raise DegenerateTable("every cell has zero expected count")
    x2 = float(np.sum((O[keep] - E[keep]) ** 2 / E[keep]))
    dof = (data.levels[i] - 1) * (data.levels[j] - 1) * O.shape[0] - int((~keep).sum())
    dof = max(dof, 1)
    return TestResult(x2, dof, log_chi2_sf(x2, dof))


CATEGORICAL_TESTS = {"g2": g2_test, "x2": x2_test}
