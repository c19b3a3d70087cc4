"""Multivariate outlier screening with the reweighted MCD estimator.

Stage one is FAST-MCD (random elemental starts refined by concentration
steps). Stage two reweights with a chi-square cut-off and judges the final
robust distances against scaled Beta (retained rows) and F (discarded rows)
reference laws at the 97.5% level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.linalg import solve_triangular

from .data import ContinuousDataset
from .errors import DegenerateReweighting, EmptyResult, ExactFit, PreconditionError, SingularSubset

N_SUBSETS = 500
N_WARM_STEPS = 2
N_FINALISTS = 10
MAX_STEPS = 100
MAX_RETRIES = 50
LEVEL = 0.975


@dataclass(frozen=True)
class McdEstimate:
    location: np.ndarray
    scatter: np.ndarray
    support: np.ndarray
    determinant: float
    raw_scatter: np.ndarray
    logdet_history: tuple = ()


@dataclass(frozen=True)
class OutlierReport:
    weights: np.ndarray
    distances: np.ndarray
    cutoff_w1: float
    cutoff_w0: float
    outlier_indices: np.ndarray
    w: int
    location: np.ndarray
    scatter: np.ndarray

    @property
    def flagged(self) -> np.ndarray:
        mask = np.zeros(len(self.weights), dtype=bool)
        mask[self.outlier_indices] = True
        return mask


def default_h(n: int, D: int) -> int:
    return (n + D + 1) // 2


def consistency_factor(fraction: float, D: int) -> float:
    """Factor making the covariance of the central ``fraction`` of a normal sample consistent."""
    q = stats.chi2.ppf(fraction, D)
    return fraction / stats.chi2.cdf(q, D + 2)


def _fit(X: np.ndarray, rows: np.ndarray):
    sub = X[rows]
    mu = sub.mean(axis=0)
    xc = sub - mu
    cov = xc.T @ xc / len(rows)
    return mu, cov


def _chol(cov: np.ndarray):
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return None
    d = np.diag(L)
    if d.min() <= 1e-12 * max(d.max(), 1e-300):
        return None
    return L


def mahalanobis_sq(X: np.ndarray, mu: np.ndarray, cov: np.ndarray) -> np.ndarray:
    L = _chol(cov)
    if L is None:
        raise SingularSubset("scatter matrix is singular")
    # one D x D triangular inverse, then a single matmul over all rows
    Linv = solve_triangular(L, np.eye(len(L)), lower=True)
    z = (X - mu) @ Linv.T
    return np.einsum("ij,ij->i", z, z)


def _logdet(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def c_step(X: np.ndarray, rows: np.ndarray, h: int, fit=None):
    """One concentration step: keep the h rows closest to the fit of ``rows``.

    ``fit`` may pass the already known ``(mu, cov)`` of ``rows``. Returns
    ``(new_rows, logdet_new, mu_new, cov_new)``; raises SingularSubset if
    either fit is singular.
    """
    mu, cov = fit if fit is not None else _fit(X, rows)
    d = mahalanobis_sq(X, mu, cov)
    new = np.sort(np.argpartition(d, h - 1)[:h])
    mu2, cov2 = _fit(X, new)
    L = _chol(cov2)
    if L is None:
        raise SingularSubset("concentrated subset is singular")
    return new, _logdet(L), mu2, cov2


def _elemental_start(X, rng, D):
    n = len(X)
    for _ in range(MAX_RETRIES):
        rows = rng.choice(n, D + 1, replace=False)
        _, cov = _fit(X, rows)
        if _chol(cov) is not None:
            return rows
    raise ExactFit(f"{MAX_RETRIES} consecutive singular elemental subsets; data lie on a subspace")


def fast_mcd(data, h: int | None = None, seed: int = 0) -> McdEstimate:
    """Minimum covariance determinant estimate via FAST-MCD.

    ``data`` may be a ContinuousDataset or an (n, D) array. The returned
    scatter carries the chi-square consistency factor for h/n.
    """
    X = np.asarray(data.values if isinstance(data, ContinuousDataset) else data, dtype=float)
    n, D = X.shape
    if n <= D + 1:
        raise PreconditionError(f"FAST-MCD needs n > D + 1 (n={n}, D={D})")
    h = default_h(n, D) if h is None else int(h)
    if not default_h(n, D) <= h < n:
        raise PreconditionError(f"h must lie in [{default_h(n, D)}, {n})")
    rng = np.random.default_rng(seed)

    starts = []
    for _ in range(N_SUBSETS):
        try:
            rows = _elemental_start(X, rng, D)
            logdet, fit = np.inf, None
            for _ in range(N_WARM_STEPS):
                rows, logdet, *fit = c_step(X, rows, h, fit)
        except SingularSubset:
            continue
        starts.append((logdet, rows, fit))
    if not starts:
        raise ExactFit("every start collapsed onto a singular subset")
    starts.sort(key=lambda s: s[0])

    best = None
    for logdet, rows, fit in starts[:N_FINALISTS]:
        history = [logdet]
        try:
            for _ in range(MAX_STEPS):
                new, ld, *new_fit = c_step(X, rows, h, fit)
                history.append(ld)
                converged = np.array_equal(new, rows) or ld >= logdet - 1e-12
                if ld < logdet:
                    rows, logdet, fit = new, ld, new_fit
                if converged:
                    break
        except SingularSubset:
            continue
        if best is None or logdet < best[0]:
            best = (logdet, rows, tuple(history))
    if best is None:
        raise ExactFit("no non-singular finalist")
    logdet, rows, history = best
    mu, cov = _fit(X, rows)
    scatter = cov * consistency_factor(h / n, D)
    return McdEstimate(mu, scatter, rows, float(np.exp(logdet)), cov, history)


def rmcd_outliers(data, seed: int = 0, h: int | None = None) -> OutlierReport:
    """Flag multivariate outliers with the reweighted MCD and Beta/F cut-offs."""
    X = np.asarray(data.values if isinstance(data, ContinuousDataset) else data, dtype=float)
    n, D = X.shape
    if n <= D + 1:
        raise PreconditionError(f"RMCD needs n > D + 1 (n={n}, D={D})")
    est = fast_mcd(X, h, seed)
    d1 = mahalanobis_sq(X, est.location, est.scatter)
    weights = (d1 <= stats.chi2.ppf(LEVEL, D)).astype(int)
    w = int(weights.sum())
    if w <= D + 1:
        raise DegenerateReweighting(f"only {w} rows retained for {D} variables")
    keep = weights.astype(bool)
    mu = X[keep].mean(axis=0)
    cov = np.cov(X[keep], rowvar=False, ddof=1) * consistency_factor(LEVEL, D)
    d2 = mahalanobis_sq(X, mu, cov)
    cut_w1 = (w - 1) ** 2 / w * stats.beta.ppf(LEVEL, D / 2, (w - D - 1) / 2)
    cut_w0 = (w + 1) / w * (w - 1) * D / (w - D) * stats.f.ppf(LEVEL, D, w - D)
    flag = np.where(keep, d2 > cut_w1, d2 > cut_w0)
    return OutlierReport(
        weights, d2, float(cut_w1), float(cut_w0), np.flatnonzero(flag), w, mu, cov,
    )


def remove_outliers(data: ContinuousDataset, report: OutlierReport) -> tuple[ContinuousDataset, np.ndarray]:
    """Drop flagged rows; also return ``provenance[new_row] = old_row``."""
    if len(report.weights) != data.n:
        raise ValueError("report was produced for a different dataset")
    keep = ~report.flagged
    if not keep.any():
        raise EmptyResult("every row was flagged as an outlier")
    provenance = np.flatnonzero(keep)
    if keep.all():
        return data, provenance
    return data.take_rows(provenance), provenance
