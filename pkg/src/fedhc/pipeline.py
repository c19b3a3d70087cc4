"""End-to-end learning: optional outlier removal, skeleton, then score search."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .citests import CorrelationMatrix
from .data import CategoricalDataset, ContinuousDataset, Dag, EdgeConstraints
from .robust import OutlierReport, remove_outliers, rmcd_outliers
from .search import SEARCHES, ScoreSpec, SearchConfig, LearnedBn
from .skeleton import SKELETONS, SkeletonConfig, SkeletonResult

# user-facing score labels -> internal names
SCORE_ALIASES = {
    "bic-g": "bic_g",
    "loglik-g": "loglik_g",
    "aic-g": "aic_g",
    "bic": "bic_cat",
    "loglik": "loglik_cat",
    "bdeu": "bdeu",
}
METHOD_TESTS = {"pearson": "pearson", "spearman": "spearman", "cat": "g2"}


@dataclass
class LearnResult:
    dag: Dag
    score: float
    skeleton: SkeletonResult
    search: LearnedBn
    names: tuple
    n_rows_used: int
    removed_rows: np.ndarray
    outliers: OutlierReport | None
    robust_seconds: float
    skeleton_seconds: float
    search_seconds: float
    total_seconds: float


def resolve_score(score: str | None, categorical: bool) -> ScoreSpec:
    if score is None:
        score = "bic" if categorical else "bic-g"
    name = SCORE_ALIASES.get(score, score)
    spec = ScoreSpec(name)
    if categorical != (name in ("bic_cat", "loglik_cat", "bdeu")):
        raise ValueError(f"score {score!r} does not fit {'categorical' if categorical else 'continuous'} data")
    return spec


def learn(
    data,
    algorithm: str = "fedhc",
    method: str | None = None,
    alpha: float = 0.05,
    robust: bool = False,
    restart: int = 10,
    score: str | None = None,
    constraints: EdgeConstraints | None = None,
    max_k: int = 3,
    seed: int = 0,
    search: str = "hc",
    R: CorrelationMatrix | None = None,
    test: str | None = None,
) -> LearnResult:
    """Learn a DAG from ``data`` with one of the hybrid algorithms.

    ``method`` defaults to ``"pearson"`` for continuous and ``"cat"`` for
    categorical data; ``test`` may override the categorical test (``"x2"``).
    A supplied correlation matrix ``R`` is reused for the skeleton phase and
    cannot be combined with ``robust``.
    """
    t0 = time.perf_counter()
    categorical = isinstance(data, CategoricalDataset)
    method = method or ("cat" if categorical else "pearson")
    if method not in METHOD_TESTS:
        raise ValueError(f"unknown method {method!r}")
    if categorical != (method == "cat"):
        raise ValueError(f"method {method!r} does not fit the dataset type")
    test = test or METHOD_TESTS[method]
    spec = resolve_score(score, categorical)
    if algorithm not in SKELETONS:
        raise ValueError(f"unknown algorithm {algorithm!r}")

    report = None
    removed = np.zeros(0, dtype=int)
    if robust:
        if categorical:
            raise ValueError("outlier removal needs continuous data")
        if R is not None:
            raise ValueError("a precomputed correlation matrix cannot be reused after outlier removal")
        report = rmcd_outliers(data, seed=seed)
        removed = report.outlier_indices
        data, _ = remove_outliers(data, report)
    t1 = time.perf_counter()

    skel_cfg = SkeletonConfig(alpha=alpha, max_k=max_k, test=test)
    sk = SKELETONS[algorithm](data, skel_cfg, R)
    t2 = time.perf_counter()

    search_cfg = SearchConfig(restarts=restart, seed=seed)
    bn = SEARCHES[search](sk.skeleton, data, spec, constraints, search_cfg)
    t3 = time.perf_counter()
    return LearnResult(
        bn.dag, bn.score, sk, bn, data.names, data.n, removed, report,
        t1 - t0, t2 - t1, t3 - t2, t3 - t0,
    )


__all__ = ["LearnResult", "learn", "resolve_score", "SCORE_ALIASES", "ContinuousDataset"]
