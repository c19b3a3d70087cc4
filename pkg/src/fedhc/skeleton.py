"""Phase one of the hybrid learners: skeleton discovery with CI tests.

Three searches share one instrumented tester:

* ``fedhc_skeleton`` -- forward selection with early dropping per variable
  followed by the AND rule;
* ``mmhc_skeleton`` -- max-min parents/children search without the backward
  phase;
* ``pchc_skeleton`` -- PC-style edge removal with growing conditioning sets.

All significance decisions compare natural-log p-values with ``log(alpha)``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .citests import (
    CATEGORICAL_TESTS,
    SPEARMAN_FACTOR,
    PIVOT_TOL,
    CorrelationMatrix,
    _clamp,
    correlation_matrix,
    fisher_z_statistic,
    partial_correlations,
    z_log_pvalues,
)
from .data import CategoricalDataset, ContinuousDataset, Skeleton
from .errors import SingularConditioningSet


@dataclass(frozen=True)
class SkeletonConfig:
    alpha: float = 0.05
    max_k: int = 3
    fbed_runs: int = 0
    test: str = "pearson"
    with_backward: bool = False
    null_ref: str = "normal"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.max_k < 1:
            raise ValueError("max_k must be >= 1")
        if self.fbed_runs < 0:
            raise ValueError("fbed_runs must be >= 0")
        if self.test not in ("pearson", "spearman", "g2", "x2"):
            raise ValueError(f"unknown test {self.test!r}")

    @property
    def log_alpha(self) -> float:
        return math.log(self.alpha)


@dataclass
class SkeletonResult:
    skeleton: Skeleton
    n_tests: int
    initial_stats: np.ndarray
    initial_logp: np.ndarray
    runtime: float
    R: CorrelationMatrix | None = None
    selected: dict = field(default_factory=dict)


class CITester:
    """Runs batches of CI tests of one target against many candidates.

    ``n_tests`` counts one test per (target, candidate, conditioning set).
    Continuous tests read the shared correlation matrix only; categorical
    tests tabulate the data. Unconditional categorical results are cached
    (still counted) because every search asks for them from both ends.
    """

    def __init__(self, data, cfg: SkeletonConfig, R: CorrelationMatrix | None = None):
        self.data = data
        self.cfg = cfg
        self.n = data.n
        self.n_tests = 0
        self.continuous = cfg.test in ("pearson", "spearman")
        if self.continuous:
            if not isinstance(data, ContinuousDataset):
                raise TypeError(f"test {cfg.test!r} needs a continuous dataset")
            if R is None:
                R = correlation_matrix(data, cfg.test)
            elif R.kind != cfg.test:
                raise ValueError(f"supplied {R.kind} correlations for a {cfg.test} test")
            self.R = R
            self._r = R.R
            self._chain = None
            self._pos = np.full(data.D, -1, dtype=int)
        else:
            if not isinstance(data, CategoricalDataset):
                raise TypeError(f"test {cfg.test!r} needs a categorical dataset")
            self.R = None
            self._fn = CATEGORICAL_TESTS[cfg.test]
            self._marginal: dict = {}

    def batch(self, target: int, cands: Sequence[int], Z: Sequence[int] = ()) -> tuple[np.ndarray, np.ndarray]:
        """Statistics and log p-values of ``target`` vs each candidate given Z."""
        cands = list(cands)
        self.n_tests += len(cands)
        if not cands:
            return np.zeros(0), np.zeros(0)
        if self.continuous:
            return self._continuous(target, cands, list(Z))
        out = [self._categorical(target, c, tuple(Z)) for c in cands]
        return np.array([o[0] for o in out]), np.array([o[1] for o in out])

    def _continuous(self, target, cands, Z):
        dof = self.n - len(Z) - 3
        if dof < 1:
            return np.zeros(len(cands)), np.zeros(len(cands))
        r = self._chained(target, cands, Z)
        if r is None:
            try:
                r = partial_correlations(self._r, target, cands, Z)
            except SingularConditioningSet:
                return np.zeros(len(cands)), np.zeros(len(cands))
        stat = fisher_z_statistic(r, dof)
        if self.cfg.test == "spearman":
            stat = stat * SPEARMAN_FACTOR
        logp = z_log_pvalues(stat, dof, self.cfg.null_ref)
        stat = np.where(np.isfinite(stat), stat, 0.0)
        return stat, logp

    def _chained(self, target, cands, Z):
        """Partial correlations via the one-variable recursion, when Z extends the last call.

        Forward selection conditions on S, then on S plus the newly admitted
        variable, and so on. Keeping the partial correlation matrix of the
        target and the surviving candidates given the previous set turns each
        round into one rank-one update. Returns None when Z is not such an
        extension, so the caller falls back to the direct computation.
        """
        alive = np.empty(len(cands) + 1, dtype=int)
        alive[0] = target
        alive[1:] = cands
        if not Z:
            P = self._r[np.ix_(alive, alive)]
            self._chain = ((), alive, P)
            return _clamp(P[0, 1:])
        chain = self._chain
        if chain is None or len(chain[0]) != len(Z) - 1 or list(chain[0]) != Z[:-1]:
            return None
        key, idx, P = chain
        pos = self._pos
        pos[idx] = np.arange(len(idx))
        ps, pa = pos[Z[-1]], pos[alive]
        pos[idx] = -1
        if ps < 0 or (pa < 0).any():
            return None
        p = P[ps, pa]
        d = 1.0 - p * p
        with np.errstate(invalid="ignore", divide="ignore"):
            Q = (P[np.ix_(pa, pa)] - np.outer(p, p)) / np.sqrt(np.outer(d, d))
        bad = d < PIVOT_TOL
        Q[bad, :] = np.nan
        Q[:, bad] = np.nan
        self._chain = (tuple(Z), alive, Q)
        return _clamp(Q[0, 1:])

    def _categorical(self, target, c, Z):
        key = None
        if not Z:
            key = (min(target, c), max(target, c))
            if key in self._marginal:
                return self._marginal[key]
        res = self._fn(self.data, target, c, Z)
        out = (res.statistic, res.log_pvalue)
        if key is not None:
            self._marginal[key] = out
        return out


def _best(cands: np.ndarray, stat: np.ndarray, logp: np.ndarray) -> int:
    """Position of the strongest candidate: max |stat|, then min log p, then min index."""
    order = np.lexsort((cands, logp, -np.abs(stat)))
    return int(order[0])


def fbed_forward(target: int, tester: CITester, cfg: SkeletonConfig, initial=None):
    """Forward selection with early dropping for one target variable.

    Returns ``(selected, records)``: the selected variables in order of
    admission and, for every other variable, the ``(statistic, log_p)`` of
    the last test it took part in. ``initial`` receives the first-round
    (unconditional) statistics when given as a pair of arrays to fill.
    """
    la = cfg.log_alpha
    D = tester.data.D
    selected: list[int] = []
    records: dict[int, tuple[float, float]] = {}
    first = True

    def sweep(pool: list[int]) -> list[int]:
        nonlocal first
        dropped: list[int] = []
        cands = np.array(pool, dtype=int)
        while len(cands):
            stat, logp = tester.batch(target, cands, selected)
            for c, s, lp in zip(cands.tolist(), stat.tolist(), logp.tolist()):
                records[c] = (s, lp)
            if first and initial is not None:
                initial[0][target, cands] = stat
                initial[1][target, cands] = logp
            first = False
            sig = logp < la
            dropped.extend(cands[~sig].tolist())
            cands, stat, logp = cands[sig], stat[sig], logp[sig]
            if not len(cands):
                break
            k = _best(cands, stat, logp)
            selected.append(int(cands[k]))
            cands = np.delete(cands, k)
        return dropped

    dropped = sweep([v for v in range(D) if v != target])
    for _ in range(cfg.fbed_runs):
        before = len(selected)
        dropped = sweep(sorted(dropped))
        if len(selected) == before:
            break
    return selected, records


def fbed_backward(target: int, selected: Sequence[int], tester: CITester, cfg: SkeletonConfig) -> list[int]:
    """Drop the least significant member of S until every member is significant given the rest."""
    S = list(selected)
    la = cfg.log_alpha
    while S:
        worst, worst_lp = None, la
        for v in S:
            rest = [u for u in S if u != v]
            _, lp = tester.batch(target, [v], rest)
            if lp[0] >= worst_lp:
                worst, worst_lp = v, lp[0]
        if worst is None:
            break
        S.remove(worst)
    return S


def _and_rule(G: np.ndarray) -> Skeleton:
    return Skeleton(G & G.T)


def _symmetrise(m: np.ndarray) -> np.ndarray:
    # both directions of an unconditional test agree up to rounding; keep one
    return np.triu(m, 1) + np.triu(m, 1).T


def _prepare(data, cfg, R):
    t0 = time.perf_counter()
    tester = CITester(data, cfg, R)
    D = data.D
    initial = (np.zeros((D, D)), np.zeros((D, D)))
    return t0, tester, initial


# cap on the number of doubles held by one stacked block of partial correlations
_STACK_BUDGET = 4_000_000


def _stat_logp(tester: CITester, r: np.ndarray, dof: int):
    if dof < 1:
        return np.zeros_like(r), np.zeros_like(r)
    stat = fisher_z_statistic(r, dof)
    if tester.cfg.test == "spearman":
        stat = stat * SPEARMAN_FACTOR
    logp = z_log_pvalues(stat, dof, tester.cfg.null_ref)
    return np.where(np.isfinite(stat), stat, 0.0), logp


def fbed_forward_all(tester: CITester, cfg: SkeletonConfig, initial) -> list[list[int]]:
    """``fbed_forward`` for every target at once, from the correlation matrix.

    Round one of every target is read off R directly. Later rounds move in
    lock-step: each active target keeps the partial correlations among
    itself and its surviving candidates, stacked into one padded array and
    updated by the one-variable recursion. Selections, test counts and
    first-round statistics equal those of running ``fbed_forward`` per
    target with ``fbed_runs = 0``.
    """
    R, n, la = tester._r, tester.n, cfg.log_alpha
    D = len(R)
    off = ~np.eye(D, dtype=bool)
    stat0, logp0 = _stat_logp(tester, _clamp(R), n - 3)
    stat0[~off] = 0.0
    logp0[~off] = 0.0
    tester.n_tests += D * (D - 1)
    initial[0][:] = stat0
    initial[1][:] = logp0

    selected: list[list[int]] = [[] for _ in range(D)]
    rows = []
    for t in range(D):
        cands = np.flatnonzero(off[t] & (logp0[t] < la))
        if not len(cands):
            continue
        k = _best(cands, stat0[t, cands], logp0[t, cands])
        selected[t].append(int(cands[k]))
        if len(cands) > 1:
            rows.append((t, cands, k))
    if not rows:
        return selected

    m = 1 + max(len(c) for _, c, _ in rows)
    chunk = max(1, _STACK_BUDGET // (m * m))
    for start in range(0, len(rows), chunk):
        _forward_stack(tester, rows[start:start + chunk], m, selected)
    return selected


def _forward_stack(tester, rows, m, selected):
    R, n, la = tester._r, tester.n, tester.cfg.log_alpha
    T = len(rows)
    idx = np.zeros((T, m), dtype=int)
    valid = np.zeros((T, m), dtype=bool)
    alive = np.zeros((T, m), dtype=bool)
    s_pos = np.empty(T, dtype=int)
    targets = np.empty(T, dtype=int)
    for q, (t, cands, k) in enumerate(rows):
        idx[q, 0] = targets[q] = t
        idx[q, 1:len(cands) + 1] = cands
        valid[q, :len(cands) + 1] = True
        alive[q, 1:len(cands) + 1] = True
        alive[q, k + 1] = False
        s_pos[q] = k + 1
    P = R[idx[:, :, None], idx[:, None, :]]
    P[~(valid[:, :, None] & valid[:, None, :])] = 0.0

    size = 1
    while T:
        ar = np.arange(T)
        p = P[ar, s_pos]
        d = 1.0 - p * p
        with np.errstate(invalid="ignore", divide="ignore"):
            P = (P - p[:, :, None] * p[:, None, :]) / np.sqrt(d[:, :, None] * d[:, None, :])
        bad = d < PIVOT_TOL
        P[bad] = np.nan
        P.transpose(0, 2, 1)[bad] = np.nan

        tester.n_tests += int(alive.sum())
        stat, logp = _stat_logp(tester, _clamp(P[:, 0, :]), n - size - 3)
        alive &= logp < la
        masked = np.where(alive, stat, -np.inf)
        # candidates sit in ascending index order, so argmax breaks ties
        # towards the smallest index as _best does
        best = np.argmax(masked, axis=1)
        has = alive[ar, best]
        for q in np.flatnonzero(has):
            selected[targets[q]].append(int(idx[q, best[q]]))
        alive[ar, best] = False
        s_pos = best
        keep = has & alive.any(axis=1)
        P, idx, alive, s_pos, targets = P[keep], idx[keep], alive[keep], s_pos[keep], targets[keep]
        T = len(targets)
        size += 1


def fedhc_skeleton(data, cfg: SkeletonConfig = SkeletonConfig(), R: CorrelationMatrix | None = None) -> SkeletonResult:
    """FBED (forward phase only by default) from every variable, merged by the AND rule."""
    t0, tester, initial = _prepare(data, cfg, R)
    D = data.D
    G = np.zeros((D, D), dtype=bool)
    sel = {}
    stacked = tester.continuous and cfg.fbed_runs == 0
    forward = fbed_forward_all(tester, cfg, initial) if stacked else None
    for i in range(D):
        S = forward[i] if stacked else fbed_forward(i, tester, cfg, initial)[0]
        if cfg.with_backward:
            S = fbed_backward(i, S, tester, cfg)
        sel[i] = S
        G[i, S] = True
    return SkeletonResult(
        _and_rule(G), tester.n_tests, _symmetrise(initial[0]), _symmetrise(initial[1]),
        time.perf_counter() - t0, tester.R, sel,
    )


def _mmpc_forward(target: int, tester: CITester, cfg: SkeletonConfig, initial) -> list[int]:
    la = cfg.log_alpha
    D = tester.data.D
    cands = np.array([v for v in range(D) if v != target], dtype=int)
    stat, logp = tester.batch(target, cands, ())
    initial[0][target, cands] = stat
    initial[1][target, cands] = logp
    # minimum association so far == maximum log p over the subsets tried
    worst = dict(zip(cands.tolist(), logp.tolist()))
    strength = dict(zip(cands.tolist(), np.abs(stat).tolist()))
    alive = [c for c in cands.tolist() if worst[c] < la]
    selected: list[int] = []
    while alive:
        best = min(alive, key=lambda c: (worst[c], -strength[c], c))
        alive.remove(best)
        selected.append(best)
        others = selected[:-1]
        for size in range(min(cfg.max_k, len(selected))):
            for sub in combinations(others, size):
                if not alive:
                    break
                Z = list(sub) + [best]
                s, lp = tester.batch(target, alive, Z)
                for c, si, li in zip(list(alive), s.tolist(), lp.tolist()):
                    if li > worst[c]:
                        worst[c] = li
                        strength[c] = abs(si)
                alive = [c for c in alive if worst[c] < la]
    return selected


def mmhc_skeleton(data, cfg: SkeletonConfig = SkeletonConfig(), R: CorrelationMatrix | None = None) -> SkeletonResult:
    """Max-min parents/children search per variable (no backward phase), AND rule."""
    t0, tester, initial = _prepare(data, cfg, R)
    D = data.D
    G = np.zeros((D, D), dtype=bool)
    sel = {}
    for i in range(D):
        S = _mmpc_forward(i, tester, cfg, initial)
        sel[i] = S
        G[i, S] = True
    return SkeletonResult(
        _and_rule(G), tester.n_tests, _symmetrise(initial[0]), _symmetrise(initial[1]),
        time.perf_counter() - t0, tester.R, sel,
    )


def pchc_skeleton(data, cfg: SkeletonConfig = SkeletonConfig(), R: CorrelationMatrix | None = None) -> SkeletonResult:
    """PC-style skeleton: unconditional filter, then conditioning sets of size 1..max_k.

    Pairs are visited from the weakest to the strongest unconditional
    association; conditioning sets are drawn from the neighbours of one
    endpoint, strongest-associated neighbours first, in lexicographic order
    over that ranking. The first non-significant test removes the edge.
    """
    t0, tester, initial = _prepare(data, cfg, R)
    la = cfg.log_alpha
    D = data.D
    stats0, logp0 = initial
    for i in range(D - 1):
        cands = list(range(i + 1, D))
        s, lp = tester.batch(i, cands, ())
        stats0[i, cands] = s
        logp0[i, cands] = lp
    stats0 = _symmetrise(stats0)
    logp0 = _symmetrise(logp0)
    adj = logp0 < la
    np.fill_diagonal(adj, False)
    strength = np.abs(stats0)

    k = 1
    while k <= cfg.max_k:
        supported = False
        iu, ju = np.nonzero(np.triu(adj, 1))
        pairs = sorted(zip(iu.tolist(), ju.tolist()), key=lambda p: (strength[p], p))
        for i, j in pairs:
            if not adj[i, j]:
                continue
            removed = False
            for a, b in ((i, j), (j, i)):
                nbrs = [v for v in np.flatnonzero(adj[a]).tolist() if v != b]
                if len(nbrs) < k:
                    continue
                supported = True
                nbrs.sort(key=lambda v: (-strength[a, v], v))
                for Z in combinations(nbrs, k):
                    _, lp = tester.batch(a, [b], Z)
                    if lp[0] >= la:
                        adj[a, b] = adj[b, a] = False
                        removed = True
                        break
                if removed:
                    break
        if not supported:
            break
        k += 1
    return SkeletonResult(Skeleton(adj), tester.n_tests, stats0, logp0, time.perf_counter() - t0, tester.R)


SKELETONS = {"fedhc": fedhc_skeleton, "mmhc": mmhc_skeleton, "pchc": pchc_skeleton}
