"""Phase two: decomposable network scores and constrained greedy search.

The search only ever orients, removes or re-orients edges of the skeleton
found in phase one, never adds a blacklisted arrow and never touches a
whitelisted one.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .data import CategoricalDataset, ContinuousDataset, Dag, EdgeConstraints, Skeleton
from .errors import InconsistentConstraints

GAUSSIAN_SCORES = ("bic_g", "loglik_g", "aic_g")
CATEGORICAL_SCORES = ("bic_cat", "loglik_cat", "bdeu")
_LOG_2PI = math.log(2 * math.pi)
# moves whose score gains differ by less than this (relative to the total) are ties
TIE_RTOL = 1e-9

MOVE_TYPES = ("add", "delete", "reverse")


@dataclass(frozen=True)
class ScoreSpec:
    name: str = "bic_g"
    iss: float = 1.0

    def __post_init__(self):
        if self.name not in GAUSSIAN_SCORES + CATEGORICAL_SCORES:
            raise ValueError(f"unknown score {self.name!r}")
        if self.name == "bdeu" and not self.iss > 0:
            raise ValueError("BDeu needs a positive imaginary sample size")


@dataclass(frozen=True)
class SearchConfig:
    restarts: int = 10
    tabu_len: int = 100
    stall_limit: int = 15
    perturb_edges: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")
        if self.tabu_len < 1 or self.stall_limit < 1:
            raise ValueError("tabu_len and stall_limit must be >= 1")


@dataclass
class LearnedBn:
    dag: Dag
    score: float
    local_scores_evaluated: int
    runtime: float
    trace: list = field(default_factory=list)


class Scorer:
    """Cached local scores ``score(node, parents)`` for one dataset."""

    def __init__(self, data, spec: ScoreSpec):
        self.spec = spec
        self.data = data
        self.n = data.n
        self.cache: dict[tuple[int, tuple[int, ...]], float] = {}
        self.evaluations = 0
        self.hits = 0
        if spec.name in GAUSSIAN_SCORES:
            if not isinstance(data, ContinuousDataset):
                raise TypeError(f"score {spec.name!r} needs continuous data")
            x = data.values - data.values.mean(axis=0)
            self._cov = x.T @ x / data.n
        else:
            if not isinstance(data, CategoricalDataset):
                raise TypeError(f"score {spec.name!r} needs categorical data")
            self._codes = data.codes
            self._levels = data.levels

    def __call__(self, node: int, parents: Sequence[int]) -> float:
        key = (node, tuple(sorted(parents)))
        v = self.cache.get(key)
        if v is not None:
            self.hits += 1
            return v
        if node in key[1]:
            raise ValueError("a node cannot be its own parent")
        self.evaluations += 1
        if self.spec.name in GAUSSIAN_SCORES:
            v = self._gaussian(node, key[1])
        else:
            v = self._categorical(node, key[1])
        self.cache[key] = v
        return v

    def total(self, dag: Dag) -> float:
        return sum(self(v, dag.parents(v)) for v in range(dag.D))

    def _gaussian(self, node, parents):
        S, n = self._cov, self.n
        var = S[node, node]
        if parents:
            P = list(parents)
            try:
                L = np.linalg.cholesky(S[np.ix_(P, P)])
            except np.linalg.LinAlgError:
                return -math.inf
            if np.min(np.diag(L)) ** 2 < 1e-12 * np.max(np.diag(S)[P]):
                return -math.inf
            w = np.linalg.solve(L, S[P, node])
            var = var - w @ w
        if not var > 0:
            return -math.inf
        loglik = -0.5 * n * (_LOG_2PI + math.log(var) + 1.0)
        k = len(parents) + 2
        if self.spec.name == "bic_g":
            return loglik - k * math.log(n) / 2
        if self.spec.name == "aic_g":
            return loglik - k
        return loglik

    def _categorical(self, node, parents):
        codes, levels = self._codes, self._levels
        r = levels[node]
        q = 1
        if parents:
            cfg = np.ravel_multi_index(tuple(codes[:, p] for p in parents), tuple(levels[p] for p in parents))
            for p in parents:
                q *= levels[p]
            _, cfg = np.unique(cfg, return_inverse=True)
            n_cfg = int(cfg.max()) + 1
        else:
            cfg = np.zeros(self.n, dtype=np.int64)
            n_cfg = 1
        N = np.bincount(cfg * r + codes[:, node], minlength=n_cfg * r).reshape(n_cfg, r).astype(float)
        Nj = N.sum(axis=1)
        if self.spec.name == "bdeu":
            a_j = self.spec.iss / q
            a_jk = a_j / r
            return float(
                np.sum(gammaln(a_j) - gammaln(a_j + Nj)) + np.sum(gammaln(a_jk + N) - gammaln(a_jk))
            )
        pos = N > 0
        loglik = float(np.sum(N[pos] * np.log((N / Nj[:, None])[pos])))
        if self.spec.name == "bic_cat":
            return loglik - (r - 1) * q * math.log(self.n) / 2
        return loglik


def local_score(node: int, parents: Sequence[int], data, spec: ScoreSpec) -> float:
    """Score contribution of ``node`` given its parent set (uncached convenience form)."""
    return Scorer(data, spec)(node, parents)


class _State:
    """Mutable DAG restricted to skeleton edges, with per-node cached scores."""

    def __init__(self, D: int, edges, scorer: Scorer, constraints: EdgeConstraints):
        self.D = D
        self.edges = edges
        self.scorer = scorer
        self.bl = constraints.blacklist
        self.wl = constraints.whitelist
        self.arrows = np.zeros((D, D), dtype=bool)
        self.parents: list[set[int]] = [set() for _ in range(D)]
        self.local = [scorer(v, ()) for v in range(D)]

    @property
    def score(self) -> float:
        return math.fsum(self.local)

    def key(self) -> bytes:
        return np.packbits(self.arrows).tobytes()

    def load(self, arrows: np.ndarray) -> None:
        self.arrows = arrows.copy()
        self.parents = [set(np.flatnonzero(arrows[:, v]).tolist()) for v in range(self.D)]
        self.local = [self.scorer(v, tuple(self.parents[v])) for v in range(self.D)]

    def _reaches(self, src: int, dst: int, skip: tuple[int, int] | None = None) -> bool:
        stack, seen = [src], {src}
        a = self.arrows
        while stack:
            u = stack.pop()
            for w in np.flatnonzero(a[u]).tolist():
                if skip is not None and (u, w) == skip:
                    continue
                if w == dst:
                    return True
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return False

    def candidate_moves(self):
        """Structurally allowed moves as (type_index, u, v), ignoring acyclicity."""
        out = []
        a = self.arrows
        for i, j in self.edges:
            if a[i, j] or a[j, i]:
                u, v = (i, j) if a[i, j] else (j, i)
                if (u, v) in self.wl:
                    continue
                out.append((1, u, v))
                if (v, u) not in self.bl:
                    out.append((2, u, v))
            else:
                if (i, j) not in self.bl:
                    out.append((0, i, j))
                if (j, i) not in self.bl:
                    out.append((0, j, i))
        return out

    def delta(self, move) -> float:
        t, u, v = move
        sc = self.scorer
        pv = self.parents[v]
        if t == 0:
            d = sc(v, tuple(pv | {u})) - self.local[v]
        elif t == 1:
            d = sc(v, tuple(pv - {u})) - self.local[v]
        else:
            d = (sc(v, tuple(pv - {u})) - self.local[v]) + (sc(u, tuple(self.parents[u] | {v})) - self.local[u])
        return d if d == d else -math.inf

    def acyclic_after(self, move) -> bool:
        t, u, v = move
        if t == 0:
            return not self._reaches(v, u)
        if t == 2:
            return not self._reaches(u, v, skip=(u, v))
        return True

    def apply(self, move) -> None:
        t, u, v = move
        sc = self.scorer
        if t == 0:
            self.arrows[u, v] = True
            self.parents[v].add(u)
        else:
            self.arrows[u, v] = False
            self.parents[v].discard(u)
            if t == 2:
                self.arrows[v, u] = True
                self.parents[u].add(v)
                self.local[u] = sc(u, tuple(self.parents[u]))
        self.local[v] = sc(v, tuple(self.parents[v]))

    def key_after(self, move) -> bytes:
        t, u, v = move
        a = self.arrows.copy()
        a[u, v] = t == 0
        if t == 2:
            a[v, u] = True
        return np.packbits(a).tobytes()

    def choose(self, min_gain: float | None, exclude=None):
        """Best legal move, ties (within tolerance) broken by (type, from, to).

        ``min_gain`` discards moves not improving by more than it; ``exclude``
        is a set of structure keys that may not be entered.
        """
        tol = TIE_RTOL * max(1.0, abs(self.score))
        scored = [(self.delta(m), m) for m in self.candidate_moves()]
        if min_gain is not None:
            scored = [s for s in scored if s[0] > min_gain]
        scored.sort(key=lambda s: (-s[0], s[1]))
        best_delta, best = None, None
        for d, m in scored:
            if best_delta is not None and d < best_delta - tol:
                break
            if not self.acyclic_after(m):
                continue
            if exclude is not None and self.key_after(m) in exclude:
                continue
            if best is None:
                best_delta, best = d, m
            elif m < best:
                best = m
        return best


def _init_state(skeleton: Skeleton, data, spec, constraints, scorer) -> _State:
    constraints = constraints or EdgeConstraints()
    D = skeleton.D
    if data.D != D:
        raise ValueError("skeleton and data disagree on the number of variables")
    constraints.check(D)
    for u, v in constraints.whitelist:
        if not skeleton.adj[u, v]:
            raise InconsistentConstraints(f"whitelisted arrow ({u}, {v}) is not a skeleton edge")
    scorer = scorer or Scorer(data, spec)
    st = _State(D, skeleton.edges(), scorer, constraints)
    for u, v in sorted(constraints.whitelist):
        st.apply((0, u, v))
    return st


def _greedy(st: _State, trace: list) -> None:
    tol = TIE_RTOL * max(1.0, abs(st.score))
    while True:
        m = st.choose(min_gain=tol)
        if m is None:
            return
        st.apply(m)
        trace.append(st.score)


def _perturb(st: _State, rng: np.random.Generator, n_moves: int) -> None:
    for _ in range(n_moves):
        for _attempt in range(10):
            moves = st.candidate_moves()
            if not moves:
                return
            m = moves[int(rng.integers(len(moves)))]
            if st.acyclic_after(m):
                st.apply(m)
                break


def hc_search(
    skeleton: Skeleton,
    data,
    spec: ScoreSpec = ScoreSpec(),
    constraints: EdgeConstraints | None = None,
    cfg: SearchConfig = SearchConfig(),
    scorer: Scorer | None = None,
) -> LearnedBn:
    """Greedy hill climbing from the empty graph plus perturbation restarts.

    Each restart perturbs the best structure so far with ``cfg.perturb_edges``
    random legal moves and climbs again; the best structure seen is returned.
    ``trace`` holds one list of scores per climb.
    """
    t0 = time.perf_counter()
    st = _init_state(skeleton, data, spec, constraints, scorer)
    rng = np.random.default_rng(cfg.seed)
    traces = [[st.score]]
    _greedy(st, traces[-1])
    best_arrows, best_score = st.arrows.copy(), st.score
    for _ in range(cfg.restarts):
        st.load(best_arrows)
        _perturb(st, rng, cfg.perturb_edges)
        traces.append([st.score])
        _greedy(st, traces[-1])
        if st.score > best_score + TIE_RTOL * max(1.0, abs(best_score)):
            best_arrows, best_score = st.arrows.copy(), st.score
    return LearnedBn(Dag(best_arrows), best_score, st.scorer.evaluations, time.perf_counter() - t0, traces)


def tabu_search(
    skeleton: Skeleton,
    data,
    spec: ScoreSpec = ScoreSpec(),
    constraints: EdgeConstraints | None = None,
    cfg: SearchConfig = SearchConfig(),
    scorer: Scorer | None = None,
) -> LearnedBn:
    """Best-non-tabu-move search; may step downhill to leave local maxima.

    Stops after ``cfg.stall_limit`` consecutive moves without beating the
    best score ever seen, or when every legal move is tabu.
    """
    t0 = time.perf_counter()
    st = _init_state(skeleton, data, spec, constraints, scorer)
    recent = deque([st.key()], maxlen=cfg.tabu_len)
    best_arrows, best_score = st.arrows.copy(), st.score
    trace = [st.score]
    stall = 0
    while stall < cfg.stall_limit:
        m = st.choose(min_gain=None, exclude=set(recent))
        if m is None:
            break
        st.apply(m)
        recent.append(st.key())
        trace.append(st.score)
        if st.score > best_score + TIE_RTOL * max(1.0, abs(best_score)):
            best_arrows, best_score = st.arrows.copy(), st.score
            stall = 0
        else:
            stall += 1
    return LearnedBn(Dag(best_arrows), best_score, st.scorer.evaluations, time.perf_counter() - t0, [trace])


SEARCHES = {"hc": hc_search, "tabu": tabu_search}
