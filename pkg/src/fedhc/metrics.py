"""Equivalence classes, structural Hamming distance and the benchmark harness."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import Cpdag, Dag, Skeleton, topological_order
from .pipeline import learn
from .simulate import random_gaussian_bn, sample_gaussian


def dag_to_cpdag(d: Dag) -> Cpdag:
    """Completed PDAG of the Markov equivalence class of ``d`` (Chickering 1995).

    Edges are first put in Chickering's total order, then labelled compelled
    or reversible in that order.
    """
    D = d.D
    pos = {v: k for k, v in enumerate(topological_order(d))}
    parents = [set(d.parents(v)) for v in range(D)]
    ordered = []
    for y in sorted(range(D), key=pos.get):
        for x in sorted(parents[y], key=pos.get, reverse=True):
            ordered.append((x, y))

    compelled: set[tuple[int, int]] = set()
    reversible: set[tuple[int, int]] = set()

    def unknown(e):
        return e not in compelled and e not in reversible

    for x, y in ordered:
        if not unknown((x, y)):
            continue
        done = False
        for w in sorted(parents[x]):
            if (w, x) not in compelled:
                continue
            if w not in parents[y]:
                for z in parents[y]:
                    reversible.discard((z, y))
                    compelled.add((z, y))
                done = True
                break
            compelled.add((w, y))
        if done:
            continue
        into_y = [(z, y) for z in parents[y] if unknown((z, y))]
        if any(z != x and z not in parents[x] for z in parents[y]):
            compelled.update(into_y)
        else:
            reversible.update(into_y)
    return Cpdag(D, frozenset(compelled), frozenset(tuple(sorted(e)) for e in reversible))


def _pair_states(g: Cpdag) -> dict:
    """Map each adjacent pair (a < b) to 'u', '>' (a -> b) or '<' (b -> a)."""
    out = {e: "u" for e in g.undirected}
    for a, b in g.directed:
        out[(min(a, b), max(a, b))] = ">" if a < b else "<"
    return out


def shd(estimated: Cpdag, truth: Cpdag) -> int:
    """Unit-cost edits (insert, delete, re-mark an edge) turning one graph into the other."""
    if estimated.D != truth.D:
        raise ValueError("graphs have different node sets")
    a, b = _pair_states(estimated), _pair_states(truth)
    return sum(a.get(p) != b.get(p) for p in set(a) | set(b))


def skeleton_metrics(estimated: Skeleton, truth: Skeleton) -> tuple[float, float, float]:
    """(precision, recall, F1) over undirected edge sets; an empty side scores 1."""
    if estimated.D != truth.D:
        raise ValueError("graphs have different node sets")
    est, tru = set(estimated.edges()), set(truth.edges())
    tp = len(est & tru)
    precision = tp / len(est) if est else 1.0
    recall = tp / len(tru) if tru else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


# -- benchmark ------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchRecord:
    algorithm: str
    D: int
    avg_neighbors: float
    n: int
    seed: int
    shd: int
    n_tests: int
    skeleton_seconds: float
    total_seconds: float


BENCH_HEADER = [f.name for f in fields(BenchRecord)]


@dataclass(frozen=True)
class Scenario:
    D: int
    avg_neighbors: float
    n: Sequence[int]
    replicates: int = 1
    algorithms: Sequence[str] = ("fedhc",)
    seed: int = 0
    alpha: float = 0.05
    restart: int = 10
    max_k: int = 3


def _replicate(sc: Scenario, r: int, n: int) -> list[BenchRecord]:
    seed = sc.seed + r
    bn = random_gaussian_bn(sc.D, sc.avg_neighbors, seed)
    truth = dag_to_cpdag(bn.dag)
    data = sample_gaussian(bn, n, seed=np.random.SeedSequence([seed, n]).generate_state(1)[0])
    out = []
    for alg in sc.algorithms:
        res = learn(data, algorithm=alg, alpha=sc.alpha, restart=sc.restart, max_k=sc.max_k, seed=seed)
        out.append(BenchRecord(
            alg, sc.D, sc.avg_neighbors, n, seed,
            shd(dag_to_cpdag(res.dag), truth), res.skeleton.n_tests,
            res.skeleton_seconds, max(res.total_seconds, res.skeleton_seconds),
        ))
    return out


def run_benchmark(
    scenario: Scenario | dict,
    workers: int = 1,
    on_record: Callable[[BenchRecord], None] | None = None,
) -> list[BenchRecord]:
    """Simulate, learn and score every (replicate, n, algorithm) combination.

    Replicate ``r`` uses seed ``scenario.seed + r`` for its network and a
    seed derived from it and n for its data, so results do not depend on the
    number of workers. Records come back sorted by (algorithm, n, seed).
    """
    sc = scenario if isinstance(scenario, Scenario) else Scenario(**scenario)
    tasks = [(r, n) for r in range(sc.replicates) for n in sc.n]
    records: list[BenchRecord] = []

    def done(recs):
        records.extend(recs)
        if on_record is not None:
            for rec in recs:
                on_record(rec)

    if workers <= 1:
        for r, n in tasks:
            done(_replicate(sc, r, n))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for recs in pool.map(lambda t: _replicate(sc, *t), tasks):
                done(recs)
    return sorted(records, key=lambda rec: (rec.algorithm, rec.n, rec.seed))


def write_bench_csv(records: Iterable[BenchRecord], fh=None) -> str | None:
    """Write records with the fixed benchmark header; returns the text if ``fh`` is None."""
    buf = fh if fh is not None else io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_HEADER, lineterminator="\n")
    w.writeheader()
    for rec in records:
        w.writerow(asdict(rec))
    return buf.getvalue() if fh is None else None
