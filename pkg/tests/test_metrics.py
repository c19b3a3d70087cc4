import csv
import io
import itertools

import numpy as np
import pytest

from fedhc.data import Cpdag, Dag, Skeleton
from fedhc.metrics import BENCH_HEADER, Scenario, dag_to_cpdag, run_benchmark, shd, skeleton_metrics, write_bench_csv

from oracles import class_pdag, edit_distances, equivalence_classes, pdag_code, v_structures


def cpdag_v_structures(g):
    out = set()
    adj = g.skeleton().adj
    for c in range(g.D):
        pa = sorted(a for a, b in g.directed if b == c)
        for x, y in itertools.combinations(pa, 2):
            if not adj[x, y]:
                out.add((x, c, y))
    return frozenset(out)


def test_cpdag_examples():
    collider = Dag.from_edges(3, [(0, 2), (1, 2)])
    assert dag_to_cpdag(collider) == Cpdag(3, {(0, 2), (1, 2)})
    chain = Dag.from_edges(3, [(0, 1), (1, 2)])
    assert dag_to_cpdag(chain) == Cpdag(3, frozenset(), {(0, 1), (1, 2)})
    assert dag_to_cpdag(Dag.from_edges(2, [(0, 1)])) == Cpdag(2, frozenset(), {(0, 1)})


@pytest.mark.parametrize("D", [2, 3, 4])
def test_cpdag_matches_enumerated_classes(D):
    for members in equivalence_classes(D).values():
        directed, undirected = class_pdag(members)
        expected = Cpdag(D, directed, undirected)
        for m in members:
            g = dag_to_cpdag(m)
            assert g == expected
            assert g.skeleton() == m.skeleton()
            assert cpdag_v_structures(g) == v_structures(m)


def test_shd_examples():
    g = Cpdag(3, {(0, 2), (1, 2)})
    assert shd(g, g) == 0
    assert shd(Cpdag(2, frozenset(), {(0, 1)}), Cpdag(2, {(0, 1)})) == 1
    assert shd(Cpdag(3, frozenset(), {(0, 2)}), g) == 2
    assert shd(Cpdag(2, {(1, 0)}), Cpdag(2, {(0, 1)})) == 1
    with pytest.raises(ValueError):
        shd(Cpdag(2), Cpdag(3))


@pytest.mark.parametrize("D", [3, 4])
def test_shd_matches_minimal_edit_search(D):
    cpdags = sorted({dag_to_cpdag(m) for ms in equivalence_classes(D).values() for m in ms[:1]}, key=lambda g: pdag_code(g, D))
    codes = np.array([pdag_code(g, D) for g in cpdags])
    M = np.array([[shd(a, b) for b in cpdags] for a in cpdags])
    for k, g in enumerate(cpdags):
        assert np.array_equal(edit_distances(codes[k], D)[codes], M[k])
    # metric axioms over the whole universe
    assert np.array_equal(M, M.T)
    assert ((M == 0) == np.eye(len(cpdags), dtype=bool)).all()
    assert (M[:, None, :] <= M[:, :, None] + M[None, :, :]).all()


def test_skeleton_metrics():
    def sk(D, edges):
        m = np.zeros((D, D), dtype=bool)
        for a, b in edges:
            m[a, b] = m[b, a] = True
        return Skeleton(m)

    truth = sk(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    assert skeleton_metrics(truth, truth) == (1.0, 1.0, 1.0)
    p, r, f = skeleton_metrics(sk(5, []), truth)
    assert (p, r, f) == (1.0, 0.0, 0.0)
    p, r, f = skeleton_metrics(sk(5, [(0, 1), (1, 2), (2, 3), (0, 4)]), truth)
    assert (p, r) == (0.75, 0.75) and f == pytest.approx(0.75)
    assert skeleton_metrics(sk(3, []), sk(3, [])) == (1.0, 1.0, 1.0)


def test_benchmark_single_record_and_determinism():
    sc = Scenario(D=8, avg_neighbors=2, n=(500,), replicates=1, seed=3)
    (rec,) = run_benchmark(sc)
    assert rec.algorithm == "fedhc" and rec.n == 500 and rec.seed == 3 and rec.D == 8
    assert rec.shd >= 0 and rec.n_tests >= 0
    assert rec.total_seconds >= rec.skeleton_seconds >= 0
    (again,) = run_benchmark({"D": 8, "avg_neighbors": 2, "n": [500], "seed": 3})
    assert (again.shd, again.n_tests) == (rec.shd, rec.n_tests)


def test_benchmark_workers_do_not_change_results():
    sc = Scenario(D=8, avg_neighbors=2, n=(300, 600), replicates=3, algorithms=("fedhc", "pchc"))
    a = run_benchmark(sc, workers=1)
    streamed = []
    b = run_benchmark(sc, workers=4, on_record=streamed.append)
    assert len(a) == len(b) == len(streamed) == 12
    key = lambda r: (r.algorithm, r.n, r.seed, r.shd, r.n_tests)
    assert [key(r) for r in a] == [key(r) for r in b]
    assert [(r.algorithm, r.n, r.seed) for r in a] == sorted((r.algorithm, r.n, r.seed) for r in a)


def test_bench_csv_header_and_completeness():
    recs = run_benchmark(Scenario(D=6, avg_neighbors=2, n=(200,), replicates=2))
    text = write_bench_csv(recs)
    assert text.splitlines()[0] == "algorithm,D,avg_neighbors,n,seed,shd,n_tests,skeleton_seconds,total_seconds"
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 2
    for row in rows:
        assert set(row) == set(BENCH_HEADER) and all(v != "" for v in row.values())
