import math

import numpy as np
import pytest

from fedhc.data import CategoricalDataset, ContinuousDataset, Dag, EdgeConstraints, Skeleton, topological_order
from fedhc.errors import InconsistentConstraints
from fedhc.metrics import dag_to_cpdag
from fedhc.search import ScoreSpec, Scorer, SearchConfig, hc_search, local_score, tabu_search
from fedhc.simulate import GaussianBn, random_coefficients, random_gaussian_bn, sample_gaussian

COLLIDER_FORK = Dag.from_edges(5, [(0, 2), (1, 2), (2, 3), (2, 4)])


def ols_loglik(X, node, parents):
    n = len(X)
    A = np.column_stack([np.ones(n)] + [X[:, p] for p in parents])
    res = X[:, node] - A @ np.linalg.lstsq(A, X[:, node], rcond=None)[0]
    s2 = res @ res / n
    return -n / 2 * (math.log(2 * math.pi * s2) + 1)


def brute_bdeu(codes, levels, node, parents, iss):
    r = levels[node]
    q = int(np.prod([levels[p] for p in parents])) if parents else 1
    counts = {}
    for row in codes:
        key = tuple(int(row[p]) for p in parents)
        counts.setdefault(key, [0] * r)[int(row[node])] += 1
    a_j, a_jk = iss / q, iss / (q * r)
    total = 0.0
    for N in counts.values():
        total += math.lgamma(a_j) - math.lgamma(a_j + sum(N))
        total += sum(math.lgamma(a_jk + c) - math.lgamma(a_jk) for c in N)
    return total


def test_gaussian_scores_match_least_squares():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(500, 5)) @ rng.normal(size=(5, 5))
    d = ContinuousDataset(X)
    n = 500
    for parents in [(), (1,), (1, 3), (1, 2, 3, 4)]:
        ll = ols_loglik(X, 0, parents)
        k = len(parents) + 2
        assert local_score(0, parents, d, ScoreSpec("loglik_g")) == pytest.approx(ll, rel=1e-10)
        assert local_score(0, parents, d, ScoreSpec("bic_g")) == pytest.approx(ll - k * math.log(n) / 2, rel=1e-10)
        assert local_score(0, parents, d, ScoreSpec("aic_g")) == pytest.approx(ll - k, rel=1e-10)


def test_empty_parent_bic_of_standard_normal():
    n = 10000
    X = np.random.default_rng(1).normal(size=(n, 2))
    v = local_score(0, (), ContinuousDataset(X), ScoreSpec("bic_g"))
    target = -n / 2 * (math.log(2 * math.pi) + 1) - math.log(n)
    # n/2 * log(s2) has standard error about n/2 * sqrt(2/n)
    assert abs(v - target) < 4 * n / 2 * math.sqrt(2 / n)


def test_noise_parent_does_not_help_bic_on_average():
    rng = np.random.default_rng(2)
    gains = []
    for _ in range(200):
        d = ContinuousDataset(rng.normal(size=(1000, 2)))
        s = Scorer(d, ScoreSpec("bic_g"))
        gains.append(s(0, (1,)) - s(0, ()))
    assert np.mean(gains) < 0


def test_singular_design_scores_minus_infinity():
    rng = np.random.default_rng(3)
    x = rng.normal(size=100)
    X = np.column_stack([rng.normal(size=100), x, 2 * x])
    assert local_score(0, (1, 2), ContinuousDataset(X), ScoreSpec("bic_g")) == -math.inf


def test_categorical_loglik_counts():
    codes = np.array([[0]] * 30 + [[1]] * 70)
    codes = np.column_stack([codes, np.arange(100) % 2])
    d = CategoricalDataset(codes, (2, 2))
    assert local_score(0, (), d, ScoreSpec("loglik_cat")) == pytest.approx(30 * math.log(0.3) + 70 * math.log(0.7), rel=1e-13)
    assert local_score(0, (), d, ScoreSpec("bic_cat")) == pytest.approx(
        30 * math.log(0.3) + 70 * math.log(0.7) - math.log(100) / 2, rel=1e-13
    )


def test_bdeu_matches_brute_force():
    rng = np.random.default_rng(4)
    levels = (3, 2, 4, 2)
    codes = np.column_stack([rng.integers(0, l, 300) for l in levels])
    d = CategoricalDataset(codes, levels)
    for parents, iss in [((), 1.0), ((1,), 1.0), ((1, 2), 5.0), ((1, 2, 3), 0.5)]:
        v = local_score(0, parents, d, ScoreSpec("bdeu", iss))
        assert v == pytest.approx(brute_bdeu(codes, levels, 0, parents, iss), rel=1e-12)


def test_empty_skeleton_gives_empty_dag():
    d = ContinuousDataset(np.random.default_rng(5).normal(size=(200, 4)))
    sk = Skeleton(np.zeros((4, 4), dtype=bool))
    res = hc_search(sk, d)
    assert res.dag.edges() == []
    assert res.score == pytest.approx(sum(local_score(v, (), d, ScoreSpec()) for v in range(4)))
    assert tabu_search(sk, d).dag.edges() == []


def test_two_node_orientation_tie():
    bn = GaussianBn(Dag.from_edges(2, [(0, 1)]), {(0, 1): 0.8})
    d = sample_gaussian(bn, 10000, seed=6)
    s = Scorer(d, ScoreSpec("bic_g"))
    fwd = s(0, ()) + s(1, (0,))
    bwd = s(1, ()) + s(0, (1,))
    assert fwd == pytest.approx(bwd, abs=1e-9)
    sk = Skeleton(np.array([[0, 1], [1, 0]], dtype=bool))
    res = hc_search(sk, d, cfg=SearchConfig(restarts=0))
    # equal gains: the move (add, 0, 1) sorts before (add, 1, 0)
    assert res.dag.edges() == [(0, 1)]


def test_collider_fork_cpdag_recovered_from_true_skeleton():
    hits = 0
    truth = dag_to_cpdag(COLLIDER_FORK)
    for r in range(100):
        bn = GaussianBn(COLLIDER_FORK, random_coefficients(COLLIDER_FORK, seed=r))
        d = sample_gaussian(bn, 100000, seed=2000 + r)
        res = hc_search(COLLIDER_FORK.skeleton(), d, cfg=SearchConfig(seed=r))
        hits += dag_to_cpdag(res.dag) == truth
    assert hits >= 90


def _check(res, sk, cons):
    topological_order(res.dag)
    for a, b in res.dag.edges():
        assert sk.adj[a, b]
        assert (a, b) not in cons.blacklist
    for a, b in cons.whitelist:
        assert res.dag.arrows[a, b]


def test_constraints_and_invariants_on_random_instances():
    rng = np.random.default_rng(7)
    for r in range(20):
        bn = random_gaussian_bn(8, 3, seed=r)
        d = sample_gaussian(bn, 2000, seed=r)
        sk = bn.dag.skeleton()
        edges = sk.edges()
        if len(edges) < 3:
            continue
        picks = rng.permutation(len(edges))
        a, b = edges[picks[0]]
        white = {(a, b)} if rng.random() < 0.5 else {(b, a)}
        black = set()
        for k in picks[1:3]:
            u, v = edges[k]
            black.add((u, v) if rng.random() < 0.5 else (v, u))
        cons = EdgeConstraints(black, white)
        for search in (hc_search, tabu_search):
            res = search(sk, d, ScoreSpec(), cons, SearchConfig(seed=r))
            _check(res, sk, cons)
            again = search(sk, d, ScoreSpec(), cons, SearchConfig(seed=r))
            assert again.dag == res.dag and again.score == res.score


def test_greedy_trajectories_strictly_increase():
    bn = random_gaussian_bn(10, 3, seed=8)
    d = sample_gaussian(bn, 5000, seed=8)
    res = hc_search(bn.dag.skeleton(), d, cfg=SearchConfig(restarts=5, seed=1))
    for climb in res.trace:
        assert all(b > a for a, b in zip(climb, climb[1:]))


def test_tabu_at_least_as_good_as_plain_greedy():
    for r in range(10):
        bn = random_gaussian_bn(10, 3, seed=r)
        d = sample_gaussian(bn, 500, seed=r)
        sk = bn.dag.skeleton()
        greedy = hc_search(sk, d, cfg=SearchConfig(restarts=0, seed=r))
        tabu = tabu_search(sk, d, cfg=SearchConfig(seed=r))
        assert tabu.score >= greedy.score - 1e-9 * abs(greedy.score)


def test_decomposability_and_cache():
    bn = random_gaussian_bn(6, 2, seed=9)
    d = sample_gaussian(bn, 500, seed=9)
    s = Scorer(d, ScoreSpec("bic_g"))
    total = s.total(bn.dag)
    assert total == pytest.approx(sum(local_score(v, bn.dag.parents(v), d, ScoreSpec("bic_g")) for v in range(6)))
    before = s.evaluations
    arrows = bn.dag.arrows.copy()
    u, v = bn.dag.edges()[0]
    arrows[u, v] = False
    s.total(Dag(arrows))
    assert s.evaluations == before + 1


def test_whitelist_outside_skeleton_or_cyclic():
    d = ContinuousDataset(np.random.default_rng(10).normal(size=(100, 3)))
    sk = Skeleton(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=bool))
    with pytest.raises(InconsistentConstraints):
        hc_search(sk, d, constraints=EdgeConstraints(frozenset(), {(0, 2)}))
    with pytest.raises(InconsistentConstraints):
        hc_search(sk, d, constraints=EdgeConstraints(frozenset(), {(0, 1), (1, 0)}))


def test_whitelisted_arrow_survives_even_if_useless():
    d = ContinuousDataset(np.random.default_rng(11).normal(size=(1000, 3)))
    sk = Skeleton(np.ones((3, 3), dtype=bool) & ~np.eye(3, dtype=bool))
    res = hc_search(sk, d, constraints=EdgeConstraints(frozenset(), {(2, 0)}))
    assert res.dag.arrows[2, 0]


def test_score_spec_validation():
    with pytest.raises(ValueError):
        ScoreSpec("bge")
    with pytest.raises(ValueError):
        ScoreSpec("bdeu", iss=0)
