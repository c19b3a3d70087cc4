"""Ground-truth generators: random DAGs, linear-Gaussian and discrete networks."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import CategoricalDataset, ContinuousDataset, Dag, topological_order
from .errors import CptNotNormalized, SchemaError

BETA_RANGE = (0.1, 1.0)


@dataclass(frozen=True)
class GaussianBn:
    dag: Dag
    beta: dict
    intercepts: np.ndarray | None = None
    noise_sd: np.ndarray | None = None

    def __post_init__(self):
        D = self.dag.D
        arrows = set(self.dag.edges())
        if set(self.beta) != arrows:
            raise ValueError("beta must hold exactly one coefficient per arrow")
        object.__setattr__(self, "intercepts", np.zeros(D) if self.intercepts is None else np.asarray(self.intercepts, float))
        object.__setattr__(self, "noise_sd", np.ones(D) if self.noise_sd is None else np.asarray(self.noise_sd, float))

    def coef_matrix(self) -> np.ndarray:
        """B[i, j] = coefficient of i in the equation of j."""
        B = np.zeros((self.dag.D, self.dag.D))
        for (i, j), b in self.beta.items():
            B[i, j] = b
        return B

    def covariance(self) -> np.ndarray:
        """Population covariance (I - B)^-T diag(noise^2) (I - B)^-1 of the row vector X."""
        D = self.dag.D
        A = np.linalg.inv(np.eye(D) - self.coef_matrix())
        return A.T @ np.diag(self.noise_sd ** 2) @ A


@dataclass(frozen=True)
class CategoricalBn:
    """Discrete network; ``cpts[v]`` has shape (configurations of parents, levels[v]).

    Parent configurations are enumerated in row-major order over the parents
    sorted by index, i.e. ``np.ravel_multi_index`` of their codes.
    """

    dag: Dag
    levels: tuple
    cpts: tuple
    names: tuple = ()

    def __post_init__(self):
        D = self.dag.D
        levels = tuple(int(l) for l in self.levels)
        if len(levels) != D or len(self.cpts) != D:
            raise SchemaError("levels/cpts must have one entry per node")
        cpts = []
        for v in range(D):
            t = np.asarray(self.cpts[v], dtype=float)
            q = int(np.prod([levels[p] for p in self.dag.parents(v)], dtype=np.int64))
            if t.shape != (q, levels[v]):
                raise SchemaError(f"node {v}: CPT shape {t.shape}, expected {(q, levels[v])}")
            if (t < 0).any():
                raise CptNotNormalized(f"node {v}: negative probability")
            bad = np.abs(t.sum(axis=1) - 1.0) > 1e-9
            if bad.any():
                raise CptNotNormalized(f"node {v}: CPT row {int(np.flatnonzero(bad)[0])} sums to {t.sum(axis=1)[bad][0]:.6g}")
            t.setflags(write=False)
            cpts.append(t)
        names = tuple(self.names) if self.names else tuple(f"V{i + 1}" for i in range(D))
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "cpts", tuple(cpts))
        object.__setattr__(self, "names", names)


def random_dag(D: int, avg_neighbors: float, seed: int = 0) -> Dag:
    """Random order, then each forward pair joined with probability avg/(D-1)."""
    if D < 2 or not 0 < avg_neighbors < D - 1:
        raise ValueError("need D >= 2 and 0 < avg_neighbors < D - 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(D)
    p = avg_neighbors / (D - 1)
    take = rng.random((D, D)) < p
    arrows = np.zeros((D, D), dtype=bool)
    for a in range(D):
        for b in range(a + 1, D):
            if take[a, b]:
                arrows[order[a], order[b]] = True
    return Dag(arrows)


def random_coefficients(dag: Dag, seed: int = 0) -> dict:
    """Coefficients uniform on [-1, -0.1] U [0.1, 1]."""
    rng = np.random.default_rng(seed)
    edges = dag.edges()
    lo, hi = BETA_RANGE
    mag = rng.uniform(lo, hi, size=len(edges))
    sign = rng.choice([-1.0, 1.0], size=len(edges))
    return {e: float(s * m) for e, s, m in zip(edges, sign, mag)}


def random_gaussian_bn(D: int, avg_neighbors: float, seed: int = 0) -> GaussianBn:
    ss = np.random.SeedSequence(seed)
    s_dag, s_beta = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    dag = random_dag(D, avg_neighbors, s_dag)
    return GaussianBn(dag, random_coefficients(dag, s_beta))


def sample_gaussian(bn: GaussianBn, n: int, seed: int = 0, names=()) -> ContinuousDataset:
    """Draw n rows, visiting nodes in topological order."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    D = bn.dag.D
    X = np.empty((n, D))
    noise = rng.standard_normal((n, D))
    B = bn.coef_matrix()
    for v in topological_order(bn.dag):
        pa = bn.dag.parents(v)
        col = bn.intercepts[v] + bn.noise_sd[v] * noise[:, v]
        if pa:
            col = col + X[:, list(pa)] @ B[list(pa), v]
        X[:, v] = col
    return ContinuousDataset(X, tuple(names))


def sample_categorical(bn: CategoricalBn, n: int, seed: int = 0) -> CategoricalDataset:
    """Ancestral sampling; each node drawn from the CPT row of its realised parents."""
    rng = np.random.default_rng(seed)
    D = bn.dag.D
    codes = np.zeros((n, D), dtype=np.int64)
    for v in topological_order(bn.dag):
        pa = bn.dag.parents(v)
        if pa:
            cfg = np.ravel_multi_index(tuple(codes[:, p] for p in pa), tuple(bn.levels[p] for p in pa))
        else:
            cfg = np.zeros(n, dtype=np.int64)
        cum = np.cumsum(bn.cpts[v], axis=1)[cfg]
        u = rng.random(n)
        codes[:, v] = np.minimum((u[:, None] >= cum).sum(axis=1), bn.levels[v] - 1)
    return CategoricalDataset(codes, bn.levels, bn.names)


def inject_outliers(data: ContinuousDataset, fraction: float, magnitude: float, seed: int = 0):
    """Shift ceil(fraction * n) random rows by +-magnitude column standard deviations.

    Returns ``(contaminated, labels)`` with ``labels[i]`` True for shifted rows.
    """
    if not 0 < fraction < 0.5 or not magnitude > 0:
        raise ValueError("need 0 < fraction < 0.5 and magnitude > 0")
    n, D = data.values.shape
    m = math.ceil(fraction * n)
    if m == 0:
        raise ValueError("fraction selects no rows")
    rng = np.random.default_rng(seed)
    rows = rng.choice(n, m, replace=False)
    signs = rng.choice([-1.0, 1.0], size=(m, D))
    X = data.values.copy()
    X[rows] += magnitude * data.values.std(axis=0, ddof=1) * signs
    labels = np.zeros(n, dtype=bool)
    labels[rows] = True
    return ContinuousDataset(X, data.names), labels


# -- discrete network files ------------------------------------------------------------


def _parent_keys(parents, levels):
    return [",".join(map(str, combo)) for combo in itertools.product(*(range(levels[p]) for p in parents))]


def categorical_bn_from_dict(obj: dict) -> CategoricalBn:
    try:
        nodes = obj["nodes"]
        names = tuple(str(nd["name"]) for nd in nodes)
        levels = tuple(int(nd["levels"]) for nd in nodes)
        index = {nm: i for i, nm in enumerate(names)}

        def idx(x):
            return int(x) if isinstance(x, int) else index[x]

        arrows = [(idx(a), idx(b)) for a, b in obj.get("arrows", [])]
        tables = obj["cpts"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad network JSON: {exc!r}") from exc
    if len(set(names)) != len(names):
        raise SchemaError("duplicate node names")
    dag = Dag.from_edges(len(names), arrows)
    cpts = []
    for v, nm in enumerate(names):
        entry = tables.get(nm)
        if entry is None:
            raise SchemaError(f"no CPT for node {nm!r}")
        rows = []
        for key in _parent_keys(dag.parents(v), levels):
            if key not in entry:
                raise SchemaError(f"node {nm!r}: missing parent configuration {key!r}")
            rows.append(entry[key])
        if len(entry) != len(rows):
            raise SchemaError(f"node {nm!r}: unexpected parent configurations")
        try:
            table = np.array(rows, dtype=float)
        except ValueError as exc:
            raise SchemaError(f"node {nm!r}: ragged CPT") from exc
        if table.ndim != 2 or table.shape[1] != levels[v]:
            raise SchemaError(f"node {nm!r}: CPT rows must have {levels[v]} entries")
        cpts.append(table)
    return CategoricalBn(dag, levels, tuple(cpts), names)


def categorical_bn_to_dict(bn: CategoricalBn) -> dict:
    out = {
        "nodes": [{"name": nm, "levels": l} for nm, l in zip(bn.names, bn.levels)],
        "arrows": [[bn.names[a], bn.names[b]] for a, b in sorted(bn.dag.edges())],
        "cpts": {},
    }
    for v, nm in enumerate(bn.names):
        keys = _parent_keys(bn.dag.parents(v), bn.levels)
        out["cpts"][nm] = {k: bn.cpts[v][r].tolist() for r, k in enumerate(keys)}
    return out


def load_categorical_bn(path) -> CategoricalBn:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    return categorical_bn_from_dict(obj)
