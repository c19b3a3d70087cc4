"""Datasets, graph containers, CSV ingestion and graph serialisation."""

from __future__ import annotations

import csv
import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConstantColumn,
    CycleDetected,
    InconsistentConstraints,
    InvalidDataset,
    MissingCell,
    NonNumericCell,
    SchemaError,
)

MIN_ROWS = 5


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _default_names(D: int) -> tuple[str, ...]:
    return tuple(f"V{i + 1}" for i in range(D))


@dataclass(frozen=True)
class ContinuousDataset:
    """All-real n x D table (Gaussian path)."""

    values: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2:
            raise InvalidDataset("values must be a 2-d matrix")
        n, D = values.shape
        names = tuple(self.names) if self.names else _default_names(D)
        if len(names) != D:
            raise InvalidDataset(f"{len(names)} names for {D} columns")
        if n < MIN_ROWS:
            raise InvalidDataset(f"need at least {MIN_ROWS} rows, got {n}")
        bad = ~np.isfinite(values)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise InvalidDataset(f"non-finite entry at row {r}, column {names[c]!r}")
        var = values.var(axis=0)
        for j in np.flatnonzero(var <= 0):
            raise ConstantColumn(f"column {names[j]!r} is constant")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]

    def take_rows(self, rows) -> "ContinuousDataset":
        return ContinuousDataset(self.values[np.asarray(rows, dtype=int)], self.names)

    def permute_columns(self, perm) -> "ContinuousDataset":
        perm = list(perm)
        return ContinuousDataset(self.values[:, perm], tuple(self.names[p] for p in perm))


@dataclass(frozen=True)
class CategoricalDataset:
    """Integer-coded n x D table; column j takes codes 0..levels[j]-1.

    ``labels[j][c]`` is the original string for code ``c`` of column ``j``
    when the data came from a CSV file.
    """

    codes: np.ndarray
    levels: tuple[int, ...] = ()
    names: tuple[str, ...] = ()
    labels: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 2:
            raise InvalidDataset("codes must be a 2-d matrix")
        if not np.issubdtype(codes.dtype, np.integer):
            if not np.all(np.equal(np.mod(codes, 1), 0)):
                raise InvalidDataset("categorical codes must be integers")
        codes = np.array(codes, dtype=np.int64, copy=True)
        n, D = codes.shape
        names = tuple(self.names) if self.names else _default_names(D)
        if len(names) != D:
            raise InvalidDataset(f"{len(names)} names for {D} columns")
        if n < 1:
            raise InvalidDataset("empty dataset")
        levels = tuple(int(v) for v in self.levels) if self.levels else tuple(int(v) + 1 for v in codes.max(axis=0))
        if len(levels) != D:
            raise InvalidDataset("levels length does not match column count")
        for j in range(D):
            col = codes[:, j]
            if col.min() != 0:
                raise InvalidDataset(f"column {names[j]!r}: codes must start from 0")
            if col.max() >= levels[j]:
                raise InvalidDataset(f"column {names[j]!r}: code {col.max()} outside 0..{levels[j] - 1}")
            if levels[j] < 2:
                raise ConstantColumn(f"column {names[j]!r} has a single level")
        object.__setattr__(self, "codes", _frozen(codes))
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "labels", tuple(tuple(l) for l in self.labels))

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def D(self) -> int:
        return self.codes.shape[1]

    def decode(self) -> list[list[str]]:
        """Map codes back to the original strings (requires ``labels``)."""
        if not self.labels:
            raise InvalidDataset("dataset carries no label mapping")
        return [[self.labels[j][c] for j, c in enumerate(row)] for row in self.codes]

    def permute_columns(self, perm) -> "CategoricalDataset":
        perm = list(perm)
        return CategoricalDataset(
            self.codes[:, perm],
            tuple(self.levels[p] for p in perm),
            tuple(self.names[p] for p in perm),
            tuple(self.labels[p] for p in perm) if self.labels else (),
        )


Dataset = ContinuousDataset | CategoricalDataset


# -- graphs -----------------------------------------------------------------


@dataclass(frozen=True)
class Skeleton:
    adj: np.ndarray

    def __post_init__(self):
        adj = np.array(self.adj, dtype=bool, copy=True)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        if not (adj == adj.T).all():
            raise ValueError("skeleton adjacency must be symmetric")
        if adj.diagonal().any():
            raise ValueError("skeleton adjacency must have a zero diagonal")
        object.__setattr__(self, "adj", _frozen(adj))

    @property
    def D(self) -> int:
        return self.adj.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adj, 1))
        return list(zip(i.tolist(), j.tolist()))

    def __eq__(self, other):
        return isinstance(other, Skeleton) and np.array_equal(self.adj, other.adj)

    def __hash__(self):
        return hash(self.adj.tobytes())


@dataclass(frozen=True)
class Dag:
    """``arrows[i, j]`` means i -> j."""

    arrows: np.ndarray

    def __post_init__(self):
        arrows = np.array(self.arrows, dtype=bool, copy=True)
        if arrows.ndim != 2 or arrows.shape[0] != arrows.shape[1]:
            raise ValueError("arrow matrix must be square")
        if arrows.diagonal().any():
            raise CycleDetected([int(np.flatnonzero(arrows.diagonal())[0])], "self loop")
        topological_order(arrows)
        object.__setattr__(self, "arrows", _frozen(arrows))

    @classmethod
    def from_edges(cls, D: int, edges: Iterable[tuple[int, int]]) -> "Dag":
        a = np.zeros((D, D), dtype=bool)
        for i, j in edges:
            a[i, j] = True
        return cls(a)

    @property
    def D(self) -> int:
        return self.arrows.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(self.arrows)
        return list(zip(i.tolist(), j.tolist()))

    def parents(self, v: int) -> tuple[int, ...]:
        return tuple(np.flatnonzero(self.arrows[:, v]).tolist())

    def skeleton(self) -> Skeleton:
        return Skeleton(self.arrows | self.arrows.T)

    def __eq__(self, other):
        return isinstance(other, Dag) and np.array_equal(self.arrows, other.arrows)

    def __hash__(self):
        return hash(self.arrows.tobytes())


@dataclass(frozen=True)
class Cpdag:
    """Mixed graph: ``directed`` holds (from, to); ``undirected`` holds (a, b) with a < b."""

    D: int
    directed: frozenset = frozenset()
    undirected: frozenset = frozenset()

    def __post_init__(self):
        directed = frozenset((int(a), int(b)) for a, b in self.directed)
        undirected = frozenset(tuple(sorted((int(a), int(b)))) for a, b in self.undirected)
        pairs = [tuple(sorted(e)) for e in directed]
        if len(set(pairs)) != len(pairs) or set(pairs) & undirected:
            raise ValueError("an adjacent pair may carry only one edge mark")
        for a, b in list(directed) + list(undirected):
            if a == b or not (0 <= a < self.D and 0 <= b < self.D):
                raise ValueError(f"invalid edge ({a}, {b})")
        object.__setattr__(self, "directed", directed)
        object.__setattr__(self, "undirected", undirected)

    def to_matrix(self) -> np.ndarray:
        """PDAG incidence: m[a, b] = m[b, a] = 1 for a - b, m[a, b] = 1 for a -> b."""
        m = np.zeros((self.D, self.D), dtype=np.int8)
        for a, b in self.directed:
            m[a, b] = 1
        for a, b in self.undirected:
            m[a, b] = m[b, a] = 1
        return m

    def skeleton(self) -> Skeleton:
        m = self.to_matrix().astype(bool)
        return Skeleton(m | m.T)

    def as_dag(self) -> Dag:
        if self.undirected:
            raise ValueError("graph has undirected edges")
        return Dag.from_edges(self.D, self.directed)


@dataclass(frozen=True)
class EdgeConstraints:
    """Forbidden (blacklist) and mandatory (whitelist) arrows, as (from, to) indices."""

    blacklist: frozenset = field(default_factory=frozenset)
    whitelist: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        bl = frozenset((int(a), int(b)) for a, b in self.blacklist)
        wl = frozenset((int(a), int(b)) for a, b in self.whitelist)
        clash = bl & wl
        if clash:
            raise InconsistentConstraints(f"arrows both black- and whitelisted: {sorted(clash)}")
        object.__setattr__(self, "blacklist", bl)
        object.__setattr__(self, "whitelist", wl)

    def check(self, D: int) -> None:
        """Raise if the whitelist alone forces a cycle or names a bad index."""
        for a, b in self.blacklist | self.whitelist:
            if a == b or not (0 <= a < D and 0 <= b < D):
                raise InconsistentConstraints(f"invalid arrow ({a}, {b}) for {D} variables")
        m = np.zeros((D, D), dtype=bool)
        for a, b in self.whitelist:
            m[a, b] = True
        try:
            topological_order(m)
        except CycleDetected as exc:
            raise InconsistentConstraints(f"whitelist forces a cycle: {exc}") from exc


def topological_order(d) -> list[int]:
    """Kahn's algorithm, smallest available index first.

    Accepts a :class:`Dag` or a raw square arrow matrix. Raises
    :class:`CycleDetected` with one witnessed cycle when none exists.
    """
    a = np.asarray(d.arrows if isinstance(d, Dag) else d, dtype=bool)
    D = a.shape[0]
    indeg = a.sum(axis=0).astype(int)
    heap = [v for v in range(D) if indeg[v] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        v = heapq.heappop(heap)
        order.append(v)
        for w in np.flatnonzero(a[v]):
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(heap, int(w))
    if len(order) < D:
        raise CycleDetected(_find_cycle(a, set(range(D)) - set(order)))
    return order


def _find_cycle(a: np.ndarray, nodes: set[int]) -> list[int]:
    # every remaining node has an in-edge from another remaining node; walk backwards
    v = min(nodes)
    seen: dict[int, int] = {}
    path = []
    while v not in seen:
        seen[v] = len(path)
        path.append(v)
        v = next(int(u) for u in np.flatnonzero(a[:, v]) if u in nodes)
    cycle = path[seen[v]:]
    return cycle[::-1]


# -- CSV ---------------------------------------------------------------------


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    for k, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise MissingCell(f"{path}: row {k} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            if cell.strip() == "":
                raise MissingCell(f"{path}: missing cell at row {k}, column {header[j]!r}")
    return header, body


def load_csv(path, mode: str = "continuous") -> Dataset:
    """Read a headed CSV file as a continuous or categorical dataset.

    Row numbers in error messages are 1-based file lines (header is line 1).
    Categorical columns are coded 0..k-1 in order of first appearance.
    """
    header, body = _read_rows(path)
    if mode == "continuous":
        values = np.empty((len(body), len(header)))
        for k, row in enumerate(body):
            for j, cell in enumerate(row):
                try:
                    values[k, j] = float(cell)
                except ValueError:
                    raise NonNumericCell(
                        f"{path}: non-numeric cell {cell!r} at row {k + 2}, column {header[j]!r}"
                    ) from None
        return ContinuousDataset(values, tuple(header))
    if mode == "categorical":
        D = len(header)
        maps: list[dict[str, int]] = [{} for _ in range(D)]
        codes = np.empty((len(body), D), dtype=np.int64)
        for k, row in enumerate(body):
            for j, cell in enumerate(row):
                codes[k, j] = maps[j].setdefault(cell.strip(), len(maps[j]))
        labels = tuple(tuple(m) for m in maps)
        return CategoricalDataset(codes, tuple(len(m) for m in maps), tuple(header), labels)
    raise ValueError(f"unknown mode {mode!r}")


def write_csv(path, data: Dataset) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(data.names)
        if isinstance(data, ContinuousDataset):
            w.writerows([[repr(float(x)) for x in row] for row in data.values])
        elif data.labels:
            w.writerows(data.decode())
        else:
            w.writerows(data.codes.tolist())


def load_pairs_csv(path, names: Sequence[str]) -> frozenset:
    """Read a two-column ``from,to`` CSV of variable names into index pairs."""
    header, body = _read_rows(path)
    if [h.lower() for h in header] != ["from", "to"]:
        raise SchemaError(f"{path}: expected header 'from,to', got {','.join(header)!r}")
    index = {nm: i for i, nm in enumerate(names)}
    pairs = set()
    for k, (a, b) in enumerate(body, start=2):
        for nm in (a, b):
            if nm.strip() not in index:
                raise SchemaError(f"{path}: unknown variable {nm!r} at row {k}")
        pairs.add((index[a.strip()], index[b.strip()]))
    return frozenset(pairs)


# -- serialisation -------------------------------------------------------------


def _edge_lists(g) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    if isinstance(g, Dag):
        return sorted(g.edges()), []
    if isinstance(g, Skeleton):
        return [], sorted(g.edges())
    if isinstance(g, Cpdag):
        return sorted(g.directed), sorted(g.undirected)
    raise TypeError(f"not a graph: {type(g).__name__}")


def _dot_id(name: str) -> str:
    return '"' + str(name).replace("\\", "\\\\").replace('"', '\\"') + '"'


def graph_to_dot(g, names: Sequence[str]) -> str:
    """Render a graph as DOT text; edges are emitted in sorted order.

    A Dag becomes a ``digraph`` with ``->`` edges, a Skeleton a ``graph``
    with ``--`` edges. A Cpdag is written as a ``graph``: reversible edges
    are plain ``--`` and compelled ones carry ``[dir=forward]``, since DOT
    forbids mixing ``--`` and ``->`` in one graph.
    """
    directed, undirected = _edge_lists(g)
    D = g.D
    if len(names) != D:
        raise ValueError(f"{len(names)} names for {D} nodes")
    is_digraph = isinstance(g, Dag)
    lines = ["digraph G {" if is_digraph else "graph G {"]
    lines += [f"  {_dot_id(nm)};" for nm in names]
    for a, b in directed:
        if is_digraph:
            lines.append(f"  {_dot_id(names[a])} -> {_dot_id(names[b])};")
        else:
            lines.append(f"  {_dot_id(names[a])} -- {_dot_id(names[b])} [dir=forward];")
    for a, b in undirected:
        lines.append(f"  {_dot_id(names[a])} -- {_dot_id(names[b])};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_to_json(g, names: Sequence[str]) -> dict:
    directed, undirected = _edge_lists(g)
    return {
        "nodes": list(names),
        "directed": [[names[a], names[b]] for a, b in directed],
        "undirected": [[names[a], names[b]] for a, b in undirected],
    }


def graph_from_json(obj: dict) -> tuple[tuple[str, ...], Cpdag]:
    """Parse the JSON graph format back into (names, Cpdag)."""
    try:
        names = tuple(obj["nodes"])
        index = {nm: i for i, nm in enumerate(names)}
        directed = [(index[a], index[b]) for a, b in obj.get("directed", [])]
        undirected = [(index[a], index[b]) for a, b in obj.get("undirected", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad graph JSON: {exc}") from exc
    return names, Cpdag(len(names), frozenset(directed), frozenset(undirected))


def write_graph_json(path, g, names) -> None:
    Path(path).write_text(json.dumps(graph_to_json(g, names), indent=2) + "\n")


def read_graph_json(path) -> tuple[tuple[str, ...], Cpdag]:
    return graph_from_json(json.loads(Path(path).read_text()))
