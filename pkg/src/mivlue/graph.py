"""Directed interference graphs, neighborhood queries and seeded generators.

Entry ``adj[i, j] == 1`` means an edge from unit ``i`` to unit ``j``; unit ``j``
then counts ``i`` among its (in-)neighbors. Treated degrees are therefore
``adj.T @ z``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components as _cc

__all__ = [
    "Graph",
    "Coloring",
    "FAMILIES",
    "neighborhood",
    "treated_degree",
    "treated_degrees",
    "shared_neighbor_graph",
    "connected_components",
    "greedy_coloring",
    "generate",
    "read_edgelist",
    "write_edgelist",
]


@dataclass(frozen=True, eq=False)
class Graph:
    """Binary adjacency over ``n`` units with an empty diagonal."""

    adj: np.ndarray

    def __post_init__(self):
        a = np.array(self.adj, dtype=np.int8, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"adjacency must be a non-empty square matrix, got {a.shape}")
        if not np.isin(a, (0, 1)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        if np.any(np.diag(a)):
            raise ValueError("self loops are not allowed (adj[i, i] must be 0)")
        a.setflags(write=False)
        object.__setattr__(self, "adj", a)

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    @property
    def in_degree(self) -> np.ndarray:
        return self.adj.sum(axis=0).astype(np.int64)

    @property
    def max_degree(self) -> int:
        return int(self.in_degree.max(initial=0))

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.adj, self.adj.T))

    def num_edges(self) -> int:
        """Directed edge count (an undirected edge counts twice)."""
        return int(self.adj.sum())

    def in_neighbors(self, i: int) -> np.ndarray:
        """Sorted in-neighbors of ``i`` as an index array."""
        return np.flatnonzero(self.adj[:, i])

    def __eq__(self, other):
        return isinstance(other, Graph) and np.array_equal(self.adj, other.adj)

    def __hash__(self):
        return hash(self.adj.tobytes())

    def __repr__(self):
        return f"Graph(n={self.n}, edges={self.num_edges()})"

    @classmethod
    def from_edges(cls, n: int, edges, undirected: bool = False) -> "Graph":
        a = np.zeros((n, n), dtype=np.int8)
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={n}")
            a[i, j] = 1
            if undirected:
                a[j, i] = 1
        return cls(a)


@dataclass(frozen=True)
class Coloring:
    """Partition of the units into independent sets."""

    classes: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "classes", tuple(tuple(sorted(int(u) for u in c)) for c in self.classes)
        )

    @property
    def n(self) -> int:
        return sum(len(c) for c in self.classes)

    def validate(self, g: Graph) -> None:
        seen = sorted(u for c in self.classes for u in c)
        if seen != list(range(g.n)):
            raise ValueError("coloring classes must partition the unit set")
        for c in self.classes:
            idx = np.asarray(c, dtype=np.int64)
            if np.any(g.adj[np.ix_(idx, idx)]):
                raise ValueError(f"class {c} is not an independent set")


def _check_unit(g: Graph, i: int) -> int:
    if not 0 <= i < g.n:
        raise IndexError(f"unit index {i} out of range for n={g.n}")
    return int(i)


def neighborhood(g: Graph, i: int) -> frozenset:
    """Units with an edge directed towards ``i``."""
    i = _check_unit(g, i)
    return frozenset(int(j) for j in g.in_neighbors(i))


def treated_degree(g: Graph, z, i: int) -> int:
    """Number of treated in-neighbors of unit ``i`` under allocation ``z``."""
    i = _check_unit(g, i)
    z = np.asarray(z)
    if z.shape != (g.n,):
        raise ValueError(f"allocation has length {z.shape}, expected ({g.n},)")
    return int(g.adj[:, i].astype(np.int64) @ z.astype(np.int64))


def treated_degrees(g: Graph, Z) -> np.ndarray:
    """Treated degrees for a batch of allocations, shape ``(m, n)``.

    Accepts a single allocation (returns shape ``(n,)``) or an ``(m, n)`` array.
    """
    Z = np.asarray(Z)
    if Z.shape[-1] != g.n:
        raise ValueError(f"allocations have length {Z.shape[-1]}, expected {g.n}")
    return (Z.astype(np.int64) @ g.adj.astype(np.int64)).astype(np.int64)


def shared_neighbor_graph(g: Graph) -> Graph:
    """Undirected graph joining units that share at least one in-neighbor."""
    a = g.adj.astype(np.int64)
    h = (a.T @ a > 0).astype(np.int8)
    np.fill_diagonal(h, 0)
    return Graph(h)


def connected_components(g: Graph) -> list:
    """Weakly connected components as a list of frozensets, ordered by smallest member."""
    _, labels = _cc(csr_matrix(g.adj), directed=True, connection="weak")
    comps = {}
    for u, lab in enumerate(labels):
        comps.setdefault(int(lab), []).append(u)
    return sorted((frozenset(c) for c in comps.values()), key=min)


def greedy_coloring(g: Graph) -> Coloring:
    """First-fit coloring in natural vertex order, ignoring edge direction."""
    und = (g.adj | g.adj.T).astype(bool)
    color = np.full(g.n, -1, dtype=np.int64)
    for v in range(g.n):
        used = set(color[und[v]].tolist())
        c = 0
        while c in used:
            c += 1
        color[v] = c
    classes = [np.flatnonzero(color == c).tolist() for c in range(int(color.max()) + 1)]
    return Coloring(tuple(classes))


# -- generators ---------------------------------------------------------------

FAMILIES = (
    "empty",
    "complete",
    "ring",
    "triangle_tail_v3",
    "triangle_tail_v1",
    "erdos_renyi",
    "pref_attach",
)


def _erdos_renyi(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return (upper | upper.T).astype(np.int8)


def _pref_attach(n: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    a = np.zeros((n, n), dtype=np.int8)
    if n == 1:
        return a
    deg = np.zeros(n, dtype=np.float64)
    a[0, 1] = a[1, 0] = 1
    deg[:2] = 1.0
    for t in range(2, n):
        d = deg[:t]
        w = np.where(d > 0, d, 0.0) ** rho
        w[d == 0] = w[d > 0].min() if np.any(d > 0) else 1.0
        target = rng.choice(t, p=w / w.sum())
        a[t, target] = a[target, t] = 1
        deg[t] += 1
        deg[target] += 1
    perm = rng.permutation(n)
    return a[np.ix_(perm, perm)]


def generate(family: str, n: int, seed=None, p: float | None = None, rho: float | None = None) -> Graph:
    """Build a graph from one of :data:`FAMILIES`.

    ``erdos_renyi`` needs the edge probability ``p``; ``pref_attach`` needs the
    attachment power ``rho``. Random families are undirected and fully
    determined by ``seed``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    if family == "empty":
        return Graph(np.zeros((n, n), dtype=np.int8))
    if family == "complete":
        return Graph(1 - np.eye(n, dtype=np.int8))
    if family == "ring":
        if n < 3:
            raise ValueError("ring needs n >= 3")
        return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)], undirected=True)
    if family in ("triangle_tail_v3", "triangle_tail_v1"):
        if n != 4:
            raise ValueError(f"{family} is defined for n=4 only")
        tail = (2, 3) if family == "triangle_tail_v3" else (0, 3)
        return Graph.from_edges(4, [(0, 1), (0, 2), (1, 2), tail], undirected=True)
    if family == "erdos_renyi":
        if p is None or not 0.0 <= p <= 1.0:
            raise ValueError(f"erdos_renyi needs 0 <= p <= 1, got {p}")
        return Graph(_erdos_renyi(n, p, rng))
    if family == "pref_attach":
        if rho is None or rho < 0:
            raise ValueError(f"pref_attach needs rho >= 0, got {rho}")
        return Graph(_pref_attach(n, float(rho), rng))
    raise ValueError(f"unknown graph family {family!r}; expected one of {FAMILIES}")


# -- edge-list files ----------------------------------------------------------

def write_edgelist(g: Graph, path) -> None:
    rows, cols = np.nonzero(g.adj)
    lines = [f"n {g.n}"] + [f"{i} {j}" for i, j in zip(rows.tolist(), cols.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edgelist(path, symmetrize: bool = False) -> Graph:
    """Parse the ``n <count>`` / ``i j`` edge-list format."""
    n = None
    edges = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if n is None:
            if len(parts) != 2 or parts[0] != "n":
                raise ValueError(f"{path}:{lineno}: expected header 'n <count>'")
            n = int(parts[1])
            continue
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'i j', got {raw!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-integer vertex in {raw!r}") from exc
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"{path}:{lineno}: edge ({i}, {j}) out of range for n={n}")
        if i == j:
            raise ValueError(f"{path}:{lineno}: self loop on {i}")
        edges.append((i, j))
    if n is None:
        raise ValueError(f"{path}: empty edge-list file")
    return Graph.from_edges(n, edges, undirected=symmetrize)
