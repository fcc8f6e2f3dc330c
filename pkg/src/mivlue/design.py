"""Randomization designs as explicit supports with a probability mass function."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .graph import Coloring, Graph, treated_degrees

__all__ = [
    "Design",
    "bernoulli_design",
    "crd_design",
    "mixture",
    "coloring_design",
    "orbit_design_ring",
    "joint_propensity",
    "joint_table",
    "marginal_propensity",
    "bitstring",
    "parse_bitstring",
    "read_design",
    "write_design",
]

PMF_TOL = 1e-12


def bitstring(z) -> str:
    return "".join("1" if v else "0" for v in np.asarray(z).tolist())


def parse_bitstring(s: str) -> np.ndarray:
    if not s or set(s) - {"0", "1"}:
        raise ValueError(f"not a bitstring: {s!r}")
    return np.frombuffer(s.encode(), dtype=np.uint8).astype(np.int8) - ord("0")


def _canonical_order(Z: np.ndarray) -> np.ndarray:
    # integer value with unit 0 as the least significant bit
    return np.lexsort(Z.T)


@dataclass(frozen=True, eq=False)
class Design:
    """Finite design: distinct allocations (rows of ``support``) and their probabilities.

    Rows are kept in canonical order: increasing integer value of the
    allocation read with unit 0 as the least significant bit.
    """

    support: np.ndarray
    pmf: np.ndarray

    def __post_init__(self):
        Z = np.array(self.support, dtype=np.int8, copy=True)
        p = np.array(self.pmf, dtype=np.float64, copy=True)
        if Z.ndim != 2 or Z.shape[0] == 0:
            raise ValueError("support must be a non-empty (m, n) array")
        if p.shape != (Z.shape[0],):
            raise ValueError(f"pmf has shape {p.shape}, expected ({Z.shape[0]},)")
        if not np.isin(Z, (0, 1)).all():
            raise ValueError("allocations must be binary")
        if np.any(p <= 0):
            raise ValueError("probabilities must be strictly positive on the support")
        if abs(p.sum() - 1.0) > PMF_TOL:
            raise ValueError(f"pmf sums to {p.sum()!r}, not 1")
        if len(np.unique(Z, axis=0)) != len(Z):
            raise ValueError("support contains duplicate allocations")
        order = _canonical_order(Z)
        Z, p = Z[order], p[order]
        Z.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "support", Z)
        object.__setattr__(self, "pmf", p)

    @property
    def n(self) -> int:
        return self.support.shape[1]

    @property
    def size(self) -> int:
        return self.support.shape[0]

    def __len__(self):
        return self.size

    def index(self, z) -> int:
        """Row of allocation ``z`` in the support; ``KeyError`` if unsupported."""
        z = np.asarray(z, dtype=np.int8)
        hits = np.flatnonzero((self.support == z).all(axis=1))
        if not len(hits):
            raise KeyError(f"allocation {bitstring(z)} is not in the support")
        return int(hits[0])

    def prob(self, z) -> float:
        try:
            return float(self.pmf[self.index(z)])
        except KeyError:
            return 0.0

    def degrees(self, g: Graph) -> np.ndarray:
        """Treated degree of every unit under every supported allocation."""
        if g.n != self.n:
            raise ValueError(f"graph has {g.n} units, design has {self.n}")
        return treated_degrees(g, self.support)

    def __eq__(self, other):
        return (
            isinstance(other, Design)
            and self.support.shape == other.support.shape
            and np.array_equal(self.support, other.support)
            and np.allclose(self.pmf, other.pmf, rtol=0, atol=1e-12)
        )

    def __repr__(self):
        return f"Design(n={self.n}, size={self.size})"


def _all_allocations(n: int) -> np.ndarray:
    codes = np.arange(2**n, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(np.int8)


def bernoulli_design(
    n: int,
    q: float = 0.5,
    exclude_trivial: bool = False,
    cap: int = 2**13,
    seed=None,
    reweight: bool = False,
) -> Design:
    """Bernoulli(q) trial, enumerated when small and subsampled otherwise.

    When the (possibly trivial-excluded) cube has at most ``cap`` points it is
    enumerated with renormalized Bernoulli masses. Otherwise ``cap`` distinct
    non-trivial allocations are drawn uniformly without replacement and given
    uniform mass, or renormalized Bernoulli masses when ``reweight`` is set.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if cap < 2:
        raise ValueError("cap must be at least 2")
    if n < 1:
        raise ValueError("n must be at least 1")
    full = 2.0**n - (2 if exclude_trivial else 0)
    if full < 1:
        raise ValueError("no allocations left after excluding the trivial ones")
    if full <= cap:
        Z = _all_allocations(n)
        if exclude_trivial:
            s = Z.sum(axis=1)
            Z = Z[(s > 0) & (s < n)]
        s = Z.sum(axis=1)
        w = q**s * (1.0 - q) ** (n - s)
        return Design(Z, w / w.sum())

    rng = np.random.default_rng(seed)
    rows, seen = [], set()
    while len(rows) < cap:
        batch = (rng.random((2 * (cap - len(rows)) + 8, n)) < 0.5).astype(np.int8)
        for z in batch:
            s = int(z.sum())
            if s == 0 or s == n:
                continue
            key = z.tobytes()
            if key in seen:
                continue
            seen.add(key)
            rows.append(z)
            if len(rows) == cap:
                break
    Z = np.array(rows, dtype=np.int8)
    if reweight:
        s = Z.sum(axis=1)
        w = q**s * (1.0 - q) ** (n - s)
        return Design(Z, w / w.sum())
    return Design(Z, np.full(cap, 1.0 / cap))


def crd_design(n: int, k: int) -> Design:
    """Completely randomized design treating exactly ``k`` of ``n`` units."""
    if not 0 <= k <= n:
        raise ValueError(f"k must satisfy 0 <= k <= n, got k={k}, n={n}")
    rows = []
    for idx in itertools.combinations(range(n), k):
        z = np.zeros(n, dtype=np.int8)
        z[list(idx)] = 1
        rows.append(z)
    return Design(np.array(rows), np.full(len(rows), 1.0 / len(rows)))


def mixture(designs, weights) -> Design:
    """Mixture of designs over the same units; duplicate allocations are merged."""
    designs = list(designs)
    weights = np.asarray(weights, dtype=np.float64)
    if len(designs) == 0 or weights.shape != (len(designs),):
        raise ValueError("need one weight per design")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > PMF_TOL:
        raise ValueError("mixture weights must be nonnegative and sum to 1")
    n = designs[0].n
    if any(d.n != n for d in designs):
        raise ValueError("all designs must have the same number of units")
    acc = {}
    for d, w in zip(designs, weights):
        if w == 0:
            continue
        for z, pz in zip(d.support, d.pmf):
            key = z.tobytes()
            acc[key] = acc.get(key, 0.0) + w * pz
    Z = np.array([np.frombuffer(k, dtype=np.int8) for k in acc])
    p = np.array(list(acc.values()))
    return Design(Z, p / p.sum())


def coloring_design(coloring: Coloring) -> Design:
    """Uniform over the all-control allocation and one allocation per color class."""
    n = coloring.n
    rows = [np.zeros(n, dtype=np.int8)]
    for c in coloring.classes:
        z = np.zeros(n, dtype=np.int8)
        z[list(c)] = 1
        rows.append(z)
    return Design(np.array(rows), np.full(len(rows), 1.0 / len(rows)))


def orbit_design_ring(n: int, base) -> Design:
    """Uniform design over the distinct cyclic rotations of ``base``."""
    base = np.asarray(base, dtype=np.int8)
    if base.shape != (n,):
        raise ValueError(f"base has shape {base.shape}, expected ({n},)")
    rots = np.unique(np.array([np.roll(base, s) for s in range(n)]), axis=0)
    return Design(rots, np.full(len(rots), 1.0 / len(rots)))


def joint_table(d: Design, g: Graph, max_deg: int | None = None) -> np.ndarray:
    """``T[i, t, k] = Pr[z_i = t, d_i = k]`` for every unit, arm and treated degree."""
    D = d.degrees(g)
    if max_deg is None:
        max_deg = max(g.max_degree, int(D.max(initial=0)))
    return kernels.cell_sums(d.support, D, d.pmf, max_deg=max_deg)


def joint_propensity(d: Design, g: Graph, i: int, z_val: int, deg_val: int) -> float:
    """``Pr[z_i = z_val, d_i = deg_val]`` computed exactly over the support."""
    if not 0 <= i < d.n:
        raise IndexError(f"unit index {i} out of range for n={d.n}")
    D = d.degrees(g)
    mask = (d.support[:, i] == z_val) & (D[:, i] == deg_val)
    return float(d.pmf[mask].sum())


def marginal_propensity(d: Design) -> np.ndarray:
    """``Pr[z_i = 1]`` for each unit."""
    return d.pmf @ d.support.astype(np.float64)


# -- design files -------------------------------------------------------------

def write_design(d: Design, path) -> None:
    lines = [f"{bitstring(z)} {p!r}" for z, p in zip(d.support, d.pmf.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_design(path) -> Design:
    rows, probs = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected '<bitstring> <prob>'")
        try:
            rows.append(parse_bitstring(parts[0]))
            probs.append(float(parts[1]))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
        if rows and len(rows[-1]) != len(rows[0]):
            raise ValueError(f"{path}:{lineno}: allocation length differs from first line")
    if not rows:
        raise ValueError(f"{path}: empty design file")
    try:
        return Design(np.array(rows), np.array(probs))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
