"""Potential-outcome parameterizations under neighborhood interference.

Every model is ``Y_i(z) = alpha_i + beta_i z_i + (interference) + z_i (interaction)``;
the kinds differ in how the interference and interaction terms are indexed:

=========  ==========================================================
kind       interference / interaction terms
=========  ==========================================================
SUTVA      none
NIA        ``Gamma_i(z_N) + z_i Delta_i(z_N)`` keyed by neighbor pattern
ANIA       ``Gamma_i(z_N)``
SNIA       ``Gamma_i(d) + z_i Delta_i(d)`` keyed by treated degree
SANIA      ``Gamma_i(d)``
NAIA       ``sum_j gamma_ji z_j + z_i sum_j delta_ji z_j`` per edge
ANAIA      ``sum_j gamma_ji z_j``
SNAIA      ``gamma_i d + delta_i d z_i``
SANAIA     ``gamma_i d``
NASIA      ``sum_j gamma_j z_j + z_i sum_j delta_j z_j`` per sender
ANASIA     ``sum_j gamma_j z_j``
SNASIA     ``gamma_i d + delta_i d z_i``, constant on shared-neighbor components
SANASIA    ``gamma_i d``, constant on shared-neighbor components
=========  ==========================================================

Neighbor patterns are bitmasks: bit ``r`` is the treatment of the ``r``-th
in-neighbor in ascending index order.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .graph import Graph, connected_components, shared_neighbor_graph, treated_degrees

__all__ = [
    "ModelKind",
    "ParamSet",
    "SamplingSpec",
    "evaluate",
    "outcomes",
    "estimand_beta_bar",
    "sample_params",
    "upcast",
    "neighbor_patterns",
    "component_labels",
    "read_params",
    "write_params",
]


class ModelKind(str, enum.Enum):
    SUTVA = "SUTVA"
    NIA = "NIA"
    SNIA = "SNIA"
    ANIA = "ANIA"
    NAIA = "NAIA"
    SANIA = "SANIA"
    SNAIA = "SNAIA"
    ANAIA = "ANAIA"
    NASIA = "NASIA"
    SANAIA = "SANAIA"
    SNASIA = "SNASIA"
    ANASIA = "ANASIA"
    SANASIA = "SANASIA"

    @property
    def symmetric_received(self) -> bool:
        return self.value.startswith("S") and self is not ModelKind.SUTVA

    @property
    def additive_main(self) -> bool:
        return self in _ADDITIVE_MAIN

    @property
    def additive_interference(self) -> bool:
        return self in _ADDITIVE_INTERFERENCE

    @property
    def symmetric_sent(self) -> bool:
        return self.value.endswith("SIA") and self is not ModelKind.SUTVA

    @classmethod
    def parse(cls, tag) -> "ModelKind":
        if isinstance(tag, ModelKind):
            return tag
        try:
            return cls(str(tag).upper())
        except ValueError:
            raise ValueError(f"unknown model kind {tag!r}") from None


K = ModelKind
_ADDITIVE_MAIN = {K.ANIA, K.SANIA, K.ANAIA, K.SANAIA, K.ANASIA, K.SANASIA}
_ADDITIVE_INTERFERENCE = {K.NAIA, K.ANAIA, K.SNAIA, K.SANAIA, K.NASIA, K.ANASIA, K.SNASIA, K.SANASIA}

# Which ParamSet fields each kind reads.
_FIELDS = {
    K.SUTVA: (),
    K.NIA: ("gamma_map", "delta_map"),
    K.ANIA: ("gamma_map",),
    K.SNIA: ("gamma_deg", "delta_deg"),
    K.SANIA: ("gamma_deg",),
    K.NAIA: ("gamma_edge", "delta_edge"),
    K.ANAIA: ("gamma_edge",),
    K.SNAIA: ("gamma_unit", "delta_unit"),
    K.SANAIA: ("gamma_unit",),
    K.NASIA: ("gamma_sender", "delta_sender"),
    K.ANASIA: ("gamma_sender",),
    K.SNASIA: ("gamma_unit", "delta_unit"),
    K.SANASIA: ("gamma_unit",),
}


@dataclass(frozen=True, eq=False)
class ParamSet:
    """Parameter values for one of the :class:`ModelKind` parameterizations.

    Only the fields the kind reads need to be set; the rest stay ``None``.
    Degree tables have column ``d`` for treated degree ``d`` and column 0 is
    always zero. Pattern maps are per-unit dicts ``{bitmask: value}`` with
    missing patterns meaning 0.
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma_map: tuple | None = None
    delta_map: tuple | None = None
    gamma_deg: np.ndarray | None = None
    delta_deg: np.ndarray | None = None
    gamma_edge: np.ndarray | None = None
    delta_edge: np.ndarray | None = None
    gamma_unit: np.ndarray | None = None
    delta_unit: np.ndarray | None = None
    gamma_sender: np.ndarray | None = None
    delta_sender: np.ndarray | None = None

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma_deg", "delta_deg", "gamma_edge",
                     "delta_edge", "gamma_unit", "delta_unit", "gamma_sender", "delta_sender"):
            val = getattr(self, name)
            if val is not None:
                arr = np.array(val, dtype=np.float64, copy=True)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        for name in ("gamma_map", "delta_map"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, tuple({int(k): float(v) for k, v in m.items()} for m in val))
        if self.alpha.ndim != 1 or self.alpha.shape != self.beta.shape:
            raise ValueError("alpha and beta must be vectors of equal length")

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    def validate(self, kind: ModelKind, g: Graph) -> None:
        kind = ModelKind.parse(kind)
        n = g.n
        if self.n != n:
            raise ValueError(f"parameters are for {self.n} units, graph has {n}")
        for name in _FIELDS[kind]:
            val = getattr(self, name)
            if val is None:
                raise ValueError(f"{kind.value} needs parameter family {name!r}")
            if name.endswith("_deg"):
                if val.ndim != 2 or val.shape[0] != n or val.shape[1] < g.max_degree + 1:
                    raise ValueError(f"{name} must have shape (n, >= max_degree + 1)")
                if np.any(val[:, 0] != 0):
                    raise ValueError(f"{name}[:, 0] must be 0 (no treated neighbors)")
            elif name.endswith("_edge"):
                if val.shape != (n, n):
                    raise ValueError(f"{name} must have shape (n, n)")
            elif name.endswith("_map"):
                if len(val) != n:
                    raise ValueError(f"{name} needs one map per unit")
                for i, mp in enumerate(val):
                    if mp.get(0, 0.0) != 0.0:
                        raise ValueError(f"{name}[{i}] must vanish on the empty pattern")
            elif val.shape != (n,):
                raise ValueError(f"{name} must have shape (n,)")
        if kind.symmetric_sent:
            labels = component_labels(g)
            for name in _FIELDS[kind]:
                val = getattr(self, name)
                for c in np.unique(labels):
                    vals = val[labels == c]
                    if np.ptp(vals) > 1e-12 * max(1.0, np.abs(vals).max()):
                        raise ValueError(
                            f"{kind.value}: {name} must be constant on each shared-neighbor component"
                        )


def component_labels(g: Graph) -> np.ndarray:
    """Component index of each unit in the shared-neighbor graph."""
    labels = np.empty(g.n, dtype=np.int64)
    for c, comp in enumerate(connected_components(shared_neighbor_graph(g))):
        labels[list(comp)] = c
    return labels


def neighbor_patterns(g: Graph, Z) -> np.ndarray:
    """Bitmask of treated in-neighbors for each allocation and unit, shape ``(m, n)``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.int64))
    out = np.zeros(Z.shape, dtype=np.int64)
    for i in range(g.n):
        nb = g.in_neighbors(i)
        if len(nb) > 62:
            raise ValueError(f"unit {i} has {len(nb)} neighbors; pattern keys overflow")
        if len(nb):
            out[:, i] = Z[:, nb] @ (np.int64(1) << np.arange(len(nb), dtype=np.int64))
    return out


def _lookup(maps, P):
    out = np.zeros(P.shape, dtype=np.float64)
    for i, mp in enumerate(maps):
        if mp:
            out[:, i] = [mp.get(int(k), 0.0) for k in P[:, i]]
    return out


def outcomes(kind, params: ParamSet, g: Graph, Z) -> np.ndarray:
    """Potential outcomes of all units for a batch of allocations, shape ``(m, n)``."""
    kind = ModelKind.parse(kind)
    params.validate(kind, g)
    single = np.asarray(Z).ndim == 1
    Z = np.atleast_2d(np.asarray(Z, dtype=np.int64))
    if Z.shape[1] != g.n:
        raise ValueError(f"allocations have length {Z.shape[1]}, expected {g.n}")
    zf = Z.astype(np.float64)
    Y = params.alpha + params.beta * zf
    if kind is K.SUTVA:
        pass
    elif kind in (K.NIA, K.ANIA):
        P = neighbor_patterns(g, Z)
        Y = Y + _lookup(params.gamma_map, P)
        if kind is K.NIA:
            Y = Y + zf * _lookup(params.delta_map, P)
    elif kind in (K.SNIA, K.SANIA):
        D = treated_degrees(g, Z)
        rows = np.arange(g.n)
        Y = Y + params.gamma_deg[rows, D]
        if kind is K.SNIA:
            Y = Y + zf * params.delta_deg[rows, D]
    elif kind in (K.NAIA, K.ANAIA):
        a = g.adj.astype(np.float64)
        Y = Y + zf @ (a * params.gamma_edge)
        if kind is K.NAIA:
            Y = Y + zf * (zf @ (a * params.delta_edge))
    elif kind in (K.NASIA, K.ANASIA):
        a = g.adj.astype(np.float64)
        Y = Y + (zf * params.gamma_sender) @ a
        if kind is K.NASIA:
            Y = Y + zf * ((zf * params.delta_sender) @ a)
    else:  # SNAIA, SANAIA, SNASIA, SANASIA
        D = treated_degrees(g, Z).astype(np.float64)
        Y = Y + params.gamma_unit * D
        if kind in (K.SNAIA, K.SNASIA):
            Y = Y + params.delta_unit * D * zf
    return Y[0] if single else Y


def evaluate(kind, params: ParamSet, g: Graph, z, i: int) -> float:
    """Potential outcome ``Y_i(z)``."""
    if not 0 <= i < g.n:
        raise IndexError(f"unit index {i} out of range for n={g.n}")
    z = np.asarray(z)
    if z.shape != (g.n,):
        raise ValueError(f"allocation has length {z.shape}, expected ({g.n},)")
    return float(outcomes(kind, params, g, z[None, :])[0, i])


def estimand_beta_bar(params: ParamSet) -> float:
    """Average direct treatment effect."""
    return float(np.mean(params.beta))


# -- sampling -----------------------------------------------------------------

@dataclass(frozen=True)
class SamplingSpec:
    """Independent normal draws for each parameter family.

    Interference terms have mean ``gamma_slope * d`` for degree-indexed
    families, ``gamma_slope * |pattern|`` for pattern maps and
    ``gamma_slope`` for per-edge, per-sender and per-unit slopes; likewise
    for the interaction terms with ``delta_slope``.
    """

    alpha_mean: float = 0.0
    alpha_var: float = 1.0
    beta_mean: float = 0.0
    beta_var: float = 1.0
    gamma_slope: float = 0.0
    gamma_var: float = 1.0
    delta_slope: float = 0.0
    delta_var: float = 1.0

    def __post_init__(self):
        for name in ("alpha_var", "beta_var", "gamma_var", "delta_var"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def _popcount(x: int) -> int:
    return bin(x).count("1")


def sample_params(kind, g: Graph, spec: SamplingSpec = SamplingSpec(), seed=None) -> ParamSet:
    """Draw a ParamSet of the given kind.

    The draw order is fixed (alpha, beta, then interference, then
    interaction) and degree tables always span degrees ``1..n-1``, so two calls
    with the same seed and different means differ only by the mean shift.
    """
    kind = ModelKind.parse(kind)
    rng = np.random.default_rng(seed)
    n = g.n
    s = spec
    alpha = s.alpha_mean + np.sqrt(s.alpha_var) * rng.standard_normal(n)
    beta = s.beta_mean + np.sqrt(s.beta_var) * rng.standard_normal(n)
    kw = {}

    def deg_table(slope, var):
        tab = np.zeros((n, max(n, 1)))
        d = np.arange(1, n)
        tab[:, 1:] = slope * d + np.sqrt(var) * rng.standard_normal((n, n - 1))
        return tab

    def pattern_maps(slope, var):
        maps = []
        for i in range(n):
            di = len(g.in_neighbors(i))
            if di > 20:
                raise ValueError(f"unit {i} has degree {di}; too many neighbor patterns to sample")
            keys = np.arange(1, 2**di)
            vals = slope * np.array([_popcount(int(k)) for k in keys]) + np.sqrt(var) * rng.standard_normal(len(keys))
            maps.append(dict(zip(keys.tolist(), vals.tolist())))
        return tuple(maps)

    def per_component(slope, var):
        labels = component_labels(g)
        vals = slope + np.sqrt(var) * rng.standard_normal(labels.max() + 1)
        return vals[labels]

    for name in _FIELDS[kind]:
        is_delta = name.startswith("delta")
        slope = s.delta_slope if is_delta else s.gamma_slope
        var = s.delta_var if is_delta else s.gamma_var
        if name.endswith("_deg"):
            kw[name] = deg_table(slope, var)
        elif name.endswith("_map"):
            kw[name] = pattern_maps(slope, var)
        elif name.endswith("_edge"):
            kw[name] = (slope + np.sqrt(var) * rng.standard_normal((n, n))) * g.adj
        elif kind.symmetric_sent:
            kw[name] = per_component(slope, var)
        else:
            kw[name] = slope + np.sqrt(var) * rng.standard_normal(n)
    return ParamSet(alpha, beta, **kw)


# -- lattice upcasts ----------------------------------------------------------

def _deg_from_slope(slope, n):
    return np.outer(slope, np.arange(max(n, 1)))


def _edge_to_map(g, edge):
    maps = []
    for i in range(g.n):
        nb = g.in_neighbors(i)
        mp = {}
        for mask in range(1, 2 ** len(nb)):
            bits = [(mask >> r) & 1 for r in range(len(nb))]
            mp[mask] = float(sum(edge[j, i] for j, b in zip(nb, bits) if b))
        maps.append(mp)
    return tuple(maps)


def _deg_to_map(g, tab):
    maps = []
    for i in range(g.n):
        dn = len(g.in_neighbors(i))
        maps.append({m: float(tab[i, _popcount(m)]) for m in range(1, 2**dn)})
    return tuple(maps)


def _ssi_sender(g, unit_vals):
    # sender j's effect equals the (shared) value of its receivers
    out = np.zeros(g.n)
    for j in range(g.n):
        recv = np.flatnonzero(g.adj[j])
        if len(recv):
            out[j] = unit_vals[recv[0]]
    return out


def _zero(n):
    return np.zeros(n)


# (child, parent) -> converter(params, g) giving the parent's field values
_EDGES = {
    (K.SUTVA, K.SANASIA): lambda p, g: dict(gamma_unit=_zero(g.n)),
    (K.ANIA, K.NIA): lambda p, g: dict(gamma_map=p.gamma_map, delta_map=tuple({} for _ in range(g.n))),
    (K.NAIA, K.NIA): lambda p, g: dict(gamma_map=_edge_to_map(g, p.gamma_edge), delta_map=_edge_to_map(g, p.delta_edge)),
    (K.SNIA, K.NIA): lambda p, g: dict(gamma_map=_deg_to_map(g, p.gamma_deg), delta_map=_deg_to_map(g, p.delta_deg)),
    (K.ANAIA, K.ANIA): lambda p, g: dict(gamma_map=_edge_to_map(g, p.gamma_edge)),
    (K.SANIA, K.ANIA): lambda p, g: dict(gamma_map=_deg_to_map(g, p.gamma_deg)),
    (K.ANAIA, K.NAIA): lambda p, g: dict(gamma_edge=p.gamma_edge, delta_edge=np.zeros((g.n, g.n))),
    (K.SNAIA, K.NAIA): lambda p, g: dict(gamma_edge=g.adj * p.gamma_unit[None, :], delta_edge=g.adj * p.delta_unit[None, :]),
    (K.NASIA, K.NAIA): lambda p, g: dict(gamma_edge=g.adj * p.gamma_sender[:, None], delta_edge=g.adj * p.delta_sender[:, None]),
    (K.SANIA, K.SNIA): lambda p, g: dict(gamma_deg=p.gamma_deg, delta_deg=np.zeros_like(p.gamma_deg)),
    (K.SNAIA, K.SNIA): lambda p, g: dict(gamma_deg=_deg_from_slope(p.gamma_unit, g.n), delta_deg=_deg_from_slope(p.delta_unit, g.n)),
    (K.SANAIA, K.ANAIA): lambda p, g: dict(gamma_edge=g.adj * p.gamma_unit[None, :]),
    (K.ANASIA, K.ANAIA): lambda p, g: dict(gamma_edge=g.adj * p.gamma_sender[:, None]),
    (K.SANAIA, K.SANIA): lambda p, g: dict(gamma_deg=_deg_from_slope(p.gamma_unit, g.n)),
    (K.SANAIA, K.SNAIA): lambda p, g: dict(gamma_unit=p.gamma_unit, delta_unit=_zero(g.n)),
    (K.SNASIA, K.SNAIA): lambda p, g: dict(gamma_unit=p.gamma_unit, delta_unit=p.delta_unit),
    (K.SNASIA, K.NASIA): lambda p, g: dict(gamma_sender=_ssi_sender(g, p.gamma_unit), delta_sender=_ssi_sender(g, p.delta_unit)),
    (K.ANASIA, K.NASIA): lambda p, g: dict(gamma_sender=p.gamma_sender, delta_sender=_zero(g.n)),
    (K.SANASIA, K.SANAIA): lambda p, g: dict(gamma_unit=p.gamma_unit),
    (K.SANASIA, K.ANASIA): lambda p, g: dict(gamma_sender=_ssi_sender(g, p.gamma_unit)),
    (K.SANASIA, K.SNASIA): lambda p, g: dict(gamma_unit=p.gamma_unit, delta_unit=_zero(g.n)),
}

_FAMILY_NAMES = ("gamma_map", "delta_map", "gamma_deg", "delta_deg", "gamma_edge",
                 "delta_edge", "gamma_unit", "delta_unit", "gamma_sender", "delta_sender")


def _path(src: ModelKind, dst: ModelKind):
    prev = {src: None}
    queue = deque([src])
    while queue:
        cur = queue.popleft()
        if cur is dst:
            break
        for (a, b) in _EDGES:
            if a is cur and b not in prev:
                prev[b] = cur
                queue.append(b)
    if dst not in prev:
        return None
    path = [dst]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def upcast(params: ParamSet, src, dst, g: Graph) -> ParamSet:
    """Re-express parameters of a smaller model in a larger model's parameterization.

    Only moves up the containment lattice; asking for a smaller model raises.
    """
    src, dst = ModelKind.parse(src), ModelKind.parse(dst)
    params.validate(src, g)
    path = _path(src, dst)
    if path is None:
        raise ValueError(f"{dst.value} does not contain {src.value}; only upcasts are supported")
    cur = params
    for a, b in zip(path, path[1:]):
        fields = _EDGES[(a, b)](cur, g)
        cleared = {name: None for name in _FAMILY_NAMES}
        cleared.update(fields)
        cur = replace(cur, **cleared)
    cur.validate(dst, g)
    return cur


# -- parameter files ----------------------------------------------------------

def write_params(params: ParamSet, kind, path) -> None:
    """Write sections ``[alpha]``, ``[beta]`` and the kind's interference families.

    Entries are ``index... value`` lines; zero entries are omitted.
    """
    kind = ModelKind.parse(kind)
    out = [f"kind {kind.value}", f"n {params.n}"]
    for name in ("alpha", "beta") + _FIELDS[kind]:
        val = getattr(params, name)
        out.append(f"[{name}]")
        if name.endswith("_map"):
            for i, mp in enumerate(val):
                out += [f"{i} {k} {v!r}" for k, v in sorted(mp.items()) if v != 0.0]
        else:
            for idx in zip(*np.nonzero(val)):
                out.append(" ".join(str(int(t)) for t in idx) + f" {float(val[idx])!r}")
    Path(path).write_text("\n".join(out) + "\n")


def read_params(path, g: Graph | None = None):
    """Parse a parameter file; returns ``(kind, ParamSet)``. Omitted entries are 0."""
    kind = n = None
    sections = {}
    current = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            current = line.strip("[]").strip()
            if current not in ("alpha", "beta") + _FAMILY_NAMES:
                raise ValueError(f"{path}:{lineno}: unknown section [{current}]")
            sections[current] = []
            continue
        parts = line.split()
        if current is None:
            if parts[0] == "kind":
                kind = ModelKind.parse(parts[1])
            elif parts[0] == "n":
                n = int(parts[1])
            else:
                raise ValueError(f"{path}:{lineno}: unexpected header line {raw!r}")
            continue
        try:
            sections[current].append(([int(t) for t in parts[:-1]], float(parts[-1])))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad entry {raw!r}") from exc
    if kind is None or n is None:
        raise ValueError(f"{path}: missing 'kind' or 'n' header")
    width = max(n, (g.max_degree + 1) if g is not None else 0, 1)
    shapes = {"_deg": (n, width), "_edge": (n, n)}
    kw = {}
    for name in ("alpha", "beta") + _FIELDS[kind]:
        entries = sections.get(name, [])
        if name.endswith("_map"):
            maps = [dict() for _ in range(n)]
            for idx, v in entries:
                maps[idx[0]][idx[1]] = v
            kw[name] = tuple(maps)
            continue
        shape = next((s for suf, s in shapes.items() if name.endswith(suf)), (n,))
        arr = np.zeros(shape)
        for idx, v in entries:
            if len(idx) != len(shape):
                raise ValueError(f"{path}: section [{name}] expects {len(shape)} indices")
            arr[tuple(idx)] = v
        kw[name] = arr
    return kind, ParamSet(**kw)
