"""Linear estimators as per-allocation weight vectors, and the closed-form baselines."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .design import Design, _canonical_order, bitstring, marginal_propensity, parse_bitstring
from .graph import Graph

__all__ = [
    "WeightScheme",
    "naive_weights",
    "ht_weights",
    "stratified_naive_weights",
    "read_weights",
    "write_weights",
]


@dataclass(frozen=True, eq=False)
class WeightScheme:
    """Weights ``W[k]`` applied to the outcomes observed under allocation ``support[k]``.

    The estimate under ``z`` is ``W[k] @ Y`` where ``support[k] == z``. Rows are
    kept in the same canonical order as :class:`~mivlue.design.Design`.
    """

    support: np.ndarray
    weights: np.ndarray
    name: str = ""

    def __post_init__(self):
        Z = np.array(self.support, dtype=np.int8, copy=True)
        W = np.array(self.weights, dtype=np.float64, copy=True)
        if Z.ndim != 2 or W.shape != Z.shape:
            raise ValueError(f"weights {W.shape} must match support {Z.shape}")
        if not np.all(np.isfinite(W)):
            raise ValueError("weights must be finite")
        order = _canonical_order(Z)
        Z, W = Z[order], W[order]
        Z.setflags(write=False)
        W.setflags(write=False)
        object.__setattr__(self, "support", Z)
        object.__setattr__(self, "weights", W)

    @classmethod
    def on(cls, d: Design, W, name: str = "") -> "WeightScheme":
        return cls(d.support, W, name)

    @property
    def n(self) -> int:
        return self.support.shape[1]

    def matches(self, d: Design) -> bool:
        return self.support.shape == d.support.shape and np.array_equal(self.support, d.support)

    def require(self, d: Design) -> None:
        if not self.matches(d):
            raise ValueError("weight scheme is not defined on exactly the design support")

    def weight(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.int8)
        hits = np.flatnonzero((self.support == z).all(axis=1))
        if not len(hits):
            raise KeyError(f"allocation {bitstring(z)} is not in the support")
        return self.weights[hits[0]]

    def estimate(self, z, Y) -> float:
        return float(self.weight(z) @ np.asarray(Y, dtype=np.float64))

    def estimates(self, Y) -> np.ndarray:
        """Estimates for all supported allocations given outcomes ``Y`` of shape ``(m, n)``."""
        return np.einsum("kn,kn->k", self.weights, Y)

    def __eq__(self, other):
        return (
            isinstance(other, WeightScheme)
            and np.array_equal(self.support, other.support)
            and np.array_equal(self.weights, other.weights)
        )

    def __repr__(self):
        label = f"{self.name!r}, " if self.name else ""
        return f"WeightScheme({label}n={self.n}, size={len(self.support)})"


def _arm_counts(Z):
    n1 = Z.sum(axis=1).astype(np.float64)
    return n1, Z.shape[1] - n1


def naive_weights(d: Design) -> WeightScheme:
    """Difference in means between treated and control units."""
    Z = d.support.astype(np.float64)
    n1, n0 = _arm_counts(d.support)
    if np.any(n1 == 0) or np.any(n0 == 0):
        raise ValueError("naive weights need both arms occupied in every supported allocation")
    W = Z / n1[:, None] - (1.0 - Z) / n0[:, None]
    return WeightScheme.on(d, W, "naive")


def ht_weights(d: Design) -> WeightScheme:
    """Inverse-propensity weights ignoring interference."""
    q1 = marginal_propensity(d)
    q0 = 1.0 - q1
    if np.any(q1 <= 0) or np.any(q0 <= 0):
        bad = int(np.flatnonzero((q1 <= 0) | (q0 <= 0))[0])
        raise ValueError(f"unit {bad} is never observed in one of the arms")
    Z = d.support.astype(np.float64)
    W = (Z / q1 - (1.0 - Z) / q0) / d.n
    return WeightScheme.on(d, W, "horvitz_thompson")


def stratified_naive_weights(g: Graph, d: Design, strict: bool = True) -> WeightScheme:
    """Difference in means within treated-degree strata, combined by harmonic-mean size.

    Strata missing one of the arms get weight zero. With ``strict`` an
    allocation that has no stratum with both arms occupied raises; otherwise
    its weights are all zero.
    """
    D = d.degrees(g)
    W, ok = kernels.stratified_weights(d.support, D, max_deg=max(g.max_degree, 0))
    if strict and not np.all(ok):
        k = int(np.flatnonzero(~ok)[0])
        raise ValueError(
            f"allocation {bitstring(d.support[k])} has no treated-degree stratum with both arms"
        )
    return WeightScheme.on(d, W, "stratified_naive")


# -- weight files -------------------------------------------------------------

def write_weights(ws: WeightScheme, path, header: dict | None = None) -> None:
    """One ``<bitstring> w_1 ... w_n`` line per allocation; ``header`` goes in ``#`` lines."""
    lines = [f"# {k}: {v}" for k, v in (header or {}).items()]
    for z, w in zip(ws.support, ws.weights):
        lines.append(bitstring(z) + " " + " ".join(f"{x:.17g}" for x in w))
    Path(path).write_text("\n".join(lines) + "\n")


def read_weights(path):
    """Parse a weight file; returns ``(WeightScheme, header)``."""
    header, rows, W = {}, [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            header[key.strip()] = val.strip()
            continue
        parts = line.split()
        try:
            z = parse_bitstring(parts[0])
            w = [float(t) for t in parts[1:]]
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
        if len(w) != len(z):
            raise ValueError(f"{path}:{lineno}: expected {len(z)} weights, got {len(w)}")
        rows.append(z)
        W.append(w)
    if not rows:
        raise ValueError(f"{path}: no weight rows")
    return WeightScheme(np.array(rows), np.array(W), header.get("name", "")), header
