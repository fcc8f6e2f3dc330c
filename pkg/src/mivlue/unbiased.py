"""Unbiasedness constraints for linear estimators and existence of unbiased estimators.

A linear estimator assigns weights ``w_i(z)`` to every supported allocation.
It is unbiased for the average direct effect under a model exactly when a set
of linear equalities in the weights holds. Rows are stored over the flattened
unknown vector ``w[k * n + i] = w_i(support[k])`` and already carry the
design probability ``p(z)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .design import Design
from .estimators import WeightScheme
from .graph import Graph, shared_neighbor_graph, connected_components
from .models import ModelKind, neighbor_patterns

__all__ = [
    "SUPPORTED_KINDS",
    "ConstraintSystem",
    "Verdict",
    "build_constraints",
    "check_unbiased",
    "exists_nia",
    "exists_sania",
    "exists_by_feasibility",
    "min_norm_feasible",
    "FEASIBILITY_TOL",
]

SUPPORTED_KINDS = (ModelKind.SUTVA, ModelKind.NIA, ModelKind.SNIA, ModelKind.SANIA, ModelKind.SANASIA)
FEASIBILITY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class ConstraintSystem:
    """``A @ w = b`` with one label per row.

    Labels are tuples ``(family, unit, key)``: ``("C1", i, None)``,
    ``("C2", i, None)``, ``("C3", i, pattern_or_degree)``, ``("C4", i, ...)``,
    ``("C3'", i, degree)`` and ``("C3''", None, component_index)``.
    """

    kind: ModelKind
    design: Design
    A: sparse.csr_matrix
    b: np.ndarray
    labels: tuple

    @property
    def n(self) -> int:
        return self.design.n

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    def residual(self, w_flat) -> np.ndarray:
        return self.A @ w_flat - self.b

    def rows_of(self, family: str) -> list:
        return [r for r, lab in enumerate(self.labels) if lab[0] == family]


class _Rows:
    def __init__(self, m, n):
        self.m, self.n = m, n
        self.rows, self.cols, self.vals = [], [], []
        self.b, self.labels = [], []

    def add(self, k_idx, i_idx, coef, rhs, label):
        """Add one row with entries at ``(k_idx[t], i_idx[t])`` and values ``coef``."""
        coef = np.asarray(coef, dtype=np.float64)
        keep = coef != 0
        if not keep.any() and rhs == 0:
            return  # vacuous row; an empty row with nonzero rhs is kept as infeasible
        r = len(self.b)
        cols = np.asarray(k_idx)[keep] * self.n + np.asarray(i_idx)[keep]
        self.rows.append(np.full(cols.shape, r))
        self.cols.append(cols)
        self.vals.append(coef[keep])
        self.b.append(rhs)
        self.labels.append(label)

    def build(self, kind, d):
        if self.b:
            rows, cols, vals = (np.concatenate(x) for x in (self.rows, self.cols, self.vals))
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        A = sparse.csr_matrix((vals, (rows, cols)), shape=(len(self.b), self.m * self.n))
        return ConstraintSystem(kind, d, A, np.array(self.b, dtype=np.float64), tuple(self.labels))


def build_constraints(kind, g: Graph, d: Design) -> ConstraintSystem:
    """Constraint system for ``kind`` in ``{SUTVA, NIA, SNIA, SANIA, SANASIA}``.

    Keyed constraints (neighbor pattern, treated degree, component) appear only
    for keys attained on the support; unattained keys are vacuous.
    """
    kind = ModelKind.parse(kind)
    if kind not in SUPPORTED_KINDS:
        raise ValueError(
            f"no constraint builder for {kind.value}; supported: {[k.value for k in SUPPORTED_KINDS]}"
        )
    if g.n != d.n:
        raise ValueError(f"graph has {g.n} units, design has {d.n}")
    Z, p = d.support, d.pmf
    m, n = Z.shape
    ks = np.arange(m)
    R = _Rows(m, n)
    for i in range(n):
        ii = np.full(m, i)
        R.add(ks, ii, p * Z[:, i], 1.0 / n, ("C1", i, None))
        R.add(ks, ii, p, 0.0, ("C2", i, None))

    if kind in (ModelKind.NIA, ModelKind.SNIA, ModelKind.SANIA):
        keys = neighbor_patterns(g, Z) if kind is ModelKind.NIA else d.degrees(g)
        for i in range(n):
            ii = np.full(m, i)
            for key in np.unique(keys[:, i]):
                if key == 0:
                    continue
                hit = keys[:, i] == key
                if kind is ModelKind.SANIA:
                    R.add(ks, ii, p * hit, 0.0, ("C3'", i, int(key)))
                else:
                    R.add(ks, ii, p * hit, 0.0, ("C3", i, int(key)))
                    R.add(ks, ii, p * hit * Z[:, i], 0.0, ("C4", i, int(key)))
    elif kind is ModelKind.SANASIA:
        D = d.degrees(g)
        for c, comp in enumerate(connected_components(shared_neighbor_graph(g))):
            units = np.array(sorted(comp))
            kk = np.repeat(ks, len(units))
            uu = np.tile(units, m)
            coef = (p[:, None] * D[:, units]).ravel()
            R.add(kk, uu, coef, 0.0, ("C3''", None, c))
    return R.build(kind, d)


@dataclass(frozen=True)
class Verdict:
    unbiased: bool
    max_violation: float
    worst_row: tuple | None
    tol: float

    def as_record(self) -> dict:
        return {
            "unbiased": str(self.unbiased).lower(),
            "max_violation": f"{self.max_violation:.6g}",
            "worst_row": "none" if self.worst_row is None else _fmt_label(self.worst_row),
            "tol": f"{self.tol:g}",
        }


def _fmt_label(label):
    fam, unit, key = label
    parts = [fam]
    if unit is not None:
        parts.append(f"unit={unit}")
    if key is not None:
        parts.append(f"key={key}")
    return ":".join(parts)


def check_unbiased(ws: WeightScheme, cs: ConstraintSystem, tol: float = FEASIBILITY_TOL) -> Verdict:
    """Largest absolute violation over all constraint rows, and whether it is within ``tol``."""
    ws.require(cs.design)
    if cs.num_rows == 0:
        return Verdict(True, 0.0, None, tol)
    res = np.abs(cs.residual(ws.weights.ravel()))
    r = int(np.argmax(res))
    worst = float(res[r])
    return Verdict(worst <= tol, worst, cs.labels[r], tol)


# -- existence ----------------------------------------------------------------

@dataclass(frozen=True)
class Existence:
    exists: bool
    witness: int | None = None
    method: str = ""

    def __bool__(self):
        return self.exists

    def as_record(self) -> dict:
        rec = {"exists": str(self.exists).lower(), "method": self.method}
        if self.witness is not None:
            rec["witness_unit"] = str(self.witness)
            rec["witness_unit_one_based"] = str(self.witness + 1)
        return rec


def _overlap_witness(Z, keys_match):
    """First unit lacking a treated and a control allocation with matching keys."""
    for i in range(Z.shape[1]):
        if not keys_match(i):
            return i
    return None


def exists_nia(g: Graph, d: Design) -> Existence:
    """Every unit is observed both treated and in control with no treated neighbors."""
    D = d.degrees(g)
    Z = d.support

    def ok(i):
        free = D[:, i] == 0
        return bool(np.any(free & (Z[:, i] == 1)) and np.any(free & (Z[:, i] == 0)))

    w = _overlap_witness(Z, ok)
    return Existence(w is None, w, "neighborhood-free overlap")


def exists_sania(g: Graph, d: Design) -> Existence:
    """Every unit is observed treated and in control at some common treated degree."""
    D = d.degrees(g)
    Z = d.support

    def ok(i):
        treated = set(D[Z[:, i] == 1, i].tolist())
        control = set(D[Z[:, i] == 0, i].tolist())
        return bool(treated & control)

    w = _overlap_witness(Z, ok)
    return Existence(w is None, w, "treated-degree overlap")


def min_norm_feasible(cs: ConstraintSystem):
    """Minimum-norm least-squares solution of ``A w = b`` and its relative residual.

    The system has few rows, so it is solved through the row space:
    ``w = A^T y`` with ``(A A^T) y = b`` after scaling rows to unit norm.
    """
    A = cs.A
    if A.shape[0] == 0:
        return np.zeros(A.shape[1]), 0.0
    norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    norms[norms == 0] = 1.0  # empty rows with nonzero rhs
    S = sparse.diags(1.0 / norms)
    As = S @ A
    bs = cs.b / norms
    G = (As @ As.T).toarray()
    y = np.linalg.lstsq(G, bs, rcond=None)[0]
    w = As.T @ y
    # one refinement step against round-off
    r = bs - As @ w
    w = w + As.T @ np.linalg.lstsq(G, r, rcond=None)[0]
    res = np.linalg.norm(As @ w - bs) / max(np.linalg.norm(bs), 1e-300)
    return w, float(res)


def exists_by_feasibility(kind, g: Graph, d: Design, tol: float = FEASIBILITY_TOL) -> Existence:
    """Decide existence by solving the constraint system in the least-squares sense."""
    cs = build_constraints(kind, g, d)
    _, res = min_norm_feasible(cs)
    return Existence(res < tol, None, f"least-squares residual {res:.3g}")
