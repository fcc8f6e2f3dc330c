"""Minimum integrated variance linear unbiased estimators.

The optimal weights minimise ``1/2 sum_z p(z) w(z)^T Sigma(z) w(z)`` subject to
the unbiasedness constraints ``A w = b``. Writing ``H = blockdiag(p(z) Sigma(z))``
the optimum is a stationary point of the Lagrangian::

    [ H  A^T ] [ w ]   [ 0 ]
    [ A   0  ] [ l ] = [ b ]

:func:`solve_general` solves this system directly by minimum-norm least
squares, which also covers singular ``Sigma(z)``. :func:`solve_nonsingular`
eliminates the weights, ``w(z) = -Sigma(z)^{-1} M(z) l``, and solves the much
smaller multiplier system. The remaining solvers are closed forms for special
priors and graphs, each checked against the same KKT conditions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import lsmr

from .design import Design, joint_table
from .estimators import WeightScheme, read_weights, stratified_naive_weights, write_weights
from .graph import Graph, connected_components, generate, shared_neighbor_graph
from .models import ModelKind
from .prior import (
    PriorCov,
    cell_variances,
    sania_constant,
    sanasia_surrogate_diag,
    sigma_batch,
    sigma_diag_batch,
)
from .unbiased import (
    ConstraintSystem,
    build_constraints,
    exists_nia,
    exists_sania,
    min_norm_feasible,
    FEASIBILITY_TOL,
)

__all__ = [
    "PATHS",
    "SolverError",
    "InfeasibleError",
    "SingularSigmaError",
    "NonOptimalError",
    "PreconditionError",
    "KKTSystem",
    "SolveReport",
    "build_kkt",
    "kkt_residual",
    "solve",
    "solve_general",
    "solve_nonsingular",
    "solve_thm3",
    "solve_thm4_nia",
    "solve_sanasia",
    "solve_vertex_transitive",
    "write_report",
    "read_report",
]

PATHS = ("general_pinv", "nonsingular", "thm3", "thm4", "sanasia_closed", "vertex_transitive")
KKT_TOL = 1e-6
SINGULAR_RTOL = 1e-10
DENSE_LIMIT = 2500  # KKT systems up to this size are solved densely
CHUNK_ENTRIES = 4_000_000


class SolverError(RuntimeError):
    pass


class InfeasibleError(SolverError):
    pass


class SingularSigmaError(SolverError):
    pass


class PreconditionError(SolverError):
    pass


class NonOptimalError(SolverError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


# -- the KKT system -----------------------------------------------------------

class _Sigma:
    """Per-allocation covariances, produced in chunks to bound memory."""

    def __init__(self, prior: PriorCov, g: Graph, d: Design, mode: str = "exact"):
        if mode not in ("exact", "surrogate"):
            raise ValueError(f"sigma mode must be 'exact' or 'surrogate', got {mode!r}")
        if mode == "surrogate" and prior.kind != "sanasia_independent":
            raise ValueError("the surrogate covariance applies to sanasia_independent priors only")
        prior.check(g)
        self.prior, self.g, self.d, self.mode = prior, g, d, mode
        self.diagonal = prior.is_diagonal or mode == "surrogate"
        self.Z = d.support.astype(np.int64)

    def chunk(self, s, e):
        Z = self.Z[s:e]
        if self.mode == "surrogate":
            return sanasia_surrogate_diag(self.prior, self.g, Z)
        if self.diagonal:
            return sigma_diag_batch(self.prior, self.g, Z)
        return sigma_batch(self.prior, self.g, Z)

    def chunk_size(self, width=1):
        n = self.d.n
        per = n * max(width, n if not self.diagonal else 1)
        return max(1, CHUNK_ENTRIES // max(per, 1))


@dataclass
class KKTSystem:
    """Stationarity and feasibility conditions for one (kind, graph, design, prior)."""

    cs: ConstraintSystem
    sigma: _Sigma

    @property
    def n(self):
        return self.cs.n

    @property
    def num_weights(self):
        return self.cs.A.shape[1]

    @property
    def num_multipliers(self):
        return self.cs.A.shape[0]

    @property
    def size(self):
        return self.num_weights + self.num_multipliers

    def hessian_times(self, w_flat):
        """``H w`` computed allocation by allocation."""
        n, p = self.n, self.cs.design.pmf
        W = w_flat.reshape(-1, n)
        out = np.empty_like(W)
        step = self.sigma.chunk_size()
        for s in range(0, len(W), step):
            e = min(s + step, len(W))
            S = self.sigma.chunk(s, e)
            if self.sigma.diagonal:
                out[s:e] = p[s:e, None] * S * W[s:e]
            else:
                out[s:e] = p[s:e, None] * np.einsum("kij,kj->ki", S, W[s:e])
        return out.ravel()

    def hessian(self) -> sparse.csr_matrix:
        n, m, p = self.n, self.cs.design.size, self.cs.design.pmf
        if self.sigma.diagonal:
            return sparse.diags(np.repeat(p, n) * self.sigma.chunk(0, m).ravel()).tocsr()
        blocks = []
        step = self.sigma.chunk_size()
        for s in range(0, m, step):
            e = min(s + step, m)
            S = self.sigma.chunk(s, e) * p[s:e, None, None]
            blocks.extend(sparse.csr_matrix(b) for b in S)
        return sparse.block_diag(blocks, format="csr")

    def matrix(self) -> sparse.csr_matrix:
        A = self.cs.A
        r = A.shape[0]
        return sparse.bmat([[self.hessian(), A.T], [A, sparse.csr_matrix((r, r))]], format="csr")

    def rhs(self):
        return np.concatenate([np.zeros(self.num_weights), self.cs.b])

    def recover_multipliers(self, w_flat):
        """Least-squares multipliers for given weights: ``min ||A^T l + H w||``."""
        A = self.cs.A
        if A.shape[0] == 0:
            return np.zeros(0)
        norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
        As = sparse.diags(1.0 / norms) @ A
        G = (As @ As.T).toarray()
        mu = np.linalg.lstsq(G, -(As @ self.hessian_times(w_flat)), rcond=None)[0]
        return mu / norms


def build_kkt(kind, g: Graph, d: Design, prior: PriorCov, sigma: str = "exact") -> KKTSystem:
    return KKTSystem(build_constraints(kind, g, d), _Sigma(prior, g, d, sigma))


def _residual_parts(system: KKTSystem, w_flat, lam):
    Hw = system.hessian_times(w_flat)
    Atl = system.cs.A.T @ lam
    scale = max(np.abs(Hw).max(initial=0), np.abs(Atl).max(initial=0), 1e-300)
    stat = np.abs(Hw + Atl).max(initial=0) / scale
    bscale = max(np.abs(system.cs.b).max(initial=0), 1e-300)
    feas = np.abs(system.cs.A @ w_flat - system.cs.b).max(initial=0) / bscale
    return float(stat), float(feas)


@dataclass
class SolveReport:
    weights: WeightScheme
    multipliers: np.ndarray
    kkt_residual: float
    path_used: str
    kind: ModelKind
    optimal: bool = True
    info: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "name": self.weights.name,
            "kind": self.kind.value,
            "path_used": self.path_used,
            "kkt_residual": f"{self.kkt_residual:.6e}",
            "optimal": str(self.optimal).lower(),
            "multipliers": " ".join(f"{x:.17g}" for x in self.multipliers),
        }


def kkt_residual(report: SolveReport, system: KKTSystem) -> float:
    """Largest relative violation of stationarity or feasibility at the reported point."""
    w = report.weights.weights.ravel()
    lam = np.asarray(report.multipliers, dtype=np.float64)
    if w.shape != (system.num_weights,) or lam.shape != (system.num_multipliers,):
        raise ValueError("report is not dimensioned for this KKT system")
    return max(_residual_parts(system, w, lam))


def _finish(system, d, W, lam, path, kind, name, strict, tol_kkt, info=None):
    ws = WeightScheme.on(d, W, name)
    if lam is None:
        lam = system.recover_multipliers(ws.weights.ravel())
    rep = SolveReport(ws, np.asarray(lam), 0.0, path, kind, True, dict(info or {}))
    rep.kkt_residual = kkt_residual(rep, system)
    if not rep.kkt_residual < tol_kkt:
        rep.optimal = False
        if strict:
            raise NonOptimalError(
                f"{path}: KKT residual {rep.kkt_residual:.3g} exceeds {tol_kkt:g}", rep
            )
    return rep


def _require_feasible(cs: ConstraintSystem):
    _, res = min_norm_feasible(cs)
    if not res < FEASIBILITY_TOL:
        raise InfeasibleError(
            f"no linear unbiased estimator exists under {cs.kind.value} for this design "
            f"(least-squares residual {res:.3g})"
        )


# -- general and reduced solvers ----------------------------------------------

def solve_general(
    kind, g: Graph, d: Design, prior: PriorCov, sigma: str = "exact",
    strict: bool = True, tol_kkt: float = KKT_TOL, name: str = "mivlue",
) -> SolveReport:
    """Solve the full KKT system by minimum-norm least squares.

    Small systems use a dense SVD-based solve; larger ones the sparse LSMR
    iteration. Singular ``Sigma(z)`` is fine here; the result is accepted only
    if the KKT residual is below ``tol_kkt``.
    """
    kind = ModelKind.parse(kind)
    system = build_kkt(kind, g, d, prior, sigma)
    _require_feasible(system.cs)
    K = system.matrix()
    rhs = system.rhs()
    if system.size <= DENSE_LIMIT:
        sol = np.linalg.lstsq(K.toarray(), rhs, rcond=None)[0]
        how = "dense"
    else:
        out = lsmr(K, rhs, atol=1e-14, btol=1e-14, maxiter=20 * system.size)
        sol = out[0]
        how = f"lsmr({out[2]} its)"
    nw = system.num_weights
    W = sol[:nw].reshape(d.size, d.n)
    return _finish(system, d, W, sol[nw:], "general_pinv", kind, name, strict, tol_kkt, {"solver": how})


def _unscaled_rows(A_T, p, n, s, e):
    """Constraint coefficients ``M(z)`` (without ``p(z)``) for allocations ``s..e``."""
    M = A_T[s * n : e * n].toarray().reshape(e - s, n, -1)
    return M / p[s:e, None, None]


def solve_nonsingular(
    kind, g: Graph, d: Design, prior: PriorCov, sigma: str = "exact",
    strict: bool = True, tol_kkt: float = KKT_TOL, name: str = "mivlue",
) -> SolveReport:
    """Eliminate the weights and solve the multiplier system.

    Every ``Sigma(z)`` must be invertible (smallest eigenvalue above
    ``1e-10 * trace / n``), otherwise :class:`SingularSigmaError` is raised and
    :func:`solve_general` should be used.
    """
    kind = ModelKind.parse(kind)
    system = build_kkt(kind, g, d, prior, sigma)
    cs = system.cs
    _require_feasible(cs)
    n, m, p = d.n, d.size, d.pmf
    r = cs.num_rows
    A_T = cs.A.T.tocsr()
    src = system.sigma
    step = src.chunk_size(width=r)
    G = np.zeros((r, r))
    for s in range(0, m, step):
        e = min(s + step, m)
        S = src.chunk(s, e)
        M = _unscaled_rows(A_T, p, n, s, e)
        if src.diagonal:
            if np.any(S <= SINGULAR_RTOL * S.mean(axis=1, keepdims=True)):
                raise SingularSigmaError("Sigma(z) has a zero diagonal entry")
            X = M / S[:, :, None]
        else:
            ev = np.linalg.eigvalsh(S)
            thresh = SINGULAR_RTOL * np.trace(S, axis1=1, axis2=2) / n
            if np.any(ev[:, 0] <= thresh):
                k = s + int(np.flatnonzero(ev[:, 0] <= thresh)[0])
                raise SingularSigmaError(f"Sigma(z) is singular for allocation index {k}")
            X = np.linalg.solve(S, M)
        G += np.einsum("k,kir,kis->rs", p[s:e], M, X, optimize=True)
    lam = np.linalg.lstsq(-G, cs.b, rcond=None)[0]
    W = np.empty((m, n))
    for s in range(0, m, step):
        e = min(s + step, m)
        S = src.chunk(s, e)
        Ml = (A_T[s * n : e * n] @ lam).reshape(e - s, n) / p[s:e, None]
        W[s:e] = -(Ml / S if src.diagonal else np.linalg.solve(S, Ml[:, :, None])[:, :, 0])
    return _finish(system, d, W, lam, "nonsingular", kind, name, strict, tol_kkt, {"reduced_size": r})


def solve(kind, g: Graph, d: Design, prior: PriorCov, sigma: str = "exact", **kw) -> SolveReport:
    """Use the reduced solve when every ``Sigma(z)`` is invertible, else the full KKT system."""
    try:
        return solve_nonsingular(kind, g, d, prior, sigma, **kw)
    except SingularSigmaError:
        return solve_general(kind, g, d, prior, sigma, **kw)


# -- closed forms -------------------------------------------------------------

def solve_thm3(g: Graph, d: Design, prior: PriorCov, strict=True, tol_kkt=KKT_TOL) -> SolveReport:
    """Inverse-variance weighted average of per-degree inverse-propensity estimators.

    For a prior uncorrelated across units,
    ``w_i(z) = C_{i,d} / sum_d' C_{i,d'} * (2 z_i - 1) / (n Pr[z_i, d_i = d])`` at
    ``d = d_i(z)``, with ``C_{i,d} = (V_i(0,d)/P_i(0,d) + V_i(1,d)/P_i(1,d))^{-1}``
    or 0 when either propensity vanishes.
    """
    if not prior.is_diagonal:
        raise PreconditionError(f"{prior.kind} prior is correlated across units")
    ex = exists_sania(g, d)
    if not ex:
        raise InfeasibleError(f"unit {ex.witness} is never observed in both arms at a common treated degree")
    K = g.max_degree
    T = joint_table(d, g, K)
    V = cell_variances(prior, K)
    both = (T[:, 0, :] > 0) & (T[:, 1, :] > 0)
    C = np.zeros((d.n, K + 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = V[:, 0, :] / T[:, 0, :] + V[:, 1, :] / T[:, 1, :]
        C[both] = 1.0 / inv[both]
    total = C.sum(axis=1)
    if np.any(total <= 0):
        raise InfeasibleError(f"unit {int(np.flatnonzero(total <= 0)[0])} has no usable stratum")
    Z = d.support.astype(np.int64)
    D = d.degrees(g)
    units = np.arange(d.n)
    P = T[units, Z, D]
    W = np.where(P > 0, C[units, D] / total * (2 * Z - 1) / (d.n * np.where(P > 0, P, 1)), 0.0)
    system = build_kkt(ModelKind.SANIA, g, d, prior)
    return _finish(system, d, W, None, "thm3", ModelKind.SANIA, "independent", strict, tol_kkt)


def solve_thm4_nia(g: Graph, d: Design, prior: PriorCov, strict=True, tol_kkt=KKT_TOL) -> SolveReport:
    """Inverse-propensity weights on units with no treated neighbors, zero elsewhere."""
    if not prior.is_diagonal:
        raise PreconditionError(f"{prior.kind} prior is correlated across units")
    ex = exists_nia(g, d)
    if not ex:
        raise InfeasibleError(f"unit {ex.witness} lacks both arms with no treated neighbors")
    T = joint_table(d, g, g.max_degree)
    Z = d.support.astype(np.int64)
    D = d.degrees(g)
    P0 = T[np.arange(d.n), Z, 0]
    W = np.where(D == 0, (2 * Z - 1) / (d.n * np.where(P0 > 0, P0, 1)), 0.0)
    system = build_kkt(ModelKind.NIA, g, d, prior)
    return _finish(system, d, W, None, "thm4", ModelKind.NIA, "nia_uncorrelated", strict, tol_kkt)


def solve_sanasia(g: Graph, d: Design, prior: PriorCov, strict=True, tol_kkt=KKT_TOL) -> SolveReport:
    """Closed-form weights under a shared interference slope and independent unit effects.

    Uses the diagonal majorant ``sigma_i(z) = var_alpha_i + var_beta_i z_i +
    var_gamma d_i sum_j d_j`` of the outcome covariance (see
    :func:`~mivlue.prior.sanasia_surrogate_diag`), so it matches
    ``solve_general(..., sigma="surrogate")``.
    """
    if prior.kind != "sanasia_independent":
        raise PreconditionError("solve_sanasia needs a sanasia_independent prior")
    if not g.is_symmetric():
        raise PreconditionError("solve_sanasia needs an undirected graph")
    if len(connected_components(shared_neighbor_graph(g))) != 1:
        raise PreconditionError(
            "shared-neighbor graph has several components; use solve(kind=SANASIA, sigma='surrogate')"
        )
    system = build_kkt(ModelKind.SANASIA, g, d, prior, "surrogate")
    _require_feasible(system.cs)
    Z = d.support.astype(np.float64)
    D = d.degrees(g).astype(np.float64)
    sig = system.sigma.chunk(0, d.size)
    pz = d.pmf[:, None] / sig
    a = pz.sum(axis=0)
    b = (pz * Z).sum(axis=0)
    gg = (pz * D).sum(axis=0)
    h = (pz * D * Z).sum(axis=0)
    if np.any(b <= 0) or np.any(a - b <= 0):
        bad = int(np.flatnonzero((b <= 0) | (a - b <= 0))[0])
        raise InfeasibleError(f"unit {bad} is never observed in one of the arms")
    C = -(pz * D**2).sum()
    amb = a - b
    abd = a / (b * amb)
    Q = C + gg @ (gg / amb) - 2 * gg @ (h / amb) + h @ (abd * h)
    R = (h @ abd - gg @ (1.0 / amb)) / Q
    n = d.n
    W = (-(1 + R * (gg - h)) / amb + Z * (a - R * (h * a - gg * b)) / (b * amb) + R * D) / (n * sig)
    return _finish(system, d, W, None, "sanasia_closed", ModelKind.SANASIA, "sanasia", strict, tol_kkt,
                   {"Q": Q, "R": R, "C": C})


def _family(g: Graph) -> str | None:
    n = g.n
    if not g.adj.any():
        return "empty"
    if np.array_equal(g.adj, generate("complete", n).adj):
        return "complete"
    if n >= 3 and np.array_equal(g.adj, generate("ring", n).adj):
        return "ring"
    return None


def _symmetric_under(d: Design, perm_rows) -> bool:
    lookup = {z.tobytes(): p for z, p in zip(d.support, d.pmf)}
    for z, p in zip(d.support, d.pmf):
        for tz in perm_rows(z):
            q = lookup.get(np.ascontiguousarray(tz).tobytes())
            if q is None or abs(q - p) > 1e-12:
                return False
    return True


def solve_vertex_transitive(
    g: Graph, d: Design, prior: PriorCov | None = None, strict=True, tol_kkt=KKT_TOL
) -> SolveReport:
    """Degree-stratified difference in means, optimal for constant priors on symmetric instances.

    Certified for rings in their natural cyclic labeling and for complete and
    empty graphs. The design must be invariant under the graph's symmetries
    (cyclic rotations for rings, all permutations otherwise) and every
    supported allocation must share a treated degree between the arms.
    """
    fam = _family(g)
    if fam is None:
        raise PreconditionError("vertex transitivity is certified only for ring, complete and empty graphs")
    if fam == "ring":
        ok = _symmetric_under(d, lambda z: [np.roll(z, 1)])
    else:
        # invariance under all permutations: equal mass within each treated count
        sums = d.support.sum(axis=1)
        ok = all(
            len(np.unique(np.round(d.pmf[sums == s], 12))) == 1
            and int((sums == s).sum()) == comb(d.n, int(s))
            for s in np.unique(sums)
        )
    if not ok:
        raise PreconditionError(f"design is not invariant under the symmetries of the {fam} graph")
    D = d.degrees(g)
    Z = d.support
    for z, dz in zip(Z, D):
        if not set(dz[z == 1].tolist()) & set(dz[z == 0].tolist()):
            raise PreconditionError("a supported allocation has no treated degree shared by both arms")
    ws = stratified_naive_weights(g, d, strict=True)
    prior = prior if prior is not None else sania_constant(d.n, jitter=0.0)
    system = build_kkt(ModelKind.SANIA, g, d, prior)
    return _finish(system, d, ws.weights, None, "vertex_transitive", ModelKind.SANIA,
                   "stratified_naive", strict, tol_kkt)


# -- report files -------------------------------------------------------------

def write_report(report: SolveReport, path) -> None:
    write_weights(report.weights, path, header=report.header())


def read_report(path) -> SolveReport:
    ws, header = read_weights(path)
    try:
        lam = np.array([float(x) for x in header.get("multipliers", "").split()])
        return SolveReport(
            ws,
            lam,
            float(header.get("kkt_residual", "nan")),
            header.get("path_used", "unknown"),
            ModelKind.parse(header.get("kind", "SANIA")),
            header.get("optimal", "true") == "true",
        )
    except ValueError as exc:
        raise ValueError(f"{path}: malformed report header: {exc}") from exc
