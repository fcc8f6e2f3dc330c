"""Prior covariance specifications and the per-allocation outcome covariance.

Under a model ``Y_i(z) = alpha_i + beta_i z_i + Gamma_i(d_i) [+ gamma d_i]`` a
mean-zero prior on the parameters induces a covariance ``Sigma(z)`` of the
outcome vector. Every prior here is a sum of up to four parts:

* per-unit blocks ``S_i`` over ``xi_i = (alpha_i, beta_i, Gamma_i(1..K))``,
  independent across units, giving a diagonal contribution
  ``c_i(z)^T S_i c_i(z)`` with ``c_i(z) = e_alpha + z_i e_beta + e_Gamma(d_i)``;
* a shared block ``S`` over the same coordinates for parameters constant across
  units, giving ``C(z) S C(z)^T``;
* ``jitter`` added to every ``alpha_i`` independently;
* a shared interference slope ``gamma`` with variance ``var_gamma``, giving
  ``var_gamma * d d^T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .design import Design
from .estimators import WeightScheme
from .graph import Graph, treated_degrees
from .models import ModelKind, ParamSet

__all__ = [
    "PRIOR_KINDS",
    "PriorCov",
    "sutva_uncorrelated",
    "sutva_constant",
    "sania_uncorrelated",
    "sania_constant",
    "sanasia_independent",
    "custom_prior",
    "assemble_sigma_z",
    "sigma_batch",
    "sigma_diag_batch",
    "sanasia_surrogate_diag",
    "integrated_variance",
    "sample_prior_params",
    "cell_variances",
    "read_prior",
    "write_prior",
]

PRIOR_KINDS = (
    "sania_uncorrelated",
    "sania_constant",
    "sanasia_independent",
    "sutva_uncorrelated",
    "sutva_constant",
    "custom",
)
PSD_TOL = -1e-10


@dataclass(frozen=True, eq=False)
class PriorCov:
    kind: str
    n: int
    unit_blocks: np.ndarray | None = None   # (n, q, q)
    shared_block: np.ndarray | None = None  # (q, q)
    jitter: float = 0.0
    var_gamma: float = 0.0
    entries: dict = field(default_factory=dict)  # named entries for serialization

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"unknown prior kind {self.kind!r}; expected one of {PRIOR_KINDS}")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        q = None
        for name in ("unit_blocks", "shared_block"):
            val = getattr(self, name)
            if val is None:
                continue
            arr = np.array(val, dtype=np.float64, copy=True)
            expect = 3 if name == "unit_blocks" else 2
            if arr.ndim != expect or arr.shape[-1] != arr.shape[-2] or arr.shape[-1] < 2:
                raise ValueError(f"{name} has bad shape {arr.shape}")
            if name == "unit_blocks" and arr.shape[0] != self.n:
                raise ValueError(f"unit_blocks needs {self.n} blocks, got {arr.shape[0]}")
            if q is not None and arr.shape[-1] != q:
                raise ValueError("unit and shared blocks must cover the same coordinates")
            q = arr.shape[-1]
            if not np.allclose(arr, np.swapaxes(arr, -1, -2), atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(arr).min() < PSD_TOL:
                raise ValueError(f"{name} must be positive semidefinite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.jitter < 0 or self.var_gamma < 0:
            raise ValueError("jitter and var_gamma must be nonnegative")
        object.__setattr__(self, "_q", q if q is not None else 2)

    @property
    def num_gamma(self) -> int:
        """Largest treated degree ``K`` carrying a Gamma coordinate."""
        return self._q - 2

    @property
    def is_diagonal(self) -> bool:
        """``Sigma(z)`` is diagonal for every allocation."""
        return self.shared_block is None and self.var_gamma == 0

    def beta_total(self) -> float:
        """``1^T Sigma_beta 1``."""
        tot = 0.0
        if self.unit_blocks is not None:
            tot += float(self.unit_blocks[:, 1, 1].sum())
        if self.shared_block is not None:
            tot += self.n**2 * float(self.shared_block[1, 1])
        return tot

    def scaled(self, c: float) -> "PriorCov":
        """The same prior with every covariance multiplied by ``c > 0``."""
        if c <= 0:
            raise ValueError("scale must be positive")
        return PriorCov(
            self.kind,
            self.n,
            None if self.unit_blocks is None else c * self.unit_blocks,
            None if self.shared_block is None else c * self.shared_block,
            c * self.jitter,
            c * self.var_gamma,
            dict(self.entries),
        )

    def check(self, g: Graph) -> None:
        if g.n != self.n:
            raise ValueError(f"prior is for {self.n} units, graph has {g.n}")
        if self.num_gamma and self.num_gamma < g.max_degree:
            raise ValueError(
                f"prior covers treated degrees up to {self.num_gamma}, graph has degree {g.max_degree}"
            )


# -- constructors -------------------------------------------------------------

def _gamma_vector(gamma_var, K):
    if callable(gamma_var):
        return np.array([gamma_var(d) for d in range(1, K + 1)], dtype=np.float64)
    arr = np.asarray(gamma_var, dtype=np.float64)
    if arr.ndim == 0:
        return arr * np.arange(1, K + 1)  # variance proportional to degree
    if arr.shape != (K,):
        raise ValueError(f"need {K} Gamma variances, got {arr.shape}")
    return arr


def _block(var_alpha, var_beta, cov_ab, gvar=None, cov_ag=0.0, cov_bg=0.0):
    K = 0 if gvar is None else len(gvar)
    S = np.zeros((K + 2, K + 2))
    S[0, 0], S[1, 1] = var_alpha, var_beta
    S[0, 1] = S[1, 0] = cov_ab
    if K:
        S[2:, 2:] = np.diag(gvar)
        S[0, 2:] = S[2:, 0] = cov_ag
        S[1, 2:] = S[2:, 1] = cov_bg
    return S


def sutva_uncorrelated(n, var_alpha=1.0, var_beta=1.0, cov_alpha_beta=0.0) -> PriorCov:
    S = _block(var_alpha, var_beta, cov_alpha_beta)
    ent = dict(var_alpha=var_alpha, var_beta=var_beta, cov_alpha_beta=cov_alpha_beta)
    return PriorCov("sutva_uncorrelated", n, unit_blocks=np.broadcast_to(S, (n, 2, 2)), entries=ent)


def sutva_constant(n, var_alpha=1.0, var_beta=1.0, cov_alpha_beta=0.0, jitter=0.0) -> PriorCov:
    S = _block(var_alpha, var_beta, cov_alpha_beta)
    ent = dict(var_alpha=var_alpha, var_beta=var_beta, cov_alpha_beta=cov_alpha_beta, jitter=jitter)
    return PriorCov("sutva_constant", n, shared_block=S, jitter=jitter, entries=ent)


def sania_uncorrelated(
    n, var_alpha=1.0, var_beta=1.0, cov_alpha_beta=0.0, gamma_var=1.0,
    cov_alpha_gamma=0.0, cov_beta_gamma=0.0, max_degree=None,
) -> PriorCov:
    """Independent across units; ``gamma_var`` scalar ``c`` means ``Var Gamma_i(d) = c d``."""
    K = n - 1 if max_degree is None else max_degree
    gv = _gamma_vector(gamma_var, K)
    S = _block(var_alpha, var_beta, cov_alpha_beta, gv, cov_alpha_gamma, cov_beta_gamma)
    ent = dict(var_alpha=var_alpha, var_beta=var_beta, cov_alpha_beta=cov_alpha_beta,
               gamma_var=gv.tolist(), cov_alpha_gamma=cov_alpha_gamma, cov_beta_gamma=cov_beta_gamma)
    return PriorCov("sania_uncorrelated", n, unit_blocks=np.broadcast_to(S, (n,) + S.shape), entries=ent)


def sania_constant(
    n, var_alpha=1.0, var_beta=1.0, cov_alpha_beta=0.0, gamma_var=1.0,
    cov_alpha_gamma=0.0, cov_beta_gamma=0.0, jitter=1e-4, max_degree=None,
) -> PriorCov:
    """All parameters shared across units, plus independent ``alpha`` noise of variance ``jitter``."""
    K = n - 1 if max_degree is None else max_degree
    gv = _gamma_vector(gamma_var, K)
    S = _block(var_alpha, var_beta, cov_alpha_beta, gv, cov_alpha_gamma, cov_beta_gamma)
    ent = dict(var_alpha=var_alpha, var_beta=var_beta, cov_alpha_beta=cov_alpha_beta,
               gamma_var=gv.tolist(), cov_alpha_gamma=cov_alpha_gamma,
               cov_beta_gamma=cov_beta_gamma, jitter=jitter)
    return PriorCov("sania_constant", n, shared_block=S, jitter=jitter, entries=ent)


def sanasia_independent(n, var_alpha=1.0, var_beta=1.0, var_gamma=None) -> PriorCov:
    """Independent ``alpha_i, beta_i`` and one shared slope; ``var_gamma`` defaults to ``1/n``."""
    var_gamma = 1.0 / n if var_gamma is None else var_gamma
    S = _block(var_alpha, var_beta, 0.0)
    ent = dict(var_alpha=var_alpha, var_beta=var_beta, var_gamma=var_gamma)
    return PriorCov("sanasia_independent", n, unit_blocks=np.broadcast_to(S, (n, 2, 2)),
                    var_gamma=var_gamma, entries=ent)


def custom_prior(n, unit_blocks=None, shared_block=None, jitter=0.0, var_gamma=0.0) -> PriorCov:
    return PriorCov("custom", n, unit_blocks, shared_block, jitter, var_gamma)


# -- Sigma(z) -----------------------------------------------------------------

def _coord_matrix(Z, D, q):
    """``C[k, i, :] = e_alpha + z_i e_beta + e_Gamma(d_i)`` for each allocation."""
    m, n = Z.shape
    C = np.zeros((m, n, q))
    C[:, :, 0] = 1.0
    C[:, :, 1] = Z
    if q > 2:
        k, i = np.nonzero(D > 0)
        C[k, i, 1 + D[k, i]] = 1.0
    return C


def _prep(prior: PriorCov, g: Graph, Z):
    prior.check(g)
    Z = np.atleast_2d(np.asarray(Z, dtype=np.int64))
    if Z.shape[1] != g.n:
        raise ValueError(f"allocations have length {Z.shape[1]}, expected {g.n}")
    return Z, treated_degrees(g, Z)


def sigma_diag_batch(prior: PriorCov, g: Graph, Z) -> np.ndarray:
    """Diagonal of the per-unit contribution plus jitter, shape ``(m, n)``."""
    Z, D = _prep(prior, g, Z)
    out = np.full(Z.shape, prior.jitter, dtype=np.float64)
    if prior.unit_blocks is not None:
        S = prior.unit_blocks
        units = np.arange(g.n)
        zf = Z.astype(np.float64)
        out += S[:, 0, 0] + zf * (S[:, 1, 1] + 2 * S[:, 0, 1])
        if prior.num_gamma:
            Dc = np.minimum(D, prior.num_gamma)
            gidx = 1 + Dc
            has = D > 0
            out += has * (
                S[units, gidx, gidx] + 2 * S[units, 0, gidx] + 2 * zf * S[units, 1, gidx]
            )
    return out


def sigma_batch(prior: PriorCov, g: Graph, Z) -> np.ndarray:
    """``Sigma(z)`` for a batch of allocations, shape ``(m, n, n)``."""
    Z, D = _prep(prior, g, Z)
    m, n = Z.shape
    out = np.zeros((m, n, n))
    idx = np.arange(n)
    out[:, idx, idx] = sigma_diag_batch(prior, g, Z)
    if prior.shared_block is not None:
        C = _coord_matrix(Z, D, prior.shared_block.shape[0])
        out += np.einsum("kia,ab,kjb->kij", C, prior.shared_block, C, optimize=True)
    if prior.var_gamma:
        Df = D.astype(np.float64)
        out += prior.var_gamma * Df[:, :, None] * Df[:, None, :]
    return out


def assemble_sigma_z(prior: PriorCov, g: Graph, z) -> np.ndarray:
    """Covariance of the potential-outcome vector under allocation ``z``."""
    z = np.asarray(z)
    if z.shape != (g.n,):
        raise ValueError(f"allocation has length {z.shape}, expected ({g.n},)")
    return sigma_batch(prior, g, z[None, :])[0]


def sanasia_surrogate_diag(prior: PriorCov, g: Graph, Z) -> np.ndarray:
    """Diagonal majorant ``var_alpha_i + var_beta_i z_i + var_gamma d_i sum_j d_j``.

    By Cauchy-Schwarz ``var_gamma d d^T <= var_gamma diag(d_i sum_j d_j)``, so this
    diagonal dominates the exact SANASIA covariance.
    """
    if prior.kind != "sanasia_independent":
        raise ValueError("surrogate diagonal is defined for sanasia_independent priors")
    Z, D = _prep(prior, g, Z)
    Df = D.astype(np.float64)
    return sigma_diag_batch(prior, g, Z) + prior.var_gamma * Df * Df.sum(axis=1, keepdims=True)


def integrated_variance(ws: WeightScheme, d: Design, prior: PriorCov, g: Graph) -> float:
    """Prior-averaged design variance of an unbiased linear estimator."""
    ws.require(d)
    Z = d.support.astype(np.int64)
    W = ws.weights
    quad = (W**2 * sigma_diag_batch(prior, g, Z)).sum(axis=1)
    D = treated_degrees(g, Z)
    if prior.shared_block is not None:
        C = _coord_matrix(Z, D, prior.shared_block.shape[0])
        u = np.einsum("ki,kia->ka", W, C)
        quad += np.einsum("ka,ab,kb->k", u, prior.shared_block, u)
    if prior.var_gamma:
        quad += prior.var_gamma * (W * D).sum(axis=1) ** 2
    return float(d.pmf @ quad - prior.beta_total() / d.n**2)


# -- sampling -----------------------------------------------------------------

def sample_prior_params(prior: PriorCov, g: Graph, size: int, seed=None):
    """Draw ``size`` parameter sets from the prior.

    Returns ``(kind, draws)`` where ``draws`` is a list of :class:`ParamSet` of
    kind SANIA (or SANASIA for priors with a shared slope).
    """
    prior.check(g)
    rng = np.random.default_rng(seed)
    n, q = prior.n, prior._q
    K = max(prior.num_gamma, g.max_degree)
    xi = np.zeros((size, n, q))
    if prior.unit_blocks is not None:
        for i in range(n):
            xi[:, i, :] += _mvn(rng, prior.unit_blocks[i], size)
    if prior.shared_block is not None:
        xi += _mvn(rng, prior.shared_block, size)[:, None, :]
    if prior.jitter:
        xi[:, :, 0] += np.sqrt(prior.jitter) * rng.standard_normal((size, n))
    slope = np.sqrt(prior.var_gamma) * rng.standard_normal(size)
    draws = []
    for s in range(size):
        if prior.var_gamma:
            draws.append(ParamSet(xi[s, :, 0], xi[s, :, 1], gamma_unit=np.full(n, slope[s])))
        else:
            tab = np.zeros((n, K + 1))
            tab[:, 1 : q - 1] = xi[s, :, 2:]
            draws.append(ParamSet(xi[s, :, 0], xi[s, :, 1], gamma_deg=tab))
    return (ModelKind.SANASIA if prior.var_gamma else ModelKind.SANIA), draws


def _mvn(rng, S, size):
    # eigen factor tolerates singular blocks
    vals, vecs = np.linalg.eigh(S)
    L = vecs * np.sqrt(np.clip(vals, 0, None))
    return rng.standard_normal((size, S.shape[0])) @ L.T


# -- prior files --------------------------------------------------------------

_SCALAR_KEYS = ("var_alpha", "var_beta", "cov_alpha_beta", "cov_alpha_gamma",
                "cov_beta_gamma", "jitter", "var_gamma")


def write_prior(prior: PriorCov, path) -> None:
    if prior.kind == "custom":
        raise ValueError("custom priors are built in code and have no file form")
    lines = [f"kind {prior.kind}", f"n {prior.n}"]
    for k, v in prior.entries.items():
        if isinstance(v, list):
            lines.append(f"{k} " + " ".join(repr(float(x)) for x in v))
        else:
            lines.append(f"{k} {float(v)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_prior(path, n: int | None = None) -> PriorCov:
    """Parse ``key value`` lines: ``kind``, ``n`` and named (co)variances.

    ``gamma_var`` takes either one number ``c`` (variance ``c d``) or one value
    per degree. Omitted covariances are 0; omitted variances take their
    constructor defaults. ``n`` may be supplied by the caller instead.
    """
    vals = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        if not rest:
            raise ValueError(f"{path}:{lineno}: missing value for {key!r}")
        if key == "kind":
            vals[key] = rest[0]
            continue
        try:
            nums = [float(t) for t in rest]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric value in {raw!r}") from exc
        if key == "n":
            vals[key] = int(nums[0])
        elif key == "gamma_var":
            vals[key] = nums[0] if len(nums) == 1 else nums
        elif key in _SCALAR_KEYS:
            vals[key] = nums[0]
        else:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    kind = vals.pop("kind", None)
    if kind is None:
        raise ValueError(f"{path}: missing 'kind'")
    nn = vals.pop("n", n)
    if nn is None:
        raise ValueError(f"{path}: missing 'n'")
    builders = {
        "sutva_uncorrelated": (sutva_uncorrelated, ("var_alpha", "var_beta", "cov_alpha_beta")),
        "sutva_constant": (sutva_constant, ("var_alpha", "var_beta", "cov_alpha_beta", "jitter")),
        "sania_uncorrelated": (sania_uncorrelated, ("var_alpha", "var_beta", "cov_alpha_beta",
                                                    "gamma_var", "cov_alpha_gamma", "cov_beta_gamma")),
        "sania_constant": (sania_constant, ("var_alpha", "var_beta", "cov_alpha_beta", "gamma_var",
                                            "cov_alpha_gamma", "cov_beta_gamma", "jitter")),
        "sanasia_independent": (sanasia_independent, ("var_alpha", "var_beta", "var_gamma")),
    }
    if kind not in builders:
        raise ValueError(f"{path}: prior kind {kind!r} cannot be read from a file")
    fn, allowed = builders[kind]
    extra = set(vals) - set(allowed)
    if extra:
        raise ValueError(f"{path}: keys {sorted(extra)} do not apply to {kind}")
    kw = dict(vals)
    if isinstance(kw.get("gamma_var"), list):
        kw["max_degree"] = len(kw["gamma_var"])
    return fn(nn, **kw)


def cell_variances(prior: PriorCov, max_deg: int) -> np.ndarray:
    """``V[i, t, d] = Sigma(z)_ii`` for any allocation with ``z_i = t`` and ``d_i = d``.

    Only defined for priors that are uncorrelated across units, where the
    diagonal depends on ``z`` through ``(z_i, d_i)`` alone.
    """
    if not prior.is_diagonal:
        raise ValueError(f"{prior.kind} prior is correlated across units")
    n = prior.n
    V = np.full((n, 2, max_deg + 1), prior.jitter, dtype=np.float64)
    if prior.unit_blocks is None:
        return V
    S = prior.unit_blocks
    base = S[:, 0, 0]
    slope = S[:, 1, 1] + 2 * S[:, 0, 1]
    V += base[:, None, None]
    V[:, 1, :] += slope[:, None]
    K = prior.num_gamma
    if K:
        if max_deg > K:
            raise ValueError(f"prior covers treated degrees up to {K}, need {max_deg}")
        for d in range(1, max_deg + 1):
            gi = 1 + d
            V[:, 0, d] += S[:, gi, gi] + 2 * S[:, 0, gi]
            V[:, 1, d] += S[:, gi, gi] + 2 * S[:, 0, gi] + 2 * S[:, 1, gi]
    return V
