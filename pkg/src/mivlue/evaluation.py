"""Exact design-based evaluation of estimators and the simulation sweeps.

All moments are exact sums over the design support; the only Monte Carlo
element of a sweep is the draw of graphs (and subsampled supports) across
replicates.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .design import Design, bernoulli_design
from .estimators import WeightScheme, ht_weights, naive_weights, stratified_naive_weights
from .graph import Graph, connected_components, generate, shared_neighbor_graph
from .models import ModelKind, ParamSet, SamplingSpec, estimand_beta_bar, outcomes, sample_params
from .prior import sania_constant, sania_uncorrelated, sanasia_independent
from .solver import SolverError, solve_nonsingular, solve_sanasia, solve_thm3

log = logging.getLogger(__name__)

__all__ = [
    "ESTIMATORS",
    "SCENARIOS",
    "EvalReport",
    "SweepConfig",
    "exact_moments",
    "six_estimators",
    "run_sweep",
    "write_csv",
    "CsvSink",
    "CSV_COLUMNS",
]

ESTIMATORS = ("naive", "horvitz_thompson", "stratified_naive", "independent", "equal", "sanasia")
SCENARIOS = ("vary_n_density", "vary_effects", "vary_degree_power")
EQUAL_JITTER = 1e-4
MAX_RESAMPLES = 5


@dataclass(frozen=True)
class EvalReport:
    mean: float
    bias: float
    variance: float
    mse: float


def exact_moments(ws: WeightScheme, d: Design, kind, params: ParamSet, g: Graph) -> EvalReport:
    """Mean, bias, variance and MSE of the estimator over the randomization."""
    ws.require(d)
    Y = outcomes(kind, params, g, d.support)
    est = ws.estimates(Y)
    mean = float(d.pmf @ est)
    var = float(d.pmf @ (est - mean) ** 2)
    bias = mean - estimand_beta_bar(params)
    return EvalReport(mean, bias, var, bias**2 + var)


def _sanasia(g: Graph, d: Design):
    prior = sanasia_independent(d.n, var_gamma=1.0 / d.n)
    single = len(connected_components(shared_neighbor_graph(g))) == 1
    if g.is_symmetric() and single:
        return solve_sanasia(g, d, prior).weights
    # several shared-neighbor components: same objective, solved numerically
    return solve_nonsingular(ModelKind.SANASIA, g, d, prior, sigma="surrogate", name="sanasia").weights


def six_estimators(g: Graph, d: Design, which=ESTIMATORS, strict_stratified: bool = False) -> dict:
    """Build the comparison estimators; failures are returned as exception objects.

    ``independent`` uses independent unit priors with ``Var Gamma_i(d) = d``,
    ``equal`` a prior constant across units with ``alpha`` jitter 1e-4 and
    ``sanasia`` a shared slope with variance ``1/n``.
    """
    n = d.n
    builders = {
        "naive": lambda: naive_weights(d),
        "horvitz_thompson": lambda: ht_weights(d),
        "stratified_naive": lambda: stratified_naive_weights(g, d, strict=strict_stratified),
        "independent": lambda: solve_thm3(g, d, sania_uncorrelated(n, gamma_var=1.0)).weights,
        "equal": lambda: solve_nonsingular(
            ModelKind.SANIA, g, d, sania_constant(n, gamma_var=1.0, jitter=EQUAL_JITTER), name="equal"
        ).weights,
        "sanasia": lambda: _sanasia(g, d),
    }
    out = {}
    for name in which:
        if name not in builders:
            raise ValueError(f"unknown estimator {name!r}; expected one of {ESTIMATORS}")
        try:
            out[name] = builders[name]()
        except (SolverError, ValueError, np.linalg.LinAlgError) as exc:
            out[name] = exc
    return out


# -- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    """One simulation scenario at desk scale.

    ``vary_n_density`` crosses ``densities`` (``dense`` is ER(n, 1/2),
    ``sparse`` ER(n, 1/n)) with ``n_values``. ``vary_effects`` uses ER(``n``,
    ``edge_p``) and crosses ``mu_beta`` with ``mu_gamma``. ``vary_degree_power``
    uses preferential attachment graphs on ``n`` units for each ``rho``.
    """

    scenario: str
    n_values: tuple = (8, 10, 12)
    densities: tuple = ("dense", "sparse")
    n: int = 12
    edge_p: float = 0.5
    mu_beta: tuple = (0.0, 2.0, 4.0)
    mu_gamma: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8)
    rho: tuple = (0.0, 0.5, 1.0, 1.5, 2.0)
    base_mu_beta: float = 2.0
    base_mu_gamma: float = 1.0
    alpha_var: float = 1.0
    beta_var: float = 1.0
    gamma_var: float = 1.0
    replicates: int = 100
    seed: int = 0
    estimators: tuple = ESTIMATORS
    cap: int = 2**12
    jobs: int = 1

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        grids = {
            "vary_n_density": (self.n_values, self.densities),
            "vary_effects": (self.mu_beta, self.mu_gamma),
            "vary_degree_power": (self.rho,),
        }[self.scenario]
        if any(len(gr) == 0 for gr in grids):
            raise ValueError("sweep grids must be nonempty")
        bad = set(self.densities) - {"dense", "sparse"}
        if bad:
            raise ValueError(f"unknown densities {sorted(bad)}")
        for name in self.estimators:
            if name not in ESTIMATORS:
                raise ValueError(f"unknown estimator {name!r}")


def _seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _scenario_id(name):
    return SCENARIOS.index(name)


def _param_seed(cfg: SweepConfig, n: int) -> int:
    # shared by all replicates (and grid points) with the same n
    return _seed(cfg.seed, 1000 + _scenario_id(cfg.scenario), n)


def _graph(cfg, key, n, seed):
    if cfg.scenario == "vary_n_density":
        p = 0.5 if key["density"] == "dense" else 1.0 / n
        return generate("erdos_renyi", n, seed=seed, p=p)
    if cfg.scenario == "vary_effects":
        return generate("erdos_renyi", n, seed=seed, p=cfg.edge_p)
    return generate("pref_attach", n, seed=seed, rho=key["rho"])


def _groups(cfg: SweepConfig):
    """Work groups ``(group_index, graph key, n, list of grid-point keys)``."""
    if cfg.scenario == "vary_n_density":
        out = []
        for dens in cfg.densities:
            for n in cfg.n_values:
                key = {"density": dens, "n": n}
                out.append((key, n, [dict(key, mu_beta=cfg.base_mu_beta, mu_gamma=cfg.base_mu_gamma)]))
        return out
    if cfg.scenario == "vary_effects":
        pts = [{"n": cfg.n, "mu_beta": b, "mu_gamma": gm} for b in cfg.mu_beta for gm in cfg.mu_gamma]
        return [({"n": cfg.n}, cfg.n, pts)]
    return [
        ({"rho": r, "n": cfg.n}, cfg.n,
         [{"rho": r, "n": cfg.n, "mu_beta": cfg.base_mu_beta, "mu_gamma": cfg.base_mu_gamma}])
        for r in cfg.rho
    ]


def _replicate(args):
    """Evaluate every estimator on one sampled (graph, design) for all grid points of a group."""
    cfg, gi, gkey, n, points, rep = args
    wanted = set(cfg.estimators) - {"naive", "horvitz_thompson", "stratified_naive"}
    for attempt in range(MAX_RESAMPLES + 1):
        s = _seed(cfg.seed, _scenario_id(cfg.scenario), gi, rep, attempt)
        g = _graph(cfg, gkey, n, s)
        d = bernoulli_design(n, 0.5, exclude_trivial=True, cap=cfg.cap, seed=s + 1)
        ests = six_estimators(g, d, cfg.estimators)
        failed = {k for k, v in ests.items() if isinstance(v, Exception) and k in wanted}
        if not failed:
            break
    resamples = attempt
    results = []
    for pi, pt in enumerate(points):
        spec = SamplingSpec(0.0, cfg.alpha_var, pt["mu_beta"], cfg.beta_var, pt["mu_gamma"], cfg.gamma_var)
        params = sample_params(ModelKind.SANIA, g, spec, seed=_param_seed(cfg, n))
        row = {}
        for name in cfg.estimators:
            ws = ests[name]
            if isinstance(ws, Exception):
                row[name] = (None, f"{type(ws).__name__}: {ws}")
            else:
                row[name] = (exact_moments(ws, d, ModelKind.SANIA, params, g), None)
        results.append(row)
    return gi, rep, resamples, results


CSV_COLUMNS = (
    "scenario", "density", "n", "mu_beta", "mu_gamma", "rho", "estimator",
    "replicates_used", "avg_mse", "avg_bias2", "avg_variance", "seed", "resamples", "missing_reason",
)


def run_sweep(cfg: SweepConfig, jobs: int | None = None, on_rows=None) -> list:
    """Average exact MSE per estimator over graph replicates at each grid point.

    Returns one dict per (grid point, estimator) with the :data:`CSV_COLUMNS`
    keys. Groups are processed in a fixed order and ``on_rows`` (if given) is
    called with each group's rows as soon as they are complete; the output
    does not depend on ``jobs``.
    """
    jobs = cfg.jobs if jobs is None else jobs
    rows = []
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs and jobs > 1 else None
    try:
        for gi, (gkey, n, pts) in enumerate(_groups(cfg)):
            tasks = [(cfg, gi, gkey, n, pts, rep) for rep in range(cfg.replicates)]
            if pool is not None:
                outs = list(pool.map(_replicate, tasks))
            else:
                outs = [_replicate(t) for t in tasks]
            outs.sort(key=lambda o: o[1])
            resamples = sum(o[2] for o in outs)
            if resamples:
                log.info("group %s: %d resamples", gkey, resamples)
            group_rows = []
            for pi, pt in enumerate(pts):
                for name in cfg.estimators:
                    reps = [o[3][pi][name] for o in outs]
                    good = [r for r, _ in reps if r is not None]
                    reasons = sorted({why for r, why in reps if r is None})
                    row = {c: "" for c in CSV_COLUMNS}
                    row.update(scenario=cfg.scenario, estimator=name, seed=cfg.seed,
                               replicates_used=len(good), resamples=resamples)
                    row.update(pt)
                    if good:
                        row["avg_mse"] = float(np.mean([r.mse for r in good]))
                        row["avg_bias2"] = float(np.mean([r.bias**2 for r in good]))
                        row["avg_variance"] = float(np.mean([r.variance for r in good]))
                    if reasons:
                        row["missing_reason"] = "; ".join(reasons)[:300]
                    group_rows.append(row)
            rows.extend(group_rows)
            if on_rows is not None:
                on_rows(group_rows)
    finally:
        if pool is not None:
            pool.shutdown()
    return rows


class CsvSink:
    """Append sweep rows to a CSV file as they arrive."""

    def __init__(self, path):
        self.fh = open(path, "w", newline="")
        self.writer = csv.DictWriter(self.fh, fieldnames=CSV_COLUMNS)
        self.writer.writeheader()
        self.fh.flush()

    def __call__(self, rows):
        for r in rows:
            self.writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        self.fh.flush()

    def close(self):
        self.fh.close()


def write_csv(rows, path) -> None:
    sink = CsvSink(path)
    try:
        sink(rows)
    finally:
        sink.close()
