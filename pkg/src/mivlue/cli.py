"""Command-line entry point: ``mivlue <command> [options]``.

Every command accepts ``--config FILE``, a flat ``key = value`` file whose
keys are option names (``tol-unbiased`` or ``tol_unbiased``); options given
on the command line win. ``sweep`` reads its scenario from the config file.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import sys

import numpy as np

from . import __version__
from .design import (
    bernoulli_design,
    coloring_design,
    crd_design,
    orbit_design_ring,
    parse_bitstring,
    read_design,
    write_design,
)
from .estimators import read_weights, write_weights
from .evaluation import ESTIMATORS, CsvSink, SweepConfig, exact_moments, run_sweep, six_estimators
from .graph import FAMILIES, generate, greedy_coloring, read_edgelist, write_edgelist
from .models import ModelKind, estimand_beta_bar, read_params
from .prior import integrated_variance, read_prior
from .solver import (
    KKT_TOL,
    SolverError,
    solve,
    solve_general,
    solve_nonsingular,
    solve_sanasia,
    solve_thm3,
    solve_thm4_nia,
    solve_vertex_transitive,
    write_report,
)
from .unbiased import (
    FEASIBILITY_TOL,
    SUPPORTED_KINDS,
    build_constraints,
    check_unbiased,
    exists_by_feasibility,
    exists_nia,
    exists_sania,
)

log = logging.getLogger("mivlue")

DESIGN_TYPES = ("bernoulli", "crd", "coloring", "ring_orbit")
METHODS = ("auto", "general", "nonsingular", "thm3", "thm4", "sanasia", "vertex_transitive")


class CliError(Exception):
    """A user-facing error; reported on stderr with a nonzero exit status."""


def read_config(path) -> dict:
    """Flat ``key = value`` (or ``key: value``) lines; ``#`` starts a comment."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_string("[run]\n" + fh.read(), source=str(path))
    except configparser.Error as exc:
        raise CliError(f"{path}: {exc}") from exc
    return {k.replace("-", "_"): v.strip() for k, v in cp["run"].items()}


def _emit(record: dict, out=None) -> None:
    out = out or sys.stdout
    for k, v in record.items():
        print(f"{k}: {v}", file=out)


def _positive(name, value):
    if value is not None and not value > 0:
        raise CliError(f"{name} must be positive, got {value}")


def _need(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise CliError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _kind(text):
    try:
        return ModelKind.parse(text)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _load_graph(args):
    return read_edgelist(args.graph, symmetrize=args.symmetrize)


# -- commands -----------------------------------------------------------------

def cmd_gen_graph(args):
    _need(args, "family", "n", "out")
    g = generate(args.family, args.n, seed=args.seed, p=args.p, rho=args.rho)
    write_edgelist(g, args.out)
    _emit({"n": g.n, "edges": g.num_edges(), "max_degree": g.max_degree, "out": args.out})


def cmd_gen_design(args):
    _need(args, "type", "out")
    t = args.type
    if t == "bernoulli":
        _need(args, "n")
        d = bernoulli_design(args.n, args.q, exclude_trivial=args.exclude_trivial, cap=args.cap, seed=args.seed)
    elif t == "crd":
        _need(args, "n", "k")
        d = crd_design(args.n, args.k)
    elif t == "coloring":
        _need(args, "graph")
        d = coloring_design(greedy_coloring(_load_graph(args)))
    elif t == "ring_orbit":
        _need(args, "base")
        base = parse_bitstring(args.base)
        d = orbit_design_ring(len(base), base)
    else:
        raise CliError(f"unknown design type {t!r}; expected one of {DESIGN_TYPES}")
    write_design(d, args.out)
    _emit({"n": d.n, "support_size": d.size, "out": args.out})


def _existence(kind, g, d, tol):
    """Report both deciders where a combinatorial one exists."""
    rec = {"kind": kind.value}
    feas = exists_by_feasibility(kind, g, d, tol)
    if kind is ModelKind.NIA:
        ex = exists_nia(g, d)
    elif kind is ModelKind.SANIA:
        ex = exists_sania(g, d)
    else:
        ex = feas
    rec.update(ex.as_record())
    if ex is not feas:
        rec["feasible"] = str(feas.exists).lower()
        rec["feasibility"] = feas.method
        if feas.exists != ex.exists:
            log.warning("%s: combinatorial and least-squares deciders disagree", kind.value)
    return rec


def cmd_check(args):
    _need(args, "graph", "design")
    _positive("tol-unbiased", args.tol_unbiased)
    g, d = _load_graph(args), read_design(args.design)
    kinds = [_kind(args.kind)] if args.kind else list(SUPPORTED_KINDS)
    ws = read_weights(args.weights)[0] if args.weights else None
    for j, kind in enumerate(kinds):
        if j:
            print()
        rec = _existence(kind, g, d, args.tol_unbiased)
        if ws is not None:
            v = check_unbiased(ws, build_constraints(kind, g, d), args.tol_unbiased)
            rec.update(v.as_record())
        _emit(rec)


def _solve(method, kind, g, d, prior, args):
    kw = dict(tol_kkt=args.tol_kkt)
    if method == "auto":
        return solve(kind, g, d, prior, sigma=args.sigma, **kw)
    if method == "general":
        return solve_general(kind, g, d, prior, sigma=args.sigma, **kw)
    if method == "nonsingular":
        return solve_nonsingular(kind, g, d, prior, sigma=args.sigma, **kw)
    if method == "thm3":
        return solve_thm3(g, d, prior, **kw)
    if method == "thm4":
        return solve_thm4_nia(g, d, prior, **kw)
    if method == "sanasia":
        return solve_sanasia(g, d, prior, **kw)
    return solve_vertex_transitive(g, d, prior, **kw)


def _check_kind(method, kind):
    fixed = {"thm3": ModelKind.SANIA, "sanasia": ModelKind.SANASIA, "vertex_transitive": ModelKind.SANIA}
    if method in fixed and kind is not fixed[method]:
        raise CliError(f"method {method} solves {fixed[method].value}, not {kind.value}")
    if method == "thm4" and kind not in (ModelKind.NIA, ModelKind.SNIA):
        raise CliError(f"method thm4 solves NIA or SNIA, not {kind.value}")


def cmd_solve(args):
    _need(args, "graph", "design", "kind", "out")
    _positive("tol-unbiased", args.tol_unbiased)
    _positive("tol-kkt", args.tol_kkt)
    g, d = _load_graph(args), read_design(args.design)
    if g.n != d.n:
        raise CliError(f"graph has {g.n} units, design has {d.n}")
    kind = _kind(args.kind)
    _check_kind(args.method, kind)
    if args.prior is None and args.method != "vertex_transitive":
        raise CliError("missing required option: --prior")
    prior = read_prior(args.prior, n=g.n) if args.prior else None
    if prior is not None and prior.n != g.n:
        raise CliError(f"prior has n={prior.n}, graph has {g.n}")
    rep = _solve(args.method, kind, g, d, prior, args)
    verdict = check_unbiased(rep.weights, build_constraints(kind, g, d), args.tol_unbiased)
    if not verdict.unbiased:
        raise CliError(
            f"solution violates unbiasedness: {verdict.max_violation:.3g} > {args.tol_unbiased:g}"
        )
    write_report(rep, args.out)
    rec = {k: v for k, v in rep.header().items() if k != "multipliers"}
    rec["max_violation"] = f"{verdict.max_violation:.3g}"
    rec["out"] = args.out
    _emit(rec)


def cmd_evaluate(args):
    _need(args, "graph", "design", "params")
    g, d = _load_graph(args), read_design(args.design)
    kind, params = read_params(args.params, g)
    if (args.weights is None) == (args.estimator is None):
        raise CliError("give exactly one of --weights or --estimator")
    if args.weights:
        ws = read_weights(args.weights)[0]
    else:
        ws = six_estimators(g, d, (args.estimator,))[args.estimator]
        if isinstance(ws, Exception):
            raise CliError(f"{args.estimator}: {ws}")
        if args.save_weights:
            write_weights(ws, args.save_weights, {"name": ws.name})
    r = exact_moments(ws, d, kind, params, g)
    rec = {
        "estimator": ws.name or args.weights,
        "kind": kind.value,
        "estimand": f"{estimand_beta_bar(params):.12g}",
        "mean": f"{r.mean:.12g}",
        "bias": f"{r.bias:.6e}",
        "variance": f"{r.variance:.12g}",
        "mse": f"{r.mse:.12g}",
    }
    if args.prior:
        rec["integrated_variance"] = f"{integrated_variance(ws, d, read_prior(args.prior, n=g.n), g):.12g}"
    _emit(rec)


def sweep_config(values: dict) -> SweepConfig:
    """Build a :class:`SweepConfig` from string values; tuple fields are comma or space lists."""
    fields = {f.name: f for f in dataclasses.fields(SweepConfig)}
    unknown = set(values) - set(fields)
    if unknown:
        raise CliError(f"unknown sweep keys: {sorted(unknown)}")
    if "scenario" not in values:
        raise CliError("sweep config needs 'scenario'")
    kw = {}
    for key, text in values.items():
        default = fields[key].default
        items = text.replace(",", " ").split()
        try:
            if key == "scenario":
                kw[key] = text
            elif isinstance(default, tuple):
                conv = type(default[0]) if default else str
                kw[key] = tuple(conv(t) for t in items)
            else:
                kw[key] = type(default)(text)
        except ValueError as exc:
            raise CliError(f"sweep key {key!r}: {exc}") from exc
    return SweepConfig(**kw)


def cmd_sweep(args):
    _need(args, "config", "out")
    values = read_config(args.config)
    if args.seed is not None:
        values["seed"] = str(args.seed)
    cfg = sweep_config(values)
    jobs = args.jobs if args.jobs is not None else cfg.jobs
    if jobs < 1:
        raise CliError("jobs must be at least 1")
    sink = CsvSink(args.out)
    count = [0]

    def on_rows(rows):
        sink(rows)
        count[0] += len(rows)
        log.info("wrote %d rows", count[0])

    try:
        run_sweep(cfg, jobs=jobs, on_rows=on_rows)
    finally:
        sink.close()
    _emit({"scenario": cfg.scenario, "rows": count[0], "seed": cfg.seed, "out": args.out})


# -- parser -------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="flat key = value file supplying option defaults")
    p.add_argument("--out", help="output path")
    p.add_argument("--seed", type=int)


def _graph_opts(p, design=True):
    p.add_argument("--graph", help="edge-list file")
    p.add_argument("--symmetrize", action="store_true", help="add the reverse of every edge on load")
    if design:
        p.add_argument("--design", help="design file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mivlue", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-graph", help="generate a graph and write its edge list")
    _common(p)
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=float, help="edge probability (erdos_renyi)")
    p.add_argument("--rho", type=float, help="attachment power (pref_attach)")
    p.set_defaults(func=cmd_gen_graph)

    p = sub.add_parser("gen-design", help="generate a design and write its support")
    _common(p)
    _graph_opts(p, design=False)
    p.add_argument("--type", choices=DESIGN_TYPES)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int, help="treated count (crd)")
    p.add_argument("--q", type=float, default=0.5, help="treatment probability (bernoulli)")
    p.add_argument("--exclude-trivial", action="store_true", help="drop all-control and all-treated")
    p.add_argument("--cap", type=int, default=2**13, help="subsample bernoulli supports above this size")
    p.add_argument("--base", help="base allocation bitstring (ring_orbit)")
    p.set_defaults(func=cmd_gen_design)

    p = sub.add_parser("check", help="decide whether unbiased estimators exist")
    _common(p)
    _graph_opts(p)
    p.add_argument("--kind", help="model kind; all supported kinds when omitted")
    p.add_argument("--weights", help="also check this weight file for unbiasedness")
    p.add_argument("--tol-unbiased", type=float, default=FEASIBILITY_TOL)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("solve", help="build the minimum integrated variance estimator")
    _common(p)
    _graph_opts(p)
    p.add_argument("--kind")
    p.add_argument("--prior", help="prior covariance file")
    p.add_argument("--method", choices=METHODS, default="auto")
    p.add_argument("--sigma", choices=("exact", "surrogate"), default="exact")
    p.add_argument("--tol-unbiased", type=float, default=FEASIBILITY_TOL)
    p.add_argument("--tol-kkt", type=float, default=KKT_TOL)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="exact bias, variance and MSE of an estimator")
    _common(p)
    _graph_opts(p)
    p.add_argument("--params", help="potential-outcome parameter file")
    p.add_argument("--weights", help="weight file to evaluate")
    p.add_argument("--estimator", choices=ESTIMATORS, help="build a comparison estimator instead")
    p.add_argument("--save-weights", help="write the built estimator's weights here")
    p.add_argument("--prior", help="also report integrated variance under this prior")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run a simulation scenario and write a CSV")
    p.add_argument("--config", help="sweep config file")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, help="worker processes")
    p.set_defaults(func=cmd_sweep)
    return ap


def _config_argv(parser, argv):
    """Prepend options from ``--config`` so that explicit options override them."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.command in (None, "sweep") or known.config is None:
        return argv
    extra = []
    for key, val in read_config(known.config).items():
        flag = "--" + key.replace("_", "-")
        if val.lower() in ("true", "yes", "on"):
            extra.append(flag)
        elif val.lower() not in ("false", "no", "off"):
            extra += [flag, val]
    i = argv.index(known.command) + 1
    return argv[:i] + extra + argv[i:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_config_argv(parser, argv))
    except (CliError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, SolverError, ValueError, KeyError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
