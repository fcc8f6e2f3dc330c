import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_design, random_graph
from mivlue.design import bernoulli_design, coloring_design, crd_design, mixture
from mivlue.estimators import WeightScheme
from mivlue.graph import generate, greedy_coloring
from mivlue.unbiased import (
    build_constraints,
    check_unbiased,
    exists_by_feasibility,
    exists_nia,
    exists_sania,
    min_norm_feasible,
)

KINDS = ("SUTVA", "NIA", "SNIA", "SANIA", "SANASIA")


def test_triangle_tail_crd_has_no_sania_estimator(tail_v3):
    ex = exists_sania(tail_v3, crd_design(4, 2))
    assert not ex.exists
    assert ex.witness == 2  # third unit
    assert ex.as_record()["witness_unit_one_based"] == "3"
    assert not exists_by_feasibility("SANIA", tail_v3, crd_design(4, 2))


def test_triangle_tail_bernoulli_has_sania_estimator(tail_v3, bern4):
    assert exists_sania(tail_v3, bern4).exists
    assert exists_by_feasibility("SANIA", tail_v3, bern4).exists


def test_complete_graph():
    g = generate("complete", 4)
    assert exists_nia(g, bernoulli_design(4)).exists
    assert not exists_nia(g, crd_design(4, 2)).exists
    assert not exists_sania(g, crd_design(4, 2)).exists
    assert not exists_by_feasibility("SANASIA", g, crd_design(4, 2)).exists
    mix = mixture([crd_design(4, 1), crd_design(4, 2)], [0.5, 0.5])
    assert exists_sania(g, mix).exists


def test_empty_graph_crd_sutva():
    assert exists_by_feasibility("SUTVA", generate("empty", 4), crd_design(4, 2)).exists


@pytest.mark.parametrize("family,n", [("ring", 5), ("complete", 4), ("triangle_tail_v3", 4)])
def test_coloring_design_admits_nia_estimators(family, n):
    g = generate(family, n)
    d = coloring_design(greedy_coloring(g))
    assert exists_nia(g, d).exists
    assert exists_by_feasibility("NIA", g, d).exists


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**31))
def test_combinatorial_and_least_squares_deciders_agree(n, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, symmetric=bool(seed % 2))
    d = random_design(rng, n)
    assert exists_sania(g, d).exists == exists_by_feasibility("SANIA", g, d).exists
    assert exists_nia(g, d).exists == exists_by_feasibility("NIA", g, d).exists


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**31))
def test_existence_is_monotone_in_the_model(n, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    d = random_design(rng, n)
    ex = {k: exists_by_feasibility(k, g, d).exists for k in KINDS}
    # a smaller model has fewer constraints
    assert ex["NIA"] <= ex["SNIA"] <= ex["SANIA"] <= ex["SANASIA"]
    assert ex["SANASIA"] <= ex["SUTVA"] or not g.adj.any()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31), st.sampled_from(KINDS))
def test_constraint_rows_span_the_oracle_rows(n, seed, kind):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, symmetric=False)
    d = random_design(rng, n)
    cs = build_constraints(kind, g, d)
    A, b = oracles.unbiased_system(oracles.Model(kind, g.adj), d.support.tolist(), d.pmf)
    lib = np.hstack([cs.A.toarray(), cs.b[:, None]])
    ora = np.hstack([A, b[:, None]])
    r1, r2 = np.linalg.matrix_rank(lib), np.linalg.matrix_rank(ora)
    assert r1 == r2 == np.linalg.matrix_rank(np.vstack([lib, ora]))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**31), st.sampled_from(KINDS))
def test_min_norm_feasible_passes_both_checks(n, seed, kind):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    d = random_design(rng, n)
    cs = build_constraints(kind, g, d)
    w, res = min_norm_feasible(cs)
    if res >= 1e-8:
        return
    ws = WeightScheme.on(d, w.reshape(d.size, n))
    assert check_unbiased(ws, cs, 1e-8).unbiased
    A, b = oracles.unbiased_system(oracles.Model(kind, g.adj), d.support.tolist(), d.pmf)
    assert np.abs(A @ w - b).max() < 1e-8


def test_verdict_reports_worst_row(tail_v1, bern4):
    cs = build_constraints("SANIA", tail_v1, bern4)
    W = np.zeros((bern4.size, 4))
    v = check_unbiased(WeightScheme.on(bern4, W), cs)
    assert not v.unbiased
    assert v.worst_row[0] == "C1"
    assert v.max_violation == pytest.approx(0.25)
    rec = v.as_record()
    assert rec["unbiased"] == "false" and rec["worst_row"] == "C1:unit=0"


def test_constraint_families(tail_v1, bern4):
    fams = {lab[0] for lab in build_constraints("SANIA", tail_v1, bern4).labels}
    assert fams == {"C1", "C2", "C3'"}
    fams = {lab[0] for lab in build_constraints("NIA", tail_v1, bern4).labels}
    assert fams == {"C1", "C2", "C3", "C4"}
    cs = build_constraints("SANASIA", tail_v1, bern4)
    assert len(cs.rows_of("C3''")) == 1  # connected shared-neighbor graph
    assert len(build_constraints("SUTVA", tail_v1, bern4).labels) == 8
    with pytest.raises(ValueError):
        build_constraints("ANIA", tail_v1, bern4)
    with pytest.raises(ValueError):
        build_constraints("SANIA", generate("ring", 5), bern4)
