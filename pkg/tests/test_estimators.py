import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import balanced_ring_design, random_design, random_graph
from mivlue.design import Design, bernoulli_design, crd_design
from mivlue.estimators import (
    WeightScheme,
    ht_weights,
    naive_weights,
    read_weights,
    stratified_naive_weights,
    write_weights,
)
from mivlue.graph import generate
from mivlue.unbiased import build_constraints, check_unbiased


def _oracle_bias(kind, g, d, W):
    A, b = oracles.unbiased_system(oracles.Model(kind, g.adj), d.support.tolist(), d.pmf)
    return np.abs(A @ W.ravel() - b).max()


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31))
def test_ht_matches_oracle_and_is_unbiased_under_sutva(n, seed):
    rng = np.random.default_rng(seed)
    d = random_design(rng, n, exclude_trivial=True)
    q = d.pmf @ d.support
    if np.any(q <= 0) or np.any(q >= 1):
        with pytest.raises(ValueError):
            ht_weights(d)
        return
    ws = ht_weights(d)
    np.testing.assert_allclose(ws.weights, oracles.ht_oracle(d.support.tolist(), d.pmf), atol=1e-12)
    assert _oracle_bias("SUTVA", generate("empty", n), d, ws.weights) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31))
def test_naive_matches_oracle(n, seed):
    d = random_design(np.random.default_rng(seed), n, exclude_trivial=True)
    np.testing.assert_allclose(naive_weights(d).weights, oracles.naive_oracle(d.support.tolist()), atol=1e-14)


@pytest.mark.parametrize("n,k", [(4, 2), (5, 1), (6, 3)])
def test_naive_unbiased_under_sutva_for_crd(n, k):
    d = crd_design(n, k)
    assert _oracle_bias("SUTVA", generate("empty", n), d, naive_weights(d).weights) < 1e-12


def test_naive_biased_under_sania_for_bernoulli(tail_v3, bern4):
    ws = naive_weights(bern4)
    v = check_unbiased(ws, build_constraints("SANIA", tail_v3, bern4), 1e-8)
    assert not v.unbiased and v.max_violation > 1e-8
    assert _oracle_bias("SANIA", tail_v3, bern4, ws.weights) > 1e-8


@pytest.mark.parametrize("n", [4, 5, 6, 7])
def test_stratified_naive_unbiased_on_symmetric_ring_designs(n):
    g, d = balanced_ring_design(np.random.default_rng(n), n)
    ws = stratified_naive_weights(g, d)
    assert check_unbiased(ws, build_constraints("SANIA", g, d), 1e-10).unbiased
    assert _oracle_bias("SANIA", g, d, ws.weights) < 1e-10


def test_stratified_naive_is_naive_without_interference():
    d = crd_design(5, 2)
    np.testing.assert_allclose(
        stratified_naive_weights(generate("empty", 5), d).weights, naive_weights(d).weights)


def test_stratified_strictness(tail_v3):
    d = crd_design(4, 2)
    with pytest.raises(ValueError, match="stratum"):
        stratified_naive_weights(tail_v3, d, strict=True)
    ws = stratified_naive_weights(tail_v3, d, strict=False)
    assert np.isfinite(ws.weights).all()


def test_degenerate_designs_raise():
    d = bernoulli_design(3)
    with pytest.raises(ValueError, match="both arms"):
        naive_weights(d)
    d1 = Design(np.array([[1, 0], [1, 1]]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError, match="unit 0"):
        ht_weights(d1)


def test_weight_lookup_and_estimates(bern4):
    ws = naive_weights(bern4)
    Y = np.random.default_rng(0).normal(size=bern4.support.shape)
    est = ws.estimates(Y)
    for k, z in enumerate(bern4.support):
        assert ws.estimate(z, Y[k]) == pytest.approx(est[k])
    with pytest.raises(KeyError):
        ws.weight([0, 0, 0, 0])
    with pytest.raises(ValueError):
        ws.require(crd_design(4, 2))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31))
def test_weight_file_round_trip(tmp_path_factory, n, seed):
    rng = np.random.default_rng(seed)
    d = random_design(rng, n)
    ws = WeightScheme.on(d, rng.normal(size=d.support.shape) * 10.0 ** rng.integers(-8, 8), "x")
    path = tmp_path_factory.mktemp("w") / "w.txt"
    write_weights(ws, path, {"name": "x", "note": "a: b"})
    back, header = read_weights(path)
    assert back == ws
    assert header == {"name": "x", "note": "a: b"}


def test_weight_file_errors(tmp_path):
    p = tmp_path / "w.txt"
    p.write_text("01 1.0\n")
    with pytest.raises(ValueError, match="expected 2"):
        read_weights(p)
    p.write_text("# only a header\n")
    with pytest.raises(ValueError, match="no weight rows"):
        read_weights(p)


def test_hand_computed_weights():
    d = crd_design(4, 2)
    np.testing.assert_allclose(naive_weights(d).weight([1, 1, 0, 0]), [0.5, 0.5, -0.5, -0.5])
    d1 = crd_design(4, 1)
    np.testing.assert_allclose(naive_weights(d1).weight([1, 0, 0, 0]), [1, -1 / 3, -1 / 3, -1 / 3])
    np.testing.assert_allclose(np.abs(ht_weights(bernoulli_design(4)).weights), 0.5)
    np.testing.assert_allclose(ht_weights(d).weight([1, 1, 0, 0]), [0.5, 0.5, -0.5, -0.5])
    # ring C4, z=(1,1,0,0): every unit has treated degree 1, one balanced stratum
    ring = generate("ring", 4)
    ws = stratified_naive_weights(ring, d, strict=False)
    np.testing.assert_allclose(ws.weight([1, 1, 0, 0]), [0.5, 0.5, -0.5, -0.5])


def test_stratified_naive_biased_on_triangle_tail(tail_v1, bern4):
    ws = stratified_naive_weights(tail_v1, bern4, strict=False)
    v = check_unbiased(ws, build_constraints("SANIA", tail_v1, bern4), 1e-6)
    assert not v.unbiased


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31))
def test_difference_weights_sum_to_zero(n, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    d = random_design(rng, n, exclude_trivial=True)
    np.testing.assert_allclose(naive_weights(d).weights.sum(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(
        stratified_naive_weights(g, d, strict=False).weights.sum(axis=1), 0, atol=1e-12)
