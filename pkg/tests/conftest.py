import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mivlue.design import Design, _all_allocations, bernoulli_design, orbit_design_ring  # noqa: E402
from mivlue.graph import Graph, generate  # noqa: E402

# Published optimal weights for the triangle-plus-tail example, allocations in canonical order
# (unit 0 is the least significant bit), rounded as published.
TAIL_WEIGHTS = np.array([
    [0, -2, -2, 3.9],
    [-1.7, 1.3, 1.8, -1.7],
    [0.92, 0.41, -0.017, -1.4],
    [-1.7, 1.8, 1.3, -1.7],
    [0.92, -0.017, 0.41, -1.4],
    [0.067, 0.37, 0.37, -1],
    [-2.5, 1.4, 1.4, -0.23],
    [0.13, -0.85, -0.85, 1.3],
    [1.4, -0.69, -0.69, -0.015],
    [-0.18, -0.49, -0.37, 1.3],
    [1.4, 0.4, -1.4, -0.45],
    [-0.18, -0.37, -0.49, 1.3],
    [1.4, -1.4, 0.4, -0.45],
    [0, 0.064, 0.064, 0.43],
])


def random_graph(rng, n, p=None, symmetric=True):
    p = rng.uniform(0.2, 0.9) if p is None else p
    if symmetric:
        return generate("erdos_renyi", n, seed=int(rng.integers(2**31)), p=p)
    a = (rng.random((n, n)) < p).astype(np.int8)
    np.fill_diagonal(a, 0)
    return Graph(a)


def random_design(rng, n, keep=None, exclude_trivial=False):
    """Random pmf on a random subset of the cube (or on ``keep`` rows)."""
    Z = _all_allocations(n)
    if exclude_trivial:
        s = Z.sum(axis=1)
        Z = Z[(s > 0) & (s < n)]
    if keep is None:
        keep = rng.random(len(Z)) < rng.uniform(0.5, 1.0)
        keep[rng.integers(len(Z))] = True
    Z = Z[keep]
    p = rng.uniform(0.2, 1.0, len(Z))
    return Design(Z, p / p.sum())


def full_design(rng, n, exclude_trivial=False):
    """Full (or trivial-excluded) cube with random positive masses."""
    return random_design(rng, n, keep=slice(None), exclude_trivial=exclude_trivial)


def balanced_ring_design(rng, n):
    """Random mixture of rotation orbits on the ring whose allocations share a treated degree across arms."""
    g = generate("ring", n)
    orbits, seen = [], set()
    for z in _all_allocations(n):
        key = z.tobytes()
        if key in seen:
            continue
        orb = orbit_design_ring(n, z)
        for r in orb.support:
            seen.add(r.tobytes())
        D = orb.degrees(g)
        Zs = orb.support
        if all(set(dz[zz == 1].tolist()) & set(dz[zz == 0].tolist()) for zz, dz in zip(Zs, D)):
            orbits.append(orb)
    pick = [o for o in orbits if rng.random() < 0.7] or orbits[:1]
    mass = rng.uniform(0.2, 1.0, len(pick))
    rows = np.concatenate([o.support for o in pick])
    probs = np.concatenate([np.full(o.size, m / o.size) for o, m in zip(pick, mass)])
    return g, Design(rows, probs / probs.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tail_v1():
    return generate("triangle_tail_v1", 4)


@pytest.fixture
def tail_v3():
    return generate("triangle_tail_v3", 4)


@pytest.fixture
def bern4():
    return bernoulli_design(4, exclude_trivial=True)
