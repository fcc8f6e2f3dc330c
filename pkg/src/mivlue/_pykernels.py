"""Numpy implementations of the per-allocation kernels (fallback for ``_ckernels``)."""

import numpy as np


def cell_sums(Z, D, p, values, max_deg):
    """``out[i, t, d] = sum_k p[k] * values[k, i] * 1{Z[k, i] == t, D[k, i] == d}``."""
    m, n = Z.shape
    out = np.zeros((n, 2, max_deg + 1), dtype=np.float64)
    units = np.broadcast_to(np.arange(n), (m, n))
    np.add.at(out, (units, Z, D), p[:, None] * values)
    return out


def stratified_weights(Z, D, max_deg):
    """Degree-stratified difference-of-means weights for each allocation.

    Returns ``(W, ok)``; ``ok[k]`` is False when allocation ``k`` has no
    stratum with both arms occupied, in which case its weights are zero.
    """
    m, n = Z.shape
    width = 2 * (max_deg + 1)
    keys = np.arange(m)[:, None] * width + Z * (max_deg + 1) + D
    counts = np.bincount(keys.ravel(), minlength=m * width).reshape(m, 2, max_deg + 1)
    n0 = counts[:, 0, :].astype(np.float64)
    n1 = counts[:, 1, :].astype(np.float64)
    both = (n0 > 0) & (n1 > 0)
    C = np.zeros_like(n0)
    C[both] = n0[both] * n1[both] / (n0[both] + n1[both])
    total = C.sum(axis=1)
    ok = total > 0
    rows = np.arange(m)[:, None]
    own = counts[rows, Z, D].astype(np.float64)
    scale = np.divide(C[rows, D], total[:, None], out=np.zeros((m, n)), where=ok[:, None])
    W = scale * (2.0 * Z - 1.0) / own
    return W, ok
