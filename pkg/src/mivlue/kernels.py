"""Hot per-allocation kernels.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy versions in ``_pykernels`` are used. Set ``MIVLUE_PURE_PYTHON=1`` to
force the fallback.
"""

import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("MIVLUE_PURE_PYTHON") == "1":
        raise ImportError("compiled kernels disabled by MIVLUE_PURE_PYTHON")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "numpy"

__all__ = ["BACKEND", "cell_sums", "stratified_weights"]


def _prep(Z, D):
    return (
        np.ascontiguousarray(Z, dtype=np.int8),
        np.ascontiguousarray(D, dtype=np.int64),
    )


def cell_sums(Z, D, p, values=None, max_deg=None, impl=None):
    """Probability-weighted sums of ``values`` over (unit, arm, treated-degree) cells.

    Returns an array of shape ``(n, 2, max_deg + 1)``. With ``values=None``
    the result is the joint propensity table ``Pr[z_i = t, d_i = d]``.
    """
    Z, D = _prep(Z, D)
    if max_deg is None:
        max_deg = int(D.max(initial=0))
    if values is None:
        values = np.ones(Z.shape, dtype=np.float64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    p = np.ascontiguousarray(p, dtype=np.float64)
    return (impl or _impl).cell_sums(Z, D, p, values, int(max_deg))


def stratified_weights(Z, D, max_deg=None, impl=None):
    """Degree-stratified naive weights per allocation; returns ``(W, ok)``."""
    Z, D = _prep(Z, D)
    if max_deg is None:
        max_deg = int(D.max(initial=0))
    return (impl or _impl).stratified_weights(Z, D, int(max_deg))
