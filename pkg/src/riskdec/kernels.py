"""Backend selection for the numeric inner loops.

The compiled extension is used when it was built and ``RISKDEC_PURE_PYTHON``
is unset; otherwise the numpy implementations are used. ``BACKEND`` names
the active one. Inputs are coerced to the contiguous float64/int64 layouts
both backends expect.
"""

import os

import numpy as np

from . import _kernels_py

_impl = _kernels_py
BACKEND = "python"
if not os.environ.get("RISKDEC_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _labels(y):
    return np.ascontiguousarray(y, dtype=np.int64)


def softmax_xent(logits, labels, impl=None):
    return (impl or _impl).softmax_xent(_f64(logits), _labels(labels))


def pairwise_potential(Z, impl=None):
    return (impl or _impl).pairwise_potential(_f64(Z))


def lattice_objectives(X, y, lam, params, impl=None):
    return (impl or _impl).lattice_objectives(_f64(X), _labels(y), float(lam), _f64(params))


def implementations():
    """All importable backends, keyed by name (used for parity tests and benchmarks)."""
    impls = {"python": _kernels_py}
    try:
        from . import _kernels
        impls["cython"] = _kernels
    except ImportError:
        pass
    return impls
