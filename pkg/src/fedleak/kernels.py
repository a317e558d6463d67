"""Backend selection for the hot update-map kernels.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementation in ``_pykernels``. Setting ``FEDLEAK_PURE_PYTHON=1``
forces the fallback. The wrappers here translate a :class:`ModelSpec` into
the flat layout arguments both backends take.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels
from .models import ModelKind, ModelSpec

_KIND_CODE = {ModelKind.LINEAR: 0, ModelKind.LOGISTIC: 1, ModelKind.MLP1: 2}


def _load_backend():
    if os.environ.get("FEDLEAK_PURE_PYTHON", "") not in ("", "0"):
        return _pykernels, "python"
    try:
        from . import _ckernels
    except ImportError:
        return _pykernels, "python"
    return _ckernels, "cython"


_impl, BACKEND = _load_backend()


def backends() -> dict:
    """All importable backends by name; used by tests and the benchmark."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


def _layout(spec: ModelSpec):
    return (
        _KIND_CODE[spec.kind],
        spec.input_dim,
        spec.hidden_dim,
        spec.output_dim,
        bool(spec.bias),
    )


def _arrays(theta, X, y):
    return (
        np.ascontiguousarray(theta, dtype=float),
        np.ascontiguousarray(X, dtype=float).reshape(-1, np.shape(X)[-1]),
        np.ascontiguousarray(y, dtype=float).reshape(-1),
    )


def mean_grad(spec: ModelSpec, theta, X, y, impl=None) -> np.ndarray:
    """Batch-mean of ``grad_theta`` over the rows of ``X``."""
    impl = impl or _impl
    return impl.mean_grad(*_layout(spec), *_arrays(theta, X, y))


def sgd_pass(spec: ModelSpec, theta, X, y, eta: float, bounds, impl=None) -> np.ndarray:
    impl = impl or _impl
    bounds = np.asarray(bounds, dtype=np.intp)
    return impl.sgd_pass(*_layout(spec), *_arrays(theta, X, y), float(eta), bounds)


def local_descent(spec: ModelSpec, theta, X, y, eta: float, epochs: int, impl=None) -> np.ndarray:
    impl = impl or _impl
    return impl.local_descent(*_layout(spec), *_arrays(theta, X, y), float(eta), int(epochs))


def update_jacobian_fd(
    spec: ModelSpec, theta, X, y, eta: float, epochs: int, h: float, impl=None
) -> np.ndarray:
    impl = impl or _impl
    return impl.update_jacobian_fd(
        *_layout(spec), *_arrays(theta, X, y), float(eta), int(epochs), float(h)
    )
