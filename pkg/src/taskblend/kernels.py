"""Backend selection for the numeric kernels.

The compiled extension ``taskblend._kernels`` is used when it imports;
otherwise the numpy reference in ``taskblend._kernels_py`` is used.  Setting
``TASKBLEND_PURE_PYTHON=1`` forces the reference backend.  Both backends
consume no randomness, so swapping them never changes an RNG stream.
"""
from __future__ import annotations

import contextlib
import os
from types import ModuleType

import numpy as np

from . import _kernels_py


def _load_compiled() -> ModuleType | None:
    if os.environ.get("TASKBLEND_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        return None
    return _kernels


_compiled = _load_compiled()
_impl: ModuleType = _compiled if _compiled is not None else _kernels_py


def backend() -> str:
    """Name of the active backend: ``"compiled"`` or ``"python"``."""
    return "compiled" if _impl is not _kernels_py else "python"


def compiled_available() -> bool:
    return _compiled is not None


def set_backend(name: str) -> None:
    global _impl
    if name == "python":
        _impl = _kernels_py
    elif name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        _impl = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")


@contextlib.contextmanager
def use_backend(name: str):
    previous = backend()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.int64)


def softmax(v) -> np.ndarray:
    return _impl.softmax(_f64(v))


def lu_solve(a, b) -> tuple[np.ndarray, float]:
    return _impl.lu_solve(_f64(a), _f64(b))


def min_pivot(a) -> float:
    return _impl.min_pivot(_f64(a))


def cosine(u, v) -> float:
    return _impl.cosine(_f64(u), _f64(v))


def aggregate(w, g) -> np.ndarray:
    return _impl.aggregate(_f64(w), _f64(g))


def pcgrad(g, orders) -> tuple[np.ndarray, np.ndarray]:
    return _impl.pcgrad(_f64(g), _i64(orders))


def gradvac(g, orders, phi_hat: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray]:
    # phi_hat is updated in place, so it must already be contiguous float64
    if phi_hat.dtype != np.float64 or not phi_hat.flags.c_contiguous:
        raise TypeError("phi_hat must be a C-contiguous float64 array")
    return _impl.gradvac(_f64(g), _i64(orders), phi_hat, float(beta))


def mgda_frank_wolfe(gram, max_iter: int, tol: float) -> tuple[np.ndarray, float, int]:
    return _impl.mgda_frank_wolfe(_f64(gram), int(max_iter), float(tol))


def graddrop(g, sign, e, leak) -> np.ndarray:
    return _impl.graddrop(_f64(g), _f64(sign), _f64(e), _f64(leak))


def quad_batch(x, idx, theta, curv) -> tuple[np.ndarray, np.ndarray]:
    return _impl.quad_batch(_f64(x), _i64(idx), _f64(theta), _f64(curv))
