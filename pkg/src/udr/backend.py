"""Kernel backend selection: numba-compiled (default) or pure numpy.

``UDR_BACKEND=numpy`` in the environment selects the uncompiled fallback for
the whole process; anything else (or unset) selects numba. Both backends are
loaded from the same source (:mod:`udr._kernels`) and both are available
simultaneously for the benchmark via :func:`numba_kernels` /
:func:`numpy_kernels`.

Results are bit-reproducible within a backend; across backends matmul parts
agree bitwise (same BLAS) while transcendentals may differ by ~1 ulp, so
reproduction manifests record which backend produced a run.
"""

import importlib.util
import os

ENV_VAR = "UDR_BACKEND"

_cache = {}


def _load_kernels(jit: bool):
    key = "numba" if jit else "numpy"
    if key in _cache:
        return _cache[key]
    prev = os.environ.get("UDR_KERNEL_JIT")
    os.environ["UDR_KERNEL_JIT"] = "1" if jit else "0"
    try:
        spec = importlib.util.find_spec("udr._kernels")
        mod = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(mod)
    finally:
        if prev is None:
            os.environ.pop("UDR_KERNEL_JIT", None)
        else:
            os.environ["UDR_KERNEL_JIT"] = prev
    _cache[key] = mod
    return mod


def active_backend() -> str:
    """Name of the backend the package will use: 'numba' or 'numpy'."""
    return "numpy" if os.environ.get(ENV_VAR, "numba") == "numpy" else "numba"


def kernels():
    """Kernel module for the active backend (compilation is lazy per call)."""
    return _load_kernels(active_backend() == "numba")


def numba_kernels():
    return _load_kernels(True)


def numpy_kernels():
    return _load_kernels(False)
