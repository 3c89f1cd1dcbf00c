"""Hot balancing-walk kernels: compiled extension with pure-Python fallback.

The backend is chosen once at import time: the Cython extension when it built,
otherwise the pure-Python twin. Set ``ZIMPUTE_PURE_PYTHON=1`` to force the
fallback. Both backends are bit-identical for identical inputs; see
``zimpute.bench`` for a speed comparison.
"""

import os


def load_backend(name):
    """Return the kernel module for ``name`` ("compiled" or "pure").

    Raises ImportError if the compiled backend was requested but not built.
    """
    if name == "pure":
        from . import _pykernels
        return _pykernels
    if name == "compiled":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    if os.environ.get("ZIMPUTE_PURE_PYTHON", "").strip() not in ("", "0", "false", "False"):
        return load_backend("pure")
    try:
        return load_backend("compiled")
    except ImportError:
        return load_backend("pure")


_impl = _select()

BACKEND = _impl.BACKEND_NAME
EPS = _impl.EPS if hasattr(_impl, "EPS") else 1e-9

flight_k1 = _impl.flight_k1
assign_donors = _impl.assign_donors
