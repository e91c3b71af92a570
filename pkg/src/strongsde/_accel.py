"""Backend selection for the hot loops.

``STRONGSDE_BACKEND=numpy`` forces the vectorised numpy path even when numba
is importable; the default is ``numba`` when available.
"""

import os

try:
    import numba as _numba
except ImportError:  # pragma: no cover - exercised only without numba
    _numba = None

_REQUESTED = os.environ.get("STRONGSDE_BACKEND", "numba").strip().lower()
if _REQUESTED not in ("numba", "numpy"):
    raise ValueError(
        f"STRONGSDE_BACKEND must be 'numba' or 'numpy', got {_REQUESTED!r}")

HAVE_NUMBA = _numba is not None
BACKEND = "numba" if (_REQUESTED == "numba" and HAVE_NUMBA) else "numpy"


def njit(func):
    """Compile ``func`` with numba if available, otherwise return it."""
    if not HAVE_NUMBA:
        return func
    return _numba.njit(error_model="numpy", cache=False)(func)


def identity(func):
    return func


def active_backend():
    return BACKEND
