"""Numerical kernel dispatch.

Two interchangeable backends live here: a numba-jitted one and a pure-NumPy
one. The active backend is chosen once at import time from the
``NOISECOV_BACKEND`` environment variable:

* ``auto`` (default) — numba if importable, else numpy;
* ``numba`` — require numba, fail loudly if missing;
* ``numpy`` — force the pure-NumPy fallback.

Both backends produce results equal to well under 1e-12 relative error; they
are not bit-identical to each other because summation orders differ, but each
backend is deterministic on its own.
"""

from __future__ import annotations

import os

_ENV_VAR = "NOISECOV_BACKEND"
_choice = os.environ.get(_ENV_VAR, "auto").strip().lower()

if _choice not in {"auto", "numba", "numpy"}:
    raise ImportError(
        f"{_ENV_VAR}={_choice!r} is not recognized; use 'auto', 'numba' or 'numpy'"
    )

if _choice == "numpy":
    from . import numpy_impl as _impl
elif _choice == "numba":
    from . import numba_impl as _impl  # ImportError propagates if numba is absent
else:
    try:
        from . import numba_impl as _impl
    except ImportError:
        from . import numpy_impl as _impl

BACKEND: str = _impl.BACKEND_NAME

intersect_sorted = _impl.intersect_sorted
zeta_k = _impl.zeta_k
zeta_xi = _impl.zeta_xi
heston_evolve = _impl.heston_evolve

__all__ = [
    "BACKEND",
    "intersect_sorted",
    "zeta_k",
    "zeta_xi",
    "heston_evolve",
]
