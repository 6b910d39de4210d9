"""Backend selection for the hot loops.

The compiled extension is preferred; set ``SPGARCH_PURE_PYTHON=1`` to force
the numpy/scipy fallback (useful for debugging and for the benchmark).
"""

import os

BACKEND = "python"

if os.environ.get("SPGARCH_PURE_PYTHON", "") not in ("", "0"):
    from spgarch import _kernels_py as _impl
else:
    try:
        from spgarch import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        from spgarch import _kernels_py as _impl

lower_solve = _impl.lower_solve
lower_solve_pair = _impl.lower_solve_pair
fixed_point = _impl.fixed_point

__all__ = ["BACKEND", "lower_solve", "lower_solve_pair", "fixed_point"]
