"""Kernel dispatch: compiled extension when available, pure Python otherwise.

Set ``RISKAGENT_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

IMPLEMENTATION = "python"
_impl = _kernels_py

if os.environ.get("RISKAGENT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        IMPLEMENTATION = "cython"

gae = _impl.gae
ewm = _impl.ewm
execute_trades = _impl.execute_trades

__all__ = ["IMPLEMENTATION", "gae", "ewm", "execute_trades"]
