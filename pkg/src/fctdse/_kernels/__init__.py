"""Hot kernels with a compiled core and a numpy fallback.

The compiled extension ``_core`` is used when it imports and the
environment variable ``FCTDSE_PURE_PYTHON`` is unset or ``0``. ``BACKEND``
names the active implementation.
"""

import os

from fctdse._kernels import _fallback as fallback

compiled = None
if os.environ.get("FCTDSE_PURE_PYTHON", "0") in ("", "0"):
    try:
        from fctdse._kernels import _core as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else fallback
BACKEND = "cython" if compiled is not None else "python"

adjugate_det = _impl.adjugate_det
agent_rhs = _impl.agent_rhs
agent_state_size = fallback.agent_state_size

__all__ = ["BACKEND", "adjugate_det", "agent_rhs", "agent_state_size", "compiled", "fallback"]
