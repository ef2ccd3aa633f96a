"""Simulation engine backend selection.

The hot kernels (closed-loop sample march, offline adaptive filtering,
Newmark orbit integration) exist twice: a compiled Cython core and a
pure-Python fallback with identical semantics.  The compiled core is
used when importable; set ``VIBENCH_FORCE_PYTHON=1`` to force the
fallback (used by the backend-equivalence tests and the benchmark).
"""

import os

if os.environ.get("VIBENCH_FORCE_PYTHON"):
    from . import _purepy as core
else:
    try:
        from . import _core as core  # type: ignore[attr-defined]
        if not hasattr(core, "run_segment"):
            raise ImportError("compiled core is incomplete")
    except ImportError:
        from . import _purepy as core

BACKEND = core.BACKEND

__all__ = ["core", "BACKEND"]
