"""Discrete-event simulation of SLQ(d) and JSQ(d).

The event loop lives in a compiled extension (``_ckernel``) with a
pure-Python twin (``_pykernel``).  The compiled kernel is used when it
imports; set ``SLQSIM_BACKEND=python`` to force the fallback.
"""

import os

from slqsim.engine import _pykernel

BACKENDS = {"python": _pykernel}
try:
    from slqsim.engine import _ckernel
except ImportError:  # extension not built
    _ckernel = None
else:
    BACKENDS["compiled"] = _ckernel

_requested = os.environ.get("SLQSIM_BACKEND", "").lower()
if _requested and _requested not in BACKENDS:
    raise ImportError(f"SLQSIM_BACKEND={_requested!r} unavailable; have {sorted(BACKENDS)}")
DEFAULT_BACKEND = _requested or ("compiled" if _ckernel is not None else "python")

from slqsim.engine.simulation import (  # noqa: E402
    SimOutput,
    make_streams,
    run_jsq_simulation,
    run_simulation,
    sample_longest,
)

__all__ = [
    "BACKENDS",
    "DEFAULT_BACKEND",
    "SimOutput",
    "make_streams",
    "run_jsq_simulation",
    "run_simulation",
    "sample_longest",
]
