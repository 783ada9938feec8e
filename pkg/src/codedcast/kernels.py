"""Hot-kernel backend selection.

Prefers the compiled extension when it imported cleanly; otherwise (or when
CODEDCAST_DISABLE_EXT is set in the environment) falls back to the numpy
implementation.  Both backends expose the same three functions and agree to
floating-point rounding; BACKEND records which one is active.
"""

import os

from codedcast import _kernels_numpy

if os.environ.get("CODEDCAST_DISABLE_EXT"):
    _impl = _kernels_numpy
    BACKEND = "numpy"
else:
    try:
        from codedcast import _speedups as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_numpy
        BACKEND = "numpy"

actor_probs = _impl.actor_probs
critic_value = _impl.critic_value
decode_deliveries = _impl.decode_deliveries
