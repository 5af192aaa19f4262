"""Select the compiled ring kernels, falling back to pure Python.

Set ``RJCH_PURE_PYTHON=1`` to force the fallback.
"""
import os

if os.environ.get("RJCH_PURE_PYTHON", "") not in ("", "0"):
    from rjch import _pycore as core

    BACKEND = "python"
else:
    try:
        from rjch import _core as core

        BACKEND = "compiled"
    except ImportError:  # extension not built
        from rjch import _pycore as core

        BACKEND = "python"

RingCore = core.RingCore
murmur3_x64_128 = core.murmur3_x64_128
idealized_merge_variance = core.idealized_merge_variance

__all__ = ["BACKEND", "RingCore", "murmur3_x64_128", "idealized_merge_variance"]
