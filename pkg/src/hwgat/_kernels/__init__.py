"""Block attention kernels: compiled core with a pure-numpy fallback.

The Cython extension is picked at import time when it built successfully;
set HWGAT_KERNEL=numpy (or =cython) to force a backend.  Both expose the
same ``attention_forward`` / ``attention_backward`` pair and are
interchangeable bit-for-bit on the same dtype up to floating-point
reassociation; see benchmarks/bench_attention.py for a speed comparison.
"""

import os

from . import fallback

_forced = os.environ.get("HWGAT_KERNEL", "").strip().lower()

_cython = None
if _forced != "numpy":
    try:
        from . import _attention as _cython
    except ImportError:
        _cython = None
        if _forced == "cython":
            raise ImportError(
                "HWGAT_KERNEL=cython but the compiled extension is unavailable; "
                "reinstall with the build step enabled"
            )

if _cython is not None:
    BACKEND = "cython"
    attention_forward = _cython.attention_forward
    attention_backward = _cython.attention_backward
else:
    BACKEND = "numpy"
    attention_forward = fallback.attention_forward
    attention_backward = fallback.attention_backward


def backend_name() -> str:
    """Which kernel implementation is active: 'cython' or 'numpy'."""
    return BACKEND
