"""Hot loops of the acquisition, compiled when available.

The Cython extension ``_kernels`` is preferred; when it has not been built
the numpy implementation in ``_fallback`` is used.  Set ``CLOVER_PURE_PYTHON=1``
to force the fallback.
"""

import os

from . import _fallback

fallback = _fallback
compiled = None
if not os.environ.get("CLOVER_PURE_PYTHON"):
    try:
        from . import _kernels as compiled  # type: ignore[no-redef]
    except ImportError:
        compiled = None

backend = compiled if compiled is not None else fallback
BACKEND_NAME = "cython" if compiled is not None else "numpy"

approx_entropy = backend.approx_entropy
lookahead_entropy_sums = backend.lookahead_entropy_sums
