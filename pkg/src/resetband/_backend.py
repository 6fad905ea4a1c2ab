"""Select the simulation kernel backend at import time.

The compiled extension is used when available; setting the environment
variable ``RESETBAND_PURE_PYTHON=1`` forces the pure-Python loops.
"""

import os

from . import _kernels_py

if os.environ.get("RESETBAND_PURE_PYTHON"):
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        kernels = _kernels_py

BACKEND = kernels.BACKEND
