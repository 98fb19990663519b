"""Select the compiled kernels when available, else the numpy fallback.

Set ``PARALLEL_REFRACTOR_PURE=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
envelope_min = _pykernels.envelope_min
capture_flux = _pykernels.capture_flux

if os.environ.get("PARALLEL_REFRACTOR_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        envelope_min = _ckernels.envelope_min
        capture_flux = _ckernels.capture_flux
