"""Hot-kernel backend selection.

Point location and finite-element field evaluation dominate the runtime of
the registration loop, so they are compiled with Cython when available.
Setting REGROM_PURE_PYTHON=1 forces the numpy fallback; the attribute
``BACKEND`` reports which implementation is active.
"""

import os

if os.environ.get("REGROM_PURE_PYTHON"):
    from regrom._kernels import numpy_impl as impl
else:
    try:
        from regrom._kernels import native as impl  # type: ignore[no-redef]
    except ImportError:
        from regrom._kernels import numpy_impl as impl

BACKEND = impl.BACKEND
MODE_STRICT = 0
MODE_CLAMP = 1

locate = impl.locate
eval_fields = impl.eval_fields
