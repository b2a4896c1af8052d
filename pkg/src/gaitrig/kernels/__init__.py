"""Hot-kernel backend selection.

The compiled Cython extension is preferred when it imported cleanly; the
numpy fallback is always available. Set GAITRIG_KERNELS=numpy|compiled to
force one (forcing `compiled` raises if the extension is absent).
"""

import os

from . import _numpy

_forced = os.environ.get("GAITRIG_KERNELS", "").strip().lower()

_compiled = None
if _forced != "numpy":
    try:
        from . import _ctemporal as _compiled
    except ImportError:
        _compiled = None
        if _forced == "compiled":
            raise ImportError(
                "GAITRIG_KERNELS=compiled but the gaitrig Cython extension is not built"
            )

_active = _compiled if _compiled is not None else _numpy

BACKEND = _active.BACKEND
temporal_im2col = _active.temporal_im2col
temporal_col2im = _active.temporal_col2im


def available_backends():
    out = {"numpy": _numpy}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
