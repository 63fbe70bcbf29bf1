"""Backend selection for the hot loops (IoU, NMS, Soft-NMS, voting).

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy twins in ``_pykernels``. Set ``BOXFORGE_BACKEND=python`` to force the
fallback (``=c`` makes a missing extension an ImportError).
"""
import os

from . import _pykernels

LINEAR = _pykernels.LINEAR
GAUSSIAN = _pykernels.GAUSSIAN

_choice = os.environ.get("BOXFORGE_BACKEND", "auto").lower()

if _choice == "python":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "c"
    except ImportError:
        if _choice == "c":
            raise
        _impl = _pykernels
        BACKEND = "python"

iou_matrix = _impl.iou_matrix
nms_keep = _impl.nms_keep
soft_nms = _impl.soft_nms
box_vote = _impl.box_vote


def available_backends():
    """Map backend name to kernel module for every backend that imports."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["c"] = _ckernels
    except ImportError:
        pass
    return out
