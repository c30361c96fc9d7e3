"""Hot-kernel backend selection.

The compiled Cython extension is preferred; the numpy fallback is used when
the extension is unavailable or when FERKD_PURE is set in the environment.
``backend_name()`` reports which one is active.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("FERKD_PURE"):
    _impl = _pykernels
else:
    try:
        from . import _cykernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pykernels

quantize_topk = _impl.quantize_topk
recover_dense = _impl.recover_dense
sce_batch = _impl.sce_batch
sample_crop_px = _impl.sample_crop_px


def backend_name() -> str:
    return _impl.BACKEND


def backends() -> dict[str, object]:
    """All importable backends, keyed by name (for the comparison benchmark)."""
    found: dict[str, object] = {"pure": _pykernels}
    try:
        from . import _cykernels

        found["cython"] = _cykernels
    except ImportError:
        pass
    return found
