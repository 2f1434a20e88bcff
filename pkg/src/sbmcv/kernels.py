"""Select the BP kernel backend at import time.

The compiled extension ``sbmcv._bp_core`` is used when it is importable;
otherwise, or when ``SBMCV_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the pure-Python kernels in ``sbmcv._bp_py`` are used.
"""

import os

from . import _bp_py

_force_py = os.environ.get("SBMCV_PURE_PYTHON", "") not in ("", "0")

if _force_py:
    _impl = _bp_py
    BACKEND = "python"
else:
    try:
        from . import _bp_core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _bp_py
        BACKEND = "python"

sweep_async = _impl.sweep_async
finalize = _impl.finalize
sweep_sync = _bp_py.sweep_sync


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` (``"compiled"`` or ``"python"``).

    ``None`` returns the backend selected at import.
    """
    if name is None:
        return _impl
    if name == "python":
        return _bp_py
    if name == "compiled":
        from . import _bp_core

        return _bp_core
    raise ValueError(f"unknown backend {name!r}")
