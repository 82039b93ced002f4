"""Selects the compiled evaluation kernels, falling back to pure python.

Set FAQ_FORCE_PYTHON=1 to skip the compiled extension (useful for timing
comparisons and debugging; see `faq bench-kernels`).
"""

from __future__ import annotations

import os


def _load():
    forced = os.environ.get("FAQ_FORCE_PYTHON", "").strip() not in ("", "0")
    if not forced:
        try:
            from . import _kernels  # compiled extension, optional

            return _kernels, "compiled"
        except ImportError:
            pass
    from . import _kernels_py

    return _kernels_py, "python"


kernels, BACKEND = _load()
