"""Selects the dense-layer kernel implementation at import time.

The compiled extension (``gradmarket._kernels``) is preferred when present;
otherwise the pure-numpy reference (``gradmarket._kernels_py``) is used.
Override with the environment variable GRADMARKET_BACKEND:

  auto  compiled if available, else numpy (default)
  c     compiled, ImportError if the extension is missing
  py    numpy reference

Both modules expose the same four in-place operations; see
``benchmarks/bench_backends.py`` in the source tree for a speed comparison.
"""
from __future__ import annotations

import os

_choice = os.environ.get("GRADMARKET_BACKEND", "auto").strip().lower()
if _choice not in {"auto", "c", "py"}:
    raise ImportError(
        f"GRADMARKET_BACKEND={_choice!r} not understood; use auto, c, or py"
    )

kernels = None
backend_name = ""
if _choice in ("auto", "c"):
    try:
        from gradmarket import _kernels as kernels  # type: ignore[no-redef]

        backend_name = "c"
    except ImportError:
        if _choice == "c":
            raise
if kernels is None:
    from gradmarket import _kernels_py as kernels  # type: ignore[no-redef]

    backend_name = "py"


def get_backend_name() -> str:
    """Name of the active kernel backend: "c" or "py"."""
    return backend_name
