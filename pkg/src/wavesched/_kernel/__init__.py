"""Search kernels: compiled extension when available, pure Python otherwise.

Set ``WAVESCHED_PURE_PYTHON=1`` to force the reference implementation.
"""

import os

from . import _fallback

try:
    from . import _fast
except ImportError:  # extension not built
    _fast = None

if _fast is not None and not os.environ.get("WAVESCHED_PURE_PYTHON"):
    impl = _fast
    BACKEND = "compiled"
else:
    impl = _fallback
    BACKEND = "python"


def backend(name: str):
    """Return the kernel module for ``"compiled"`` or ``"python"``."""
    if name == "python":
        return _fallback
    if name == "compiled":
        if _fast is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _fast
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list[str]:
    return ["python"] + (["compiled"] if _fast is not None else [])
