"""Backend selection for the simulation kernels.

The compiled extension is preferred when importable; the numpy
reference implementation is the fallback. Set GAITLAB_BACKEND=python
or =native to force a choice (forcing native raises if the extension
is missing).
"""

import os

_forced = os.environ.get("GAITLAB_BACKEND", "").strip().lower()

if _forced not in ("", "native", "python"):
    raise RuntimeError(f"GAITLAB_BACKEND must be 'native' or 'python', got '{_forced}'")

if _forced == "python":
    from gaitlab._kernels import reference as impl
else:
    try:
        from gaitlab._kernels import native as impl  # type: ignore[attr-defined]
    except ImportError:
        if _forced == "native":
            raise
        from gaitlab._kernels import reference as impl

BACKEND = impl.BACKEND_NAME


def get_backend(name=None):
    """Return a kernel module by name (None = the active default)."""
    if name is None:
        return impl
    if name == "python":
        from gaitlab._kernels import reference
        return reference
    if name == "native":
        from gaitlab._kernels import native  # type: ignore[attr-defined]
        return native
    raise ValueError(f"unknown backend '{name}'")
