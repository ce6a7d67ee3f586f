"""Backend selection for the numeric kernels.

The compiled extension is used when it was built; otherwise the pure-Python
module is used. Set ``VNSIM_PURE_PYTHON=1`` to force the fallback.
"""
import os

from vnsim import _kernels_py

python_backend = _kernels_py
compiled_backend = None

if os.environ.get("VNSIM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from vnsim import _kernels as compiled_backend
    except ImportError:
        compiled_backend = None

_active = compiled_backend or python_backend
BACKEND = "cython" if compiled_backend is not None and _active is compiled_backend else "python"

compose_tree = _active.compose_tree
led_dist2 = _active.led_dist2
k_smallest = _active.k_smallest


def backends():
    """Available backends as (name, module) pairs."""
    out = [("python", python_backend)]
    if compiled_backend is not None:
        out.append(("cython", compiled_backend))
    return out
