"""Kernel backend selection.

The compiled extension is used when importable; set ``NEMATIC2D_KERNELS=python``
to force the numpy fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

PERIODIC, NEUMANN, DIRICHLET = 0, 1, 2

_impl = _kernels_py
if os.environ.get("NEMATIC2D_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND
helmholtz_apply = _impl.helmholtz_apply
cg_helmholtz = _impl.cg_helmholtz
upwind_divergence = _impl.upwind_divergence


def backends() -> dict[str, object]:
    """All importable backends keyed by name (used by tests and the benchmark)."""
    out: dict[str, object] = {"python": _kernels_py}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
