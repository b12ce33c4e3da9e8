"""Backend selection for the correlation hot loops.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``NFCODEBOOK_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the numpy implementation is used.  ``BACKEND`` names the
active one.
"""
import os

import numpy as np

from . import _kernels_py

_force_py = os.environ.get("NFCODEBOOK_PURE_PYTHON", "") not in ("", "0")

if _force_py:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def line_correlation(lin, quad, n, backend=None):
    """Normalised magnitude of a quadratic-phase sum along a centred line array.

    Returns ``|sum_u exp(j(lin*u + quad*u**2))| / n`` for each pair
    ``(lin[i], quad[i])``, with ``u = m - (n-1)/2``, ``m = 0..n-1``.
    """
    lin = np.ascontiguousarray(np.atleast_1d(lin), dtype=float)
    quad = np.ascontiguousarray(np.broadcast_to(quad, lin.shape), dtype=float)
    out = np.empty(lin.shape[0])
    _pick(backend).line_correlation(lin, quad, int(n), out)
    return out


def plane_correlation(coeffs, n, backend=None):
    """Planar quadratic-phase sum over an ``n x n`` centred grid.

    ``coeffs`` has shape ``(k, 5)``: coefficients of ``(u, v, u², v², uv)``.
    """
    coeffs = np.ascontiguousarray(np.atleast_2d(coeffs), dtype=float)
    if coeffs.shape[1] != 5:
        raise ValueError("plane coefficients must have 5 columns")
    out = np.empty(coeffs.shape[0])
    _pick(backend).plane_correlation(coeffs, int(n), out)
    return out


def _pick(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _kernels_py
    if backend == "compiled":
        try:
            from . import _kernels
        except ImportError as exc:
            raise RuntimeError("compiled kernels are not available") from exc
        return _kernels
    raise ValueError(f"unknown backend {backend!r}")
