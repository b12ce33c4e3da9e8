"""Pure-numpy versions of the compiled correlation kernels.

Same signatures and semantics as ``_kernels.pyx``; used when the extension
is not built or when ``NFCODEBOOK_PURE_PYTHON=1`` is set.
"""
import numpy as np

# rows per chunk; bounds the temporary complex matrix to ~32 MB
_CHUNK_ELEMENTS = 1 << 21


def _centred(n):
    return np.arange(n, dtype=float) - (n - 1) / 2.0


def line_correlation(lin, quad, n, out):
    u = _centred(n)
    rows = max(1, _CHUNK_ELEMENTS // n)
    for start in range(0, lin.shape[0], rows):
        sl = slice(start, start + rows)
        phase = np.outer(lin[sl], u) + np.outer(quad[sl], u * u)
        out[sl] = np.abs(np.exp(1j * phase).sum(axis=1)) / n


def plane_correlation(coeffs, n, out):
    u = _centred(n)
    uu = np.repeat(u, n)  # outer (x) index, row-major
    vv = np.tile(u, n)
    basis = np.stack([uu, vv, uu * uu, vv * vv, uu * vv])
    rows = max(1, _CHUNK_ELEMENTS // (n * n))
    for start in range(0, coeffs.shape[0], rows):
        phase = coeffs[start:start + rows] @ basis
        out[start:start + rows] = np.abs(np.exp(1j * phase).sum(axis=1)) / (n * n)
