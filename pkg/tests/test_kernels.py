import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from nfcodebook import _kernels_py, kernels

HAVE_COMPILED = kernels.BACKEND == "compiled"
BACKENDS = ["python"] + (["compiled"] if HAVE_COMPILED else [])


def test_compiled_extension_is_built():
    # the package is expected to ship the extension; the fallback is for
    # environments without a compiler
    assert HAVE_COMPILED, "compiled kernels did not import"


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("n", [2, 3, 17, 64, 100])
def test_line_kernel_matches_direct_sum(backend, n):
    rng = np.random.default_rng(n)
    lin = rng.uniform(-3, 3, 25)
    quad = rng.uniform(-0.05, 0.05, 25)
    got = kernels.line_correlation(lin, quad, n, backend=backend)
    ref = [oracles.line_sum(a, b, n) for a, b in zip(lin, quad)]
    assert np.allclose(got, ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("n", [2, 5, 16, 33])
def test_plane_kernel_matches_direct_sum(backend, n):
    rng = np.random.default_rng(n)
    coeffs = rng.uniform(-0.4, 0.4, (12, 5))
    coeffs[:, 2:] *= 0.1
    got = kernels.plane_correlation(coeffs, n, backend=backend)
    ref = [oracles.plane_sum(c, n) for c in coeffs]
    assert np.allclose(got, ref, rtol=0, atol=1e-12)


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled kernels unavailable")
@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 600), lin=st.floats(-10, 10), quad=st.floats(-1, 1))
def test_backends_agree_on_lines(n, lin, quad):
    a = kernels.line_correlation([lin], [quad], n, backend="python")
    b = kernels.line_correlation([lin], [quad], n, backend="compiled")
    assert abs(a[0] - b[0]) <= 1e-11


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled kernels unavailable")
@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 40),
       c=st.lists(st.floats(-2, 2), min_size=5, max_size=5))
def test_backends_agree_on_planes(n, c):
    a = kernels.plane_correlation([c], n, backend="python")
    b = kernels.plane_correlation([c], n, backend="compiled")
    assert abs(a[0] - b[0]) <= 1e-11


def test_zero_phase_gives_unity_and_values_bounded():
    for backend in BACKENDS:
        assert kernels.line_correlation([0.0], [0.0], 512, backend)[0] == pytest.approx(1.0)
        assert kernels.plane_correlation([[0.0] * 5], 16, backend)[0] == pytest.approx(1.0)
        v = kernels.line_correlation(np.linspace(-5, 5, 101), 0.01, 300, backend)
        assert np.all((v >= 0) & (v <= 1 + 1e-12))


def test_python_fallback_chunks_large_inputs(monkeypatch):
    monkeypatch.setattr(_kernels_py, "_CHUNK_ELEMENTS", 64 * 50)
    lin = np.linspace(-1, 1, 1000)
    out = np.empty(1000)
    _kernels_py.line_correlation(lin, np.zeros(1000), 50, out)
    ref = kernels.line_correlation(lin, np.zeros(1000), 50, backend="python")
    assert np.allclose(out, ref)


def test_backend_argument_validation():
    with pytest.raises(ValueError):
        kernels.line_correlation([0.0], [0.0], 4, backend="fortran")
    with pytest.raises(ValueError):
        kernels.plane_correlation([[0.0] * 4], 4)


def test_environment_variable_forces_python_backend():
    env = dict(os.environ, NFCODEBOOK_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c",
                          "from nfcodebook import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
