import os
import subprocess
import sys

import numpy as np
import pytest

from msdiffeo import _backend

compiled = _backend.compiled
fb = _backend.fallback
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


def query(rng, nx, ny, k=500):
    # includes points outside the grid on every side
    return np.ascontiguousarray(np.column_stack([rng.uniform(-2, nx + 1, k), rng.uniform(-2, ny + 1, k)]))


@needs_compiled
def test_interpolation_kernels_agree(rng):
    s = rng.standard_normal((7, 9))
    v = rng.standard_normal((7, 9, 2))
    p = query(rng, 7, 9)
    assert np.allclose(compiled.interp_scalar(s, p), fb.interp_scalar(s, p), rtol=0, atol=1e-14)
    assert np.allclose(compiled.interp_vector(v, p), fb.interp_vector(v, p), rtol=0, atol=1e-14)
    assert np.allclose(compiled.interp_map(v, p), fb.interp_map(v, p), rtol=0, atol=1e-14)


@needs_compiled
def test_gaussian_kernel_agrees(rng):
    x = rng.uniform(0, 1, (60, 2))
    c = rng.uniform(0, 1, (9, 2))
    mom = rng.standard_normal((3, 9, 2))
    sig2 = np.array([0.04, 0.01, 0.0025])
    w = np.array([1.0, 0.5, 2.0])
    assert np.allclose(compiled.gauss_apply(x, c, mom, sig2, w), fb.gauss_apply(x, c, mom, sig2, w), rtol=0, atol=1e-13)


def test_fallback_interpolation_hits_nodes(rng):
    s = rng.standard_normal((5, 4))
    i, j = np.meshgrid(np.arange(5.0), np.arange(4.0), indexing="ij")
    p = np.column_stack([i.ravel(), j.ravel()])
    assert np.allclose(fb.interp_scalar(s, p), s.ravel(), atol=1e-15)
    v = rng.standard_normal((5, 4, 2))
    far = np.array([[-1.5, 1.0], [7.0, 2.0]])
    assert np.array_equal(fb.interp_vector(v, far), np.zeros((2, 2)))


def test_environment_switch_selects_the_fallback():
    env = dict(os.environ, MSDIFFEO_PURE="1")
    out = subprocess.run([sys.executable, "-c", "import msdiffeo; print(msdiffeo.backend)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


@needs_compiled
def test_compiled_backend_is_default():
    assert _backend.NAME == "cython"
