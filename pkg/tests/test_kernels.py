import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msdiffeo.fields import Grid2, LandmarkSet
from msdiffeo.kernels import (
    CONTINUUM,
    FINITE,
    GaussianKernel,
    GramSystem,
    KernelSpec,
    KernelSystemError,
    Momentum,
    apply_kernel,
    kernel_eval,
    project_scales,
    rkhs_norm,
    scale_norms,
    solve_momentum,
)
from oracles import gauss_gram, min_norm_split_qp


def two_scale():
    return KernelSpec.finite([GaussianKernel(0.3, 1.0), GaussianKernel(0.1, 0.5)])


def test_kernel_eval_values():
    spec = KernelSpec.single(0.5)
    assert np.array_equal(kernel_eval(spec, [0.2, 0.3], [0.2, 0.3]), np.eye(2))
    want = np.exp(-0.25 / (2 * 0.25))
    assert kernel_eval(spec, [0, 0], [0.5, 0]) == pytest.approx(want * np.eye(2))
    two = two_scale()
    r2 = 0.04
    assert kernel_eval(two, [0, 0], [0.2, 0])[0, 0] == pytest.approx(np.exp(-r2 / 0.18) + 0.5 * np.exp(-r2 / 0.02))
    with pytest.raises(ValueError):
        kernel_eval(spec, [np.nan, 0], [0, 0])


def test_finite_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec.finite([GaussianKernel(0.1), GaussianKernel(0.3)])
    with pytest.raises(ValueError):
        KernelSpec.finite([GaussianKernel(0.1), GaussianKernel(0.1)])
    with pytest.raises(ValueError):
        GaussianKernel(-1.0)
    with pytest.raises(ValueError):
        GaussianKernel(0.1, 0.0)
    s = two_scale()
    assert s.mode == FINITE and s.n_scales == 2
    assert [list(c.terms) for c in s.components()] == [[GaussianKernel(0.3, 1.0)], [GaussianKernel(0.1, 0.5)]]


def test_continuum_quadrature_and_binning():
    c = KernelSpec.continuum(0.0, 1.0, 8, 0.05, 0.4)
    assert c.mode == CONTINUUM and c.n_scales == 8
    s, w = zip(*c.nodes)
    assert np.allclose(s, (np.arange(8) + 0.5) / 8) and np.allclose(w, 1 / 8)
    sig = [t.sigma for t in c.terms]
    assert np.all(np.diff(sig) < 0)
    assert sig[0] == pytest.approx(0.4 ** (1 - 1 / 16) * 0.05 ** (1 / 16))
    b = c.binned([0, 0.5, 1])
    assert b.n_scales == 2 and b.terms == c.terms
    with pytest.raises(ValueError, match="refine quadrature or coarsen partition"):
        c.binned([0, 0.01, 1])
    with pytest.raises(ValueError):
        c.binned([0.2, 1])


def test_binned_kernel_values_equal_continuum_bit_exactly():
    c = KernelSpec.continuum(0.0, 1.0, 16, 0.05, 0.4)
    b = c.binned([0, 0.25, 0.5, 0.75, 1.0])
    x = np.random.default_rng(1).uniform(0, 1, (7, 2))
    assert np.array_equal(c.scalar(x, x), b.scalar(x, x))


def test_apply_kernel_landmarks_and_grid():
    spec = two_scale()
    q = LandmarkSet([[0.2, 0.2], [0.6, 0.7]])
    p = Momentum(q, [[1.0, 0.0], [0.0, -1.0]])
    v = apply_kernel(spec, p)
    G = gauss_gram(q.points, 0.3) + gauss_gram(q.points, 0.1, 0.5)
    assert np.allclose(v, G @ p.covectors, atol=1e-14)
    g = Grid2.unit_square(9)
    vf = apply_kernel(spec, p, at=g)
    assert vf.values.shape == (9, 9, 2)
    gp = Momentum(g, np.zeros(g.shape + (2,)))
    assert np.all(apply_kernel(spec, gp).values == 0)


def test_zero_momentum_gives_zero_velocity():
    q = LandmarkSet(np.random.default_rng(0).uniform(0, 1, (4, 2)))
    assert np.all(apply_kernel(two_scale(), Momentum(q, np.zeros((4, 2)))) == 0)


def test_solve_momentum_round_trip_and_errors(rng):
    spec = two_scale()
    q = LandmarkSet(rng.uniform(0, 1, (6, 2)))
    v = rng.standard_normal((6, 2))
    p = solve_momentum(spec, v, q)
    assert np.max(np.abs(apply_kernel(spec, p) - v)) < 1e-9
    dup = LandmarkSet([[0.5, 0.5], [0.5, 0.5 + 1e-9]])
    with pytest.raises(KernelSystemError):
        GramSystem(spec, dup, jitter=0.0).solve(np.array([[1.0, 0.0], [0.0, 1.0]]))


@pytest.mark.parametrize("k", [2, 3])
def test_projection_matches_constrained_qp(rng, k):
    comps = [(0.4, 1.0), (0.15, 1.0), (0.06, 0.5)][:k]
    spec = KernelSpec.finite([GaussianKernel(s, w) for s, w in comps])
    for _ in range(5):
        q = LandmarkSet(rng.uniform(0.1, 0.9, (5, 2)))
        v = rng.standard_normal((5, 2))
        got = project_scales(spec, v, q)
        ref = min_norm_split_qp(q.points, comps, v)
        assert sum(got) == pytest.approx(v, abs=1e-9)
        for a, b in zip(got, ref):
            assert np.max(np.abs(a - b)) / np.max(np.abs(v)) < 1e-7


def test_projection_single_scale_is_identity(rng):
    q = LandmarkSet(rng.uniform(0, 1, (4, 2)))
    v = rng.standard_normal((4, 2))
    (only,) = project_scales(KernelSpec.single(0.2), v, q)
    assert np.max(np.abs(only - v)) < 1e-9


def test_norm_identity(rng):
    spec = two_scale()
    q = LandmarkSet(rng.uniform(0, 1, (5, 2)))
    p = Momentum(q, rng.standard_normal((5, 2)))
    assert np.sum(scale_norms(spec, p)) == pytest.approx(rkhs_norm(spec, p), rel=1e-12)


pts = arrays(np.float64, (4, 2), elements=st.floats(0, 1))


@given(pts, arrays(np.float64, (4, 2), elements=st.floats(-1, 1)))
def test_kernel_matrix_symmetric_psd(x, p):
    spec = two_scale()
    K = spec.scalar(x, x)
    assert np.array_equal(K, K.T)
    assert float(np.sum(p * (K @ p))) >= -1e-12


@given(pts)
def test_gram_symmetry_and_kernel_sum(x):
    spec = two_scale()
    K = spec.scalar(x, x)
    parts = sum(c.scalar(x, x) for c in spec.components())
    assert np.allclose(K, parts, atol=1e-15)
