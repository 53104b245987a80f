import numpy as np
import pytest
import sympy as sp

import msdiffeo.fields
from msdiffeo import verify
from msdiffeo.fields import Grid2
from msdiffeo.flows import Diffeomorphism
from msdiffeo.semidirect.reconstruct import COARSE_FIRST
from msdiffeo.semidirect.scale import (
    MIDPOINT,
    TRAPEZOID,
    ScaleBundle,
    bin_nodes,
    binned_total,
    compatibility_residual,
    continuum_bracket,
    sampling_map,
    scale_flow,
    scale_segment,
    semidirect_bracket,
)

PART = [0.0, 0.25, 0.5, 0.75, 1.0]


def smooth_bundle(n=16, S=4, M=8, rule=TRAPEZOID):
    return ScaleBundle.from_function(Grid2.unit_square(n), S, M, verify.scale_bundle_field, rule)


def test_bundle_quadrature_layout():
    g = Grid2.unit_square(5)
    mid = ScaleBundle(g, np.ones((4, 3) + g.shape + (2,)))
    assert np.allclose(mid.nodes, [0.125, 0.375, 0.625, 0.875])
    assert mid.weights.sum() == pytest.approx(1.0)
    trap = ScaleBundle(g, np.ones((5, 3) + g.shape + (2,)), TRAPEZOID)
    assert trap.n_cells == 4 and trap.weights[0] == pytest.approx(0.125)
    assert np.allclose(trap.integral(), 1.0) and np.allclose(mid.partials()[-1], 1.0)
    with pytest.raises(ValueError):
        ScaleBundle(g, np.ones((2, 3, 4, 5, 2)))
    with pytest.raises(ValueError):
        mid.cutoff_index(0.3)


def test_scale_flow_of_a_zero_bundle_is_the_identity():
    g = Grid2.unit_square(9)
    res = scale_flow(ScaleBundle(g, np.zeros((5, 5) + g.shape + (2,)), TRAPEZOID))
    assert res.sup_distance == 0.0
    for e in res.eta_a + res.eta_b:
        assert np.array_equal(e.map_values, g.nodes())


def test_scale_flow_endpoints():
    b = smooth_bundle()
    res = scale_flow(b)
    assert np.array_equal(res.eta(0.0).map_values, b.grid.nodes())
    assert res.sup_distance < 0.05
    # the full-flow-frame variant only changes way (B); way (A) is shared
    cor = scale_flow(b, full_flow_frame=True)
    assert np.isfinite(cor.sup_distance)
    assert all(np.array_equal(x.map_values, y.map_values) for x, y in zip(cor.eta_a, res.eta_a))


def test_scale_segment_conventions():
    res = scale_flow(smooth_bundle())
    assert np.array_equal(scale_segment(res, 0.5, 0.5).map_values, res.eta(0.5).grid.nodes())
    lo, hi = res.eta(0.25), res.eta(0.75)
    right = scale_segment(res, 0.25, 0.75, "right")
    left = scale_segment(res, 0.25, 0.75, "left")
    grid = lo.grid
    interior = np.zeros(grid.shape, bool)
    interior[4:-4, 4:-4] = True
    # lo o right ~ hi and left o lo ~ hi, up to interpolation error
    from msdiffeo.flows import compose
    assert np.max(np.abs(compose(lo, right).map_values - hi.map_values)[interior]) < 5e-3
    assert np.max(np.abs(compose(left, lo).map_values - hi.map_values)[interior]) < 5e-3
    with pytest.raises(ValueError):
        scale_segment(res, 0.75, 0.25)
    with pytest.raises(ValueError):
        scale_segment(res, 0.25, 0.75, "middle")


def test_bin_nodes_and_empty_bin_message():
    g = Grid2.unit_square(5)
    b = ScaleBundle(g, np.ones((4, 2) + g.shape + (2,)))
    assert list(bin_nodes(b, PART)) == [0, 1, 2, 3]
    with pytest.raises(ValueError, match="refine quadrature or coarsen partition"):
        bin_nodes(b, [0.0, 0.1, 0.2, 1.0])
    with pytest.raises(ValueError):
        bin_nodes(b, [0.0, 0.5, 0.5, 1.0])


def test_sampling_map_sums_cells(rng):
    g = Grid2.unit_square(6)
    b = ScaleBundle(g, rng.standard_normal((8, 3) + g.shape + (2,)))
    tup = sampling_map(b, PART)
    assert tup.ordering == COARSE_FIRST and tup.n == 4
    want = (b.velocities[0] + b.velocities[1]) / 8
    assert np.allclose(tup.paths[0].velocities, want, atol=1e-15)
    assert np.array_equal(tup.total().velocities, binned_total(b, PART))


def test_continuum_bracket_zero_cases(rng):
    g = Grid2.unit_square(8)
    u = ScaleBundle(g, rng.standard_normal((4, 2) + g.shape + (2,)))
    z = ScaleBundle(g, np.zeros(u.velocities.shape))
    assert np.array_equal(continuum_bracket(u, z).velocities, 0 * u.velocities)
    assert np.array_equal(continuum_bracket(z, u).velocities, 0 * u.velocities)
    with pytest.raises(ValueError):
        continuum_bracket(u, ScaleBundle(g, np.zeros((5, 2) + g.shape + (2,))))


def test_semidirect_bracket_single_scale_is_plain(rng):
    g = Grid2.unit_square(8)
    u = [msdiffeo.fields.VectorField(g, rng.standard_normal(g.shape + (2,)))]
    v = [msdiffeo.fields.VectorField(g, rng.standard_normal(g.shape + (2,)))]
    out = semidirect_bracket(u, v)
    want = msdiffeo.fields.bracket_array(u[0].values, v[0].values, g.h)
    assert np.allclose(np.asarray(getattr(out[0], "values", out[0])).reshape(want.shape), want)


def _symbolic_bin_brackets(partition, u=None):
    """Exact [Psi u, Psi v] for s-linear polynomial bundles, via sympy."""
    x, y, s = sp.symbols("x y s")
    u = u if u is not None else sp.Matrix([x**3 * y + s * x, y**2 - s * x * y**3])
    v = sp.Matrix([s * y**2, x + s * x**2 * y])

    def br(a, b):
        return a.jacobian([x, y]) * b - b.jacobian([x, y]) * a

    out, su, sv = [], sp.zeros(2, 1), sp.zeros(2, 1)
    for a, b in zip(partition[:-1], partition[1:]):
        pu = u.applyfunc(lambda e: sp.integrate(e, (s, a, b)))
        pv = v.applyfunc(lambda e: sp.integrate(e, (s, a, b)))
        out.append(sp.simplify(br(pu, sv) + br(su, pv) + br(pu, pv)))
        su, sv = su + pu, sv + pv
    fu = sp.lambdify((s, x, y), list(u), "numpy")
    fv = sp.lambdify((s, x, y), list(v), "numpy")
    exact = [[sp.lambdify((x, y), c, "numpy") for c in e] for e in out]
    return fu, fv, exact


def test_sampling_map_is_a_bracket_homomorphism_against_sympy():
    part = [0.0, 0.5, 1.0]
    fu, fv, exact = _symbolic_bin_brackets(part)
    errs = []
    for n in (17, 33):
        g = Grid2.unit_square(n)
        X, Y = g.nodes()[..., 0], g.nodes()[..., 1]

        def wrap(f):
            return lambda s, t, x, y: tuple(np.broadcast_to(c, x.shape) for c in f(s, x, y))

        bu = ScaleBundle.from_function(g, 32, 1, wrap(fu))
        bv = ScaleBundle.from_function(g, 32, 1, wrap(fv))
        got = sampling_map(continuum_bracket(bu, bv), part)
        err = 0.0
        for k, e in enumerate(exact):
            want = np.stack([np.broadcast_to(c(X, Y), X.shape) for c in e], -1)
            err = max(err, float(np.max(np.abs(got.paths[k].velocities[0] - want))))
        errs.append(err)
    assert errs[0] / errs[1] > 3.0
    assert errs[1] < 0.05


def test_sampling_map_bracket_is_exact_for_quadratic_fields():
    # centred differences are exact on quadratics, and the cell sums telescope
    part = [0.0, 0.5, 1.0]
    x, y, s = sp.symbols("x y s")
    fu, fv, exact = _symbolic_bin_brackets(part, sp.Matrix([x**2 * y + s * x, y**2 - s * x * y]))
    g = Grid2.unit_square(9)
    X, Y = g.nodes()[..., 0], g.nodes()[..., 1]
    wrap = lambda f: (lambda s, t, x, y: tuple(np.broadcast_to(c, x.shape) for c in f(s, x, y)))  # noqa: E731
    got = sampling_map(continuum_bracket(ScaleBundle.from_function(g, 2, 1, wrap(fu)),
                                         ScaleBundle.from_function(g, 2, 1, wrap(fv))), part)
    for k, e in enumerate(exact):
        want = np.stack([np.broadcast_to(c(X, Y), X.shape) for c in e], -1)
        assert np.max(np.abs(got.paths[k].velocities[0] - want)) < 1e-12


def test_compatibility_residual_is_small_for_the_correct_bracket():
    b = ScaleBundle.from_function(Grid2.unit_square(32), 8, 16, verify.scale_bundle_field, TRAPEZOID)
    assert compatibility_residual(b) < 0.25


def test_flipped_bracket_sign_is_caught(monkeypatch):
    """A mutated bracket must turn the compatibility check into a FAIL."""
    real = msdiffeo.fields.bracket_array
    monkeypatch.setattr(msdiffeo.fields, "bracket_array", lambda u, v, h: -real(u, v, h))
    checks = {c.name: c for c in verify._scale_checks(1.0)}
    assert not checks["time_scale_compatibility"].passed
    assert checks["time_scale_compatibility"].value > 1.0


def test_compatibility_needs_interior_time():
    with pytest.raises(ValueError):
        compatibility_residual(smooth_bundle(), t=0.0)


def test_midpoint_rule_bundle_cutoffs():
    b = smooth_bundle(rule=MIDPOINT)
    assert b.at_cutoffs().shape[0] == b.n_cells + 1
    assert isinstance(scale_flow(b, cutoffs=[0.0, 1.0]).eta(1.0), Diffeomorphism)
