import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from msdiffeo.fields import Grid2, LandmarkSet, ScalarField, VectorField
from msdiffeo.flows import (
    Diffeomorphism,
    FlowBlowUpError,
    FlowPath,
    TimeIntegrator,
    adjoint_action,
    compose,
    flow_with_inverse,
    integrate_flow,
    inverse_flow,
    transport_image,
    transport_landmarks,
)

C = np.array([0.5, 0.5])
A = np.array([[0.1, -0.8], [0.8, -0.1]])


def linear_path(grid, M, mat=A):
    x = grid.nodes()
    return FlowPath(grid, np.stack([(x - C) @ mat.T] * (M + 1)))


def inner_mask(grid, r=0.25):
    return np.linalg.norm(grid.nodes() - C, axis=-1) <= r


def test_zero_velocity_gives_identity_exactly():
    g = Grid2.unit_square(8)
    phi = integrate_flow(FlowPath(g, np.zeros((5,) + g.shape + (2,))), with_inverse=True)[-1]
    assert np.array_equal(phi.map_values, g.nodes())
    assert np.array_equal(phi.inverse_values, g.nodes())


def test_linear_flow_matches_matrix_exponential():
    g = Grid2.unit_square(17)
    mask = inner_mask(g)
    exact = C + (g.nodes() - C) @ scipy.linalg.expm(A).T
    errs = []
    for M in (4, 8, 16):
        phi = integrate_flow(linear_path(g, M))[-1]
        errs.append(np.max(np.abs(phi.map_values - exact)[mask]))
    assert errs[-1] < 1e-6
    assert 12 < errs[0] / errs[1] < 20 and 12 < errs[1] / errs[2] < 20


def test_euler_is_first_order():
    g = Grid2.unit_square(17)
    mask = inner_mask(g)
    exact = C + (g.nodes() - C) @ scipy.linalg.expm(A).T
    euler = TimeIntegrator("euler")
    errs = [np.max(np.abs(integrate_flow(linear_path(g, M), euler)[-1].map_values - exact)[mask]) for M in (16, 32)]
    assert 1.7 < errs[0] / errs[1] < 2.3


def test_substeps_refine_the_time_step():
    g = Grid2.unit_square(17)
    mask = inner_mask(g)
    exact = C + (g.nodes() - C) @ scipy.linalg.expm(A).T
    a = integrate_flow(linear_path(g, 4), TimeIntegrator("rk4", 2))[-1]
    b = integrate_flow(linear_path(g, 8))[-1]
    assert np.max(np.abs(a.map_values - exact)[mask]) == pytest.approx(np.max(np.abs(b.map_values - exact)[mask]), rel=1e-6)


def test_group_property_of_stationary_flows():
    g = Grid2.unit_square(17)
    mask = inner_mask(g, 0.2)
    half = integrate_flow(FlowPath(g, 0.5 * linear_path(g, 8).velocities))[-1]
    full = integrate_flow(linear_path(g, 16))[-1]
    assert np.max(np.abs(compose(half, half).map_values - full.map_values)[mask]) < 1e-8


def test_inverse_flow_inverts():
    g = Grid2.unit_square(17)
    mask = inner_mask(g)
    path = linear_path(g, 16)
    phi = flow_with_inverse(path)
    back = compose(phi, phi.inverse())
    assert np.max(np.abs(back.map_values - g.nodes())[mask]) < 1e-7
    assert np.array_equal(inverse_flow(path).map_values, phi.inverse_values)


def test_reversed_path_runs_backwards():
    g = Grid2.unit_square(17)
    path = linear_path(g, 8)
    fwd = integrate_flow(path)[-1]
    bwd = integrate_flow(path.reversed())[-1]
    mask = inner_mask(g)
    assert np.max(np.abs(compose(bwd, fwd).map_values - g.nodes())[mask]) < 1e-5


def test_adjoint_of_linear_map_is_conjugation():
    g = Grid2.unit_square(17)
    B = np.array([[1.1, 0.2], [-0.1, 0.9]])
    x = g.nodes()
    phi = Diffeomorphism(g, C + (x - C) @ B.T, C + (x - C) @ np.linalg.inv(B).T)
    v = VectorField(g, (x - C) @ A.T)
    got = adjoint_action(phi, v).values
    want = (x - C) @ (B @ A @ np.linalg.inv(B)).T
    mask = inner_mask(g)
    assert np.max(np.abs(got - want)[mask]) < 1e-12


def test_adjoint_identity_and_missing_inverse():
    g = Grid2.unit_square(9)
    v = VectorField(g, np.random.default_rng(0).standard_normal(g.shape + (2,)))
    assert np.array_equal(adjoint_action(Diffeomorphism.identity(g), v).values, v.values)
    with pytest.raises(ValueError):
        adjoint_action(Diffeomorphism(g, g.nodes()), v)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_adjoint_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    g = Grid2.unit_square(9)
    phi = integrate_flow(FlowPath(g, 0.1 * rng.standard_normal((3,) + g.shape + (2,))), with_inverse=True)[-1]
    u = VectorField(g, rng.standard_normal(g.shape + (2,)))
    v = VectorField(g, rng.standard_normal(g.shape + (2,)))
    lhs = adjoint_action(phi, u * a + v * b).values
    rhs = a * adjoint_action(phi, u).values + b * adjoint_action(phi, v).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(lhs)))


def test_compose_with_identity():
    g = Grid2.unit_square(9)
    phi = integrate_flow(FlowPath(g, 0.2 * np.ones((3,) + g.shape + (2,))), with_inverse=True)[-1]
    e = Diffeomorphism.identity(g)
    assert np.max(np.abs(compose(phi, e).map_values - phi.map_values)) < 1e-14
    assert np.max(np.abs(compose(e, phi).map_values - phi.map_values)) < 1e-14


def test_transport_image_by_translation():
    g = Grid2.unit_square(17)
    img = ScalarField.from_function(g, lambda x, y: x + 2 * y)
    shift = np.array([0.125, 0.0])
    inv = Diffeomorphism(g, g.nodes() - shift)
    moved = transport_image(img, inv)
    x = g.nodes()
    interior = x[..., 0] >= 0.125
    assert np.allclose(moved.values[interior], (x[..., 0] - 0.125 + 2 * x[..., 1])[interior])


def test_transport_landmarks_constant_velocity():
    g = Grid2.unit_square(9)
    path = FlowPath(g, np.broadcast_to([0.1, -0.05], (5,) + g.shape + (2,)))
    q = transport_landmarks(LandmarkSet([[0.3, 0.4], [0.5, 0.5]]), path)
    assert np.allclose(q.points, [[0.4, 0.35], [0.6, 0.45]], atol=1e-14)


def test_blow_up_is_reported():
    g = Grid2.unit_square(5)
    with pytest.raises(FlowBlowUpError):
        Diffeomorphism(g, np.full(g.shape + (2,), np.inf))
    with pytest.raises(ValueError):
        FlowPath(g, np.full((2,) + g.shape + (2,), np.nan))
