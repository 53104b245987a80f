"""Flows of time-dependent velocity fields and operations on grid diffeomorphisms."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import (
    Grid2,
    LandmarkSet,
    ScalarField,
    VectorField,
    _frozen,
    interp_map_array,
    interp_vector_array,
    jacobian_array,
)
from ._backend import kernels as _k


class FlowBlowUpError(FloatingPointError):
    def __init__(self, msg="flow blow-up; reduce Δt or velocity magnitude"):
        super().__init__(msg)


@dataclass(frozen=True)
class TimeIntegrator:
    scheme: str = "rk4"
    substeps: int = 1

    def __post_init__(self):
        if self.scheme not in ("rk4", "euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.substeps < 1:
            raise ValueError("substeps must be positive")


RK4 = TimeIntegrator()


class Diffeomorphism:
    """Grid-sampled map: ``map_values[i, j]`` is the image of node (i, j)."""

    def __init__(self, grid: Grid2, map_values, inverse_values=None):
        self.grid = grid
        shape = grid.shape + (2,)
        self.map_values = _frozen(map_values, shape)
        if not np.all(np.isfinite(self.map_values)):
            raise FlowBlowUpError()
        self.inverse_values = None if inverse_values is None else _frozen(inverse_values, shape)

    @classmethod
    def identity(cls, grid):
        x = grid.nodes()
        return cls(grid, x, x)

    @property
    def has_inverse(self):
        return self.inverse_values is not None

    def inverse(self) -> "Diffeomorphism":
        if self.inverse_values is None:
            raise ValueError("inverse unavailable for this diffeomorphism")
        return Diffeomorphism(self.grid, self.inverse_values, self.map_values)

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        return interp_map_array(self.grid, self.map_values, pts.reshape(-1, 2)).reshape(pts.shape)

    def displacement(self):
        return self.map_values - self.grid.nodes()

    def jacobian_determinant(self):
        J = jacobian_array(self.map_values, self.grid.h)
        return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]

    def sup_distance(self, other: "Diffeomorphism") -> float:
        self.grid.check_same(other.grid)
        return float(np.max(np.abs(self.map_values - other.map_values)))

    def __repr__(self):
        return f"Diffeomorphism({self.grid}, inverse={self.has_inverse})"


class FlowPath:
    """Velocity fields at uniform nodes ``t_0 = 0 < ... < t_M = 1``.

    ``velocities`` has shape (M+1, nx, ny, 2); between nodes the field is
    interpolated linearly in time.
    """

    def __init__(self, grid: Grid2, velocities):
        v = _frozen(velocities)
        if v.ndim != 4 or v.shape[1:] != grid.shape + (2,) or v.shape[0] < 2:
            raise ValueError(f"velocities must have shape (M+1, {grid.nx}, {grid.ny}, 2)")
        if not np.all(np.isfinite(v)):
            raise ValueError("velocities must be finite")
        self.grid = grid
        self.velocities = v

    @classmethod
    def from_fields(cls, fields):
        fields = list(fields)
        for f in fields[1:]:
            fields[0].grid.check_same(f.grid)
        return cls(fields[0].grid, np.stack([f.values for f in fields]))

    @classmethod
    def from_function(cls, grid, steps, f):
        """Sample ``f(t, x, y) -> (vx, vy)`` at ``steps + 1`` uniform times."""
        x = grid.nodes()
        vals = []
        for t in np.linspace(0.0, 1.0, steps + 1):
            vx, vy = f(t, x[..., 0], x[..., 1])
            vals.append(np.stack(np.broadcast_arrays(vx, vy), axis=-1))
        return cls(grid, np.stack(vals))

    @property
    def steps(self):
        return self.velocities.shape[0] - 1

    @property
    def dt(self):
        return 1.0 / self.steps

    @property
    def times(self):
        return np.linspace(0.0, 1.0, self.steps + 1)

    def field(self, m) -> VectorField:
        return VectorField(self.grid, self.velocities[m])

    def __add__(self, other: "FlowPath") -> "FlowPath":
        self.grid.check_same(other.grid)
        return FlowPath(self.grid, self.velocities + other.velocities)

    def __neg__(self):
        return FlowPath(self.grid, -self.velocities)

    def reversed(self) -> "FlowPath":
        """Path t -> -v(1 - t), whose flow runs the original one backwards."""
        return FlowPath(self.grid, -self.velocities[::-1])

    def evaluator(self) -> Callable:
        """``f(t, pts) -> velocities`` with bilinear space and linear time interpolation."""
        M = self.steps
        V = self.velocities
        idx0 = np.asarray(self.grid.origin)
        h = self.grid.h

        def f(t, pts):
            s = t * M
            m = min(max(int(np.floor(s)), 0), M - 1)
            th = s - m
            q = np.ascontiguousarray((pts - idx0) / h)
            out = _k.interp_vector(V[m], q)
            if th != 0.0:
                out = (1.0 - th) * out + th * _k.interp_vector(V[m + 1], q)
            return out

        return f


def step_points(f, pts, t, dt, scheme="rk4"):
    """One explicit step of dx/dt = f(t, x) for an (N, 2) array of points."""
    if scheme == "euler":
        return pts + dt * f(t, pts)
    k1 = f(t, pts)
    k2 = f(t + 0.5 * dt, pts + (0.5 * dt) * k1)
    k3 = f(t + 0.5 * dt, pts + (0.5 * dt) * k2)
    k4 = f(t + dt, pts + dt * k3)
    return pts + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_points(f, pts, t0, t1, nsteps, scheme="rk4"):
    """Advance points from t0 to t1 in ``nsteps`` equal steps (t1 < t0 allowed)."""
    dt = (t1 - t0) / nsteps
    x = np.array(pts, dtype=float)
    for k in range(nsteps):
        x = step_points(f, x, t0 + k * dt, dt, scheme)
    if not np.all(np.isfinite(x)):
        raise FlowBlowUpError()
    return x


def _flow_nodes(path, integrator, times_out=None):
    """Forward node trajectories at every time node, shape (M+1, N, 2)."""
    f = path.evaluator()
    M = path.steps
    x = path.grid.nodes().reshape(-1, 2)
    out = [x]
    for m in range(M):
        x = integrate_points(f, x, m / M, (m + 1) / M, integrator.substeps, integrator.scheme)
        out.append(x)
    return out


def integrate_flow(path: FlowPath, integrator: TimeIntegrator = RK4, with_inverse=False):
    """phi(t_m) for every time node, phi(0) = Id.

    With ``with_inverse`` each phi(t_m) also carries its inverse, obtained by
    backward integration from t_m to 0 (cost quadratic in M).
    """
    grid = path.grid
    shape = grid.shape + (2,)
    maps = _flow_nodes(path, integrator)
    out = []
    for m, x in enumerate(maps):
        inv = inverse_flow(path, integrator, upto=m).map_values if with_inverse else None
        out.append(Diffeomorphism(grid, x.reshape(shape), inv))
    return out


def inverse_flow(path: FlowPath, integrator: TimeIntegrator = RK4, upto=None) -> Diffeomorphism:
    """phi(t)^{-1} by integrating node positions backwards from t = t_upto to 0."""
    M = path.steps
    upto = M if upto is None else upto
    grid = path.grid
    x = grid.nodes().reshape(-1, 2)
    f = path.evaluator()
    for m in range(upto, 0, -1):
        x = integrate_points(f, x, m / M, (m - 1) / M, integrator.substeps, integrator.scheme)
    return Diffeomorphism(grid, x.reshape(grid.shape + (2,)))


def flow_with_inverse(path: FlowPath, integrator: TimeIntegrator = RK4) -> Diffeomorphism:
    """phi(1) together with its inverse."""
    phi = integrate_flow(path, integrator)[-1]
    inv = inverse_flow(path, integrator)
    return Diffeomorphism(path.grid, phi.map_values, inv.map_values)


def compose(phi: Diffeomorphism, psi: Diffeomorphism) -> Diffeomorphism:
    """(phi o psi)(x) = phi(psi(x)); inverses are composed when both exist."""
    phi.grid.check_same(psi.grid)
    shape = phi.grid.shape + (2,)
    fwd = interp_map_array(phi.grid, phi.map_values, psi.map_values.reshape(-1, 2)).reshape(shape)
    inv = None
    if phi.has_inverse and psi.has_inverse:
        inv = interp_map_array(psi.grid, psi.inverse_values, phi.inverse_values.reshape(-1, 2)).reshape(shape)
    return Diffeomorphism(phi.grid, fwd, inv)


def compose_all(maps):
    out = maps[0]
    for m in maps[1:]:
        out = compose(out, m)
    return out


def ad_array(grid, map_values, inverse_values, v):
    """Ad_phi v = (Dphi . v) o phi^{-1} on raw arrays.

    Uses Dphi(phi^{-1}(x)) = D(phi^{-1})(x)^{-1}, so the derivative is taken
    at the nodes and only the (smoother) field v is interpolated.
    """
    nodes = grid.nodes()
    if np.array_equal(map_values, nodes) and np.array_equal(inverse_values, nodes):
        return np.array(v, dtype=float)
    Ji = jacobian_array(inverse_values, grid.h)
    w = interp_vector_array(grid, v, inverse_values.reshape(-1, 2)).reshape(v.shape)
    det = Ji[..., 0, 0] * Ji[..., 1, 1] - Ji[..., 0, 1] * Ji[..., 1, 0]
    out = np.empty_like(w)
    out[..., 0] = (Ji[..., 1, 1] * w[..., 0] - Ji[..., 0, 1] * w[..., 1]) / det
    out[..., 1] = (Ji[..., 0, 0] * w[..., 1] - Ji[..., 1, 0] * w[..., 0]) / det
    return out


def adjoint_action(phi: Diffeomorphism, v: VectorField) -> VectorField:
    phi.grid.check_same(v.grid)
    if not phi.has_inverse:
        raise ValueError("adjoint action needs phi^{-1}; none available")
    return VectorField(v.grid, ad_array(phi.grid, phi.map_values, phi.inverse_values, v.values))


def transport_image(image: ScalarField, phi_inv: Diffeomorphism) -> ScalarField:
    """(phi . I)(x) = I(phi^{-1}(x)); ``phi_inv`` holds phi^{-1} at the nodes."""
    pts = image.grid.to_index(phi_inv.map_values.reshape(-1, 2))
    return ScalarField(image.grid, _k.interp_scalar(image.values, pts).reshape(image.grid.shape))


def transport_landmarks(q: LandmarkSet, path: FlowPath, integrator: TimeIntegrator = RK4) -> LandmarkSet:
    """Move points with the flow, interpolating velocities directly."""
    f = path.evaluator()
    M = path.steps
    x = q.points
    for m in range(M):
        x = integrate_points(f, x, m / M, (m + 1) / M, integrator.substeps, integrator.scheme)
    return q.moved(x)
