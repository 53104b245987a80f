"""Per-scale diffeomorphisms from a tuple of velocity paths.

Two orderings of the scales are supported:

``coarse_last``
    ``v_1`` is the finest scale, ``v_n`` the coarsest. ``psi_n`` is the plain
    flow of ``v_n`` and for ``k < n``

        d/dt psi_k = (v_k + (Id - Ad_{psi_k}) sum_{i>k} v_i) o psi_k,

    which is what differentiating the coarse-last product at the identity
    gives. Then ``psi_k o ... o psi_n`` is the flow of ``v_k + ... + v_n``.

``coarse_first``
    ``v_1`` is the coarsest scale. ``psi_1`` is the plain flow of ``v_1`` and

        d/dt psi_k = (Ad_{(psi_1 o ... o psi_{k-1})^{-1}} v_k) o psi_k.

In both cases ``psi_1 o ... o psi_n`` is the flow of the summed velocity.
The state-dependent scales use a frozen-velocity (exponential Euler) step, so
that composition matches the direct flow to first order in the time step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..fields import interp_map_array, interp_vector_array
from ..flows import (
    RK4,
    Diffeomorphism,
    FlowBlowUpError,
    FlowPath,
    ad_array,
    compose_all,
    integrate_flow,
    step_points,
)

COARSE_LAST = "coarse_last"
COARSE_FIRST = "coarse_first"


@dataclass(frozen=True)
class ScaleTuple:
    paths: tuple
    ordering: str = COARSE_FIRST

    def __post_init__(self):
        paths = tuple(self.paths)
        if not paths:
            raise ValueError("need at least one scale")
        if self.ordering not in (COARSE_LAST, COARSE_FIRST):
            raise ValueError(f"unknown ordering {self.ordering!r}")
        for p in paths[1:]:
            paths[0].grid.check_same(p.grid)
            if p.steps != paths[0].steps:
                raise ValueError("all scales must share the time discretisation")
        object.__setattr__(self, "paths", paths)

    @property
    def n(self):
        return len(self.paths)

    @property
    def grid(self):
        return self.paths[0].grid

    @property
    def steps(self):
        return self.paths[0].steps

    def total(self) -> FlowPath:
        acc = self.paths[0].velocities
        for p in self.paths[1:]:
            acc = acc + p.velocities
        return FlowPath(self.grid, acc)

    def reversed(self) -> "ScaleTuple":
        """Same velocities, opposite ordering tag (the tangent map of the reorder homomorphism)."""
        other = COARSE_FIRST if self.ordering == COARSE_LAST else COARSE_LAST
        return ScaleTuple(self.paths[::-1], other)


def _plain_flow(path, integrator):
    return integrate_flow(path, integrator, with_inverse=True)


def _frozen_step(grid, u, fwd, dt):
    """Advance node images by the time-dt flow of the stationary field u."""
    new_fwd = step_points(lambda t, x: _vel(grid, u, x), fwd, 0.0, dt)
    if not np.all(np.isfinite(new_fwd)):
        raise FlowBlowUpError()
    return new_fwd


def _frozen_inverse(grid, us, dt):
    """Inverse of the composed frozen steps: node points pulled back through every step.

    Pointwise, so no map interpolation error accumulates with the step count.
    """
    x = grid.nodes().reshape(-1, 2)
    for u in reversed(us):
        x = step_points(lambda t, p, u=u: -_vel(grid, u, p), x, 0.0, dt)
    if not np.all(np.isfinite(x)):
        raise FlowBlowUpError()
    return x


def _vel(grid, u, x):
    return interp_vector_array(grid, u, x)


def _as_diffeos(grid, fwd_hist, inv_hist):
    shape = grid.shape + (2,)
    return [Diffeomorphism(grid, f.reshape(shape), i.reshape(shape)) for f, i in zip(fwd_hist, inv_hist)]


def reconstruct_coarse_last(tup: ScaleTuple, integrator=RK4):
    """psi_k(t_m) for every scale k and time node m (list of lists, scale-major)."""
    if tup.ordering != COARSE_LAST:
        raise ValueError("expected a coarse_last tuple")
    grid, M, n = tup.grid, tup.steps, tup.n
    V = [p.velocities for p in tup.paths]
    coarse = _plain_flow(tup.paths[-1], integrator)
    if n == 1:
        return [coarse]
    nodes = grid.nodes().reshape(-1, 2)
    fwd = [nodes.copy() for _ in range(n - 1)]
    inv = [nodes.copy() for _ in range(n - 1)]
    hist_f = [[f] for f in fwd]
    hist_i = [[i] for i in inv]
    steps = [[] for _ in range(n - 1)]
    dt = 1.0 / M
    shape = grid.shape + (2,)
    for m in range(M):
        tail = np.zeros(shape)
        us = [None] * (n - 1)
        for k in range(n - 2, -1, -1):
            tail = tail + V[k + 1][m]
            ad = ad_array(grid, fwd[k].reshape(shape), inv[k].reshape(shape), tail)
            us[k] = V[k][m] + tail - ad
        for k in range(n - 1):
            steps[k].append(us[k])
            fwd[k] = _frozen_step(grid, us[k], fwd[k], dt)
            inv[k] = _frozen_inverse(grid, steps[k], dt)
            hist_f[k].append(fwd[k])
            hist_i[k].append(inv[k])
    return [_as_diffeos(grid, hist_f[k], hist_i[k]) for k in range(n - 1)] + [coarse]


def reconstruct_coarse_first(tup: ScaleTuple, integrator=RK4):
    """psi_k(t_m) for every scale k and time node m (list of lists, scale-major)."""
    if tup.ordering != COARSE_FIRST:
        raise ValueError("expected a coarse_first tuple")
    grid, M, n = tup.grid, tup.steps, tup.n
    V = [p.velocities for p in tup.paths]
    coarse = _plain_flow(tup.paths[0], integrator)
    if n == 1:
        return [coarse]
    nodes = grid.nodes().reshape(-1, 2)
    shape = grid.shape + (2,)
    fwd = [nodes.copy() for _ in range(n - 1)]
    inv = [nodes.copy() for _ in range(n - 1)]
    hist_f = [[f] for f in fwd]
    hist_i = [[i] for i in inv]
    steps = [[] for _ in range(n - 1)]
    dt = 1.0 / M
    for m in range(M):
        # prefix composition Phi_{k-1} = psi_1 o ... o psi_{k-1} at t_m
        pf = coarse[m].map_values.reshape(-1, 2)
        pi = coarse[m].inverse_values.reshape(-1, 2)
        us = []
        for k in range(n - 1):
            us.append(ad_array(grid, pi.reshape(shape), pf.reshape(shape), V[k + 1][m]))
            pf = interp_map_array(grid, pf.reshape(shape), fwd[k])
            pi = interp_map_array(grid, inv[k].reshape(shape), pi)
        for k in range(n - 1):
            steps[k].append(us[k])
            fwd[k] = _frozen_step(grid, us[k], fwd[k], dt)
            inv[k] = _frozen_inverse(grid, steps[k], dt)
            hist_f[k].append(fwd[k])
            hist_i[k].append(inv[k])
    return [coarse] + [_as_diffeos(grid, hist_f[k], hist_i[k]) for k in range(n - 1)]


def reconstruct(tup: ScaleTuple, integrator=RK4):
    if tup.ordering == COARSE_LAST:
        return reconstruct_coarse_last(tup, integrator)
    return reconstruct_coarse_first(tup, integrator)


def composed(psis, m=-1) -> Diffeomorphism:
    """psi_1(t_m) o ... o psi_n(t_m)."""
    return compose_all([p[m] for p in psis])


def diagram_residual(tup: ScaleTuple, integrator=RK4, psis=None) -> float:
    """sup-norm gap between psi_1 o ... o psi_n (1) and the direct flow of the summed velocity."""
    psis = reconstruct(tup, integrator) if psis is None else psis
    direct = integrate_flow(tup.total(), integrator)[-1]
    return composed(psis).sup_distance(direct)
