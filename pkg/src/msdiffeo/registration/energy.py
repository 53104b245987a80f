"""Energy and gradient for every formulation."""
from __future__ import annotations

import numpy as np

from ..flows import FlowPath, transport_image
from ..kernels import apply_at
from ..semidirect.reconstruct import COARSE_FIRST, COARSE_LAST, ScaleTuple, composed, reconstruct
from . import images, landmarks
from .problem import SDP_COARSE_LAST, SDP_FORMS, Control, EnergyBreakdown, MatchingProblem


def _check(problem: MatchingProblem, control: Control):
    want = problem.zero_control().momenta.shape
    if control.momenta.shape != want:
        raise ValueError(f"control shape {control.momenta.shape} does not fit the problem {want}")


def trajectory(problem, control):
    """Landmark positions at the time nodes."""
    traj, _ = landmarks.shoot(
        problem.kernel, problem.source.points, control.momenta, problem.per_scale, problem.integrator
    )
    return traj


def scale_tuple(problem: MatchingProblem, control: Control, steps=None, grid=None) -> ScaleTuple:
    """Per-group grid velocity paths generated by the control, ordered for the formulation.

    ``steps`` resamples the piecewise-constant control at that many uniform
    intervals (landmark positions from partial steps).
    """
    grid = problem.grid if grid is None else grid
    M = control.steps
    steps = M if steps is None else steps
    P = control.momenta
    ng = P.shape[1]
    specs = problem.kernel.components() if problem.per_scale else [problem.kernel]
    if problem.is_landmarks:
        traj = trajectory(problem, control)
        x = grid.nodes().reshape(-1, 2)
        vel = np.zeros((ng, steps + 1) + grid.shape + (2,))
        for j in range(steps + 1):
            t = j / steps
            m = min(int(np.floor(t * M + 1e-12)), M - 1)
            q = landmarks.positions_at(problem.kernel, traj, P, problem.per_scale, problem.integrator, t)
            for k in range(ng):
                vel[k, j] = apply_at(specs[k], x, q, P[m, k]).reshape(grid.shape + (2,))
    else:
        if steps != M or grid != problem.grid:
            raise ValueError("image controls are used at their own resolution")
        vel = np.zeros((ng, M + 1) + grid.shape + (2,))
        for m in range(M + 1):
            for k in range(ng):
                vel[k, m] = images._grid_convolve(specs[k], grid, P[min(m, M - 1), k])
    paths = [FlowPath(grid, v) for v in vel]
    if problem.formulation == SDP_COARSE_LAST:
        return ScaleTuple(tuple(paths[::-1]), COARSE_LAST)
    return ScaleTuple(tuple(paths), COARSE_FIRST)


def final_map(problem, control, steps=None):
    """psi_1 o ... o psi_n at t = 1 from the grid reconstruction, with the per-scale paths."""
    tup = scale_tuple(problem, control, steps)
    psis = reconstruct(tup, problem.integrator)
    return composed(psis), psis, tup


def energy(problem: MatchingProblem, control: Control) -> EnergyBreakdown:
    _check(problem, control)
    P = control.momenta
    if problem.is_landmarks:
        reg, groups, data, traj = landmarks.energy_parts(
            problem.kernel, problem.source.points, problem.target.points, P, problem.per_scale, problem.integrator
        )
        if problem.formulation in SDP_FORMS:
            phi, _, _ = final_map(problem, control)
            diff = phi(problem.source.points) - problem.target.points
            data = float(np.sum(diff * diff))
    else:
        reg, groups, data, _ = images.energy_parts(problem, P)
        if problem.formulation in SDP_FORMS:
            phi, _, _ = final_map(problem, control)
            moved = transport_image(problem.source, phi.inverse())
            diff = moved.values - problem.target.values
            data = problem.grid.h**2 * float(np.sum(diff * diff))
    return EnergyBreakdown(reg, data, problem.data_weight, tuple(float(g) for g in groups))


def gradient(problem: MatchingProblem, control: Control) -> Control:
    """Exact gradient of the discrete energy.

    Semidirect formulations measure their data term through the grid
    reconstruction, which has no gradient here; optimise the simultaneous
    problem, which shares the control and the regulariser.
    """
    _check(problem, control)
    if problem.formulation in SDP_FORMS:
        raise ValueError("no gradient for semidirect formulations; optimise the simultaneous form")
    if problem.is_landmarks:
        g = landmarks.gradient(
            problem.kernel, problem.source.points, problem.target.points, control.momenta,
            problem.per_scale, problem.integrator, problem.data_weight,
        )
    else:
        g = images.gradient(problem, control.momenta)
    return Control(g)


def warped_source(problem, control):
    """Source moved by phi(1): landmark positions or the deformed image."""
    if problem.is_landmarks:
        return trajectory(problem, control)[-1]
    return images.energy_parts(problem, control.momenta)[3]
