"""Image matching on the grid (experimental, meant for grids up to 64^2).

Momentum lives on the grid nodes, v_m = K p_m by h^2-weighted convolution,
and the image is advected semi-Lagrangian: J_{m+1}(x) = J_m(x - dt v_m(x)).
The gradient is the exact reverse pass of these discrete steps.
"""
from __future__ import annotations

import numpy as np

from ..kernels import _grid_convolve

MAX_SIDE = 64


def _group_specs(problem):
    if problem.per_scale:
        return problem.kernel.components()
    return [problem.kernel]


def _velocity(specs, grid, P):
    v = np.zeros(grid.shape + (2,))
    for spec, p in zip(specs, P):
        v = v + _grid_convolve(spec, grid, p)
    return v


def _sample(J, pts):
    """Clamped bilinear lookup with the pieces needed for the reverse pass."""
    nx, ny = J.shape
    u = np.clip(pts[:, 0], 0.0, nx - 1.0)
    w = np.clip(pts[:, 1], 0.0, ny - 1.0)
    free_u = (pts[:, 0] > 0.0) & (pts[:, 0] < nx - 1.0)
    free_w = (pts[:, 1] > 0.0) & (pts[:, 1] < ny - 1.0)
    i0 = np.clip(np.floor(u).astype(np.intp), 0, nx - 2)
    j0 = np.clip(np.floor(w).astype(np.intp), 0, ny - 2)
    a = u - i0
    b = w - j0
    f00, f10, f01, f11 = J[i0, j0], J[i0 + 1, j0], J[i0, j0 + 1], J[i0 + 1, j0 + 1]
    val = (1 - a) * (1 - b) * f00 + a * (1 - b) * f10 + (1 - a) * b * f01 + a * b * f11
    da = ((1 - b) * (f10 - f00) + b * (f11 - f01)) * free_u
    db = ((1 - a) * (f01 - f00) + a * (f11 - f10)) * free_w
    return val, (i0, j0, a, b, da, db)


def _scatter(shape, cache, lam):
    i0, j0, a, b, _, _ = cache
    out = np.zeros(shape)
    np.add.at(out, (i0, j0), (1 - a) * (1 - b) * lam)
    np.add.at(out, (i0 + 1, j0), a * (1 - b) * lam)
    np.add.at(out, (i0, j0 + 1), (1 - a) * b * lam)
    np.add.at(out, (i0 + 1, j0 + 1), a * b * lam)
    return out


def check_size(grid):
    if max(grid.nx, grid.ny) > MAX_SIDE:
        raise ValueError(f"image matching is experimental and limited to {MAX_SIDE}^2 grids")


def forward(problem, momenta):
    grid = problem.grid
    check_size(grid)
    specs = _group_specs(problem)
    M = momenta.shape[0]
    dt = 1.0 / M
    idx = grid.to_index(grid.nodes().reshape(-1, 2))
    J = np.array(problem.source.values, dtype=float)
    images, caches, vels = [J], [], []
    for m in range(M):
        v = _velocity(specs, grid, momenta[m])
        pts = idx - (dt / grid.h) * v.reshape(-1, 2)
        val, cache = _sample(J, pts)
        J = val.reshape(grid.shape)
        images.append(J)
        caches.append(cache)
        vels.append(v)
    return images, caches, vels


def energy_parts(problem, momenta):
    grid = problem.grid
    specs = _group_specs(problem)
    images, _, _ = forward(problem, momenta)
    M = momenta.shape[0]
    h2 = grid.h**2
    groups = np.zeros(momenta.shape[1])
    for m in range(M):
        for k, (spec, p) in enumerate(zip(specs, momenta[m])):
            groups[k] += h2 * float(np.sum(p * _grid_convolve(spec, grid, p))) / M
    diff = images[-1] - problem.target.values
    data = h2 * float(np.sum(diff * diff))
    return float(np.sum(groups)), groups, data, images[-1]


def gradient(problem, momenta):
    grid = problem.grid
    specs = _group_specs(problem)
    images, caches, _ = forward(problem, momenta)
    M = momenta.shape[0]
    dt = 1.0 / M
    h2 = grid.h**2
    g = np.zeros_like(momenta)
    lam = (2.0 * problem.data_weight * h2) * (images[-1] - problem.target.values).ravel()
    for m in range(M - 1, -1, -1):
        cache = caches[m]
        _, _, _, _, da, db = cache
        # d pts / d v = -dt/h per component
        gv = np.stack([da * lam, db * lam], axis=-1) * (-dt / grid.h)
        gv = gv.reshape(grid.shape + (2,))
        for k, spec in enumerate(specs):
            # v = K p with K self-adjoint for the plain sum: dE/dp = h^2 k * gv
            g[m, k] += _grid_convolve(spec, grid, gv)
            g[m, k] += (2.0 * dt) * _grid_convolve(spec, grid, momenta[m, k]) * h2
        lam = _scatter(grid.shape, cache, lam).ravel()
    return g
