"""Regular 2-D grids, sampled fields, interpolation and the vector-field bracket.

Node ``(i, j)`` sits at ``origin + (i*h, j*h)``; arrays are indexed ``[i, j]``
and flattened row-major (``i`` slowest).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._backend import kernels as _k


class GridMismatchError(ValueError):
    pass


def _frozen(a, shape=None):
    a = np.array(a, dtype=float, order="C")
    if shape is not None and a.shape != shape:
        raise ValueError(f"expected shape {shape}, got {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid2:
    nx: int
    ny: int
    h: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs nx, ny >= 2")
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def unit_square(cls, n: int) -> "Grid2":
        """``n`` x ``n`` nodes covering [0, 1]^2."""
        return cls(n, n, 1.0 / (n - 1))

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def extent(self):
        return ((self.nx - 1) * self.h, (self.ny - 1) * self.h)

    @property
    def diameter(self):
        ex, ey = self.extent
        return float(np.hypot(ex, ey))

    def nodes(self) -> np.ndarray:
        """Node positions, shape (nx, ny, 2)."""
        x = self.origin[0] + self.h * np.arange(self.nx)
        y = self.origin[1] + self.h * np.arange(self.ny)
        return np.stack(np.meshgrid(x, y, indexing="ij"), axis=-1)

    def to_index(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return np.ascontiguousarray((pts - np.asarray(self.origin)) / self.h)

    def refine(self) -> "Grid2":
        """Same extent, spacing halved."""
        return Grid2(2 * self.nx - 1, 2 * self.ny - 1, self.h / 2, self.origin)

    def check_same(self, other: "Grid2"):
        if self != other:
            raise GridMismatchError(f"grid mismatch: {self} vs {other}")


class _Field:
    _ncomp = None

    def __init__(self, grid: Grid2, values):
        shape = grid.shape if self._ncomp is None else grid.shape + (self._ncomp,)
        v = _frozen(values, shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        self.grid = grid
        self.values = v

    def _like(self, values):
        return type(self)(self.grid, values)

    def _other(self, other):
        if isinstance(other, _Field):
            self.grid.check_same(other.grid)
            return other.values
        return other

    def __add__(self, other):
        return self._like(self.values + self._other(other))

    def __sub__(self, other):
        return self._like(self.values - self._other(other))

    def __mul__(self, c):
        return self._like(self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return self._like(-self.values)

    def __repr__(self):
        return f"{type(self).__name__}({self.grid})"


class ScalarField(_Field):
    """Image-like sampled function."""

    @classmethod
    def from_function(cls, grid, f):
        x = grid.nodes()
        return cls(grid, f(x[..., 0], x[..., 1]))


class VectorField(_Field):
    """Sampled velocity field, values shape (nx, ny, 2)."""

    _ncomp = 2

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape + (2,)))

    @classmethod
    def from_function(cls, grid, f):
        x = grid.nodes()
        vx, vy = f(x[..., 0], x[..., 1])
        return cls(grid, np.stack(np.broadcast_arrays(vx, vy), axis=-1))


@dataclass(frozen=True)
class LandmarkSet:
    points: np.ndarray
    ids: tuple = field(default=None)

    def __post_init__(self):
        pts = _frozen(np.asarray(self.points, dtype=float).reshape(-1, 2))
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        object.__setattr__(self, "points", pts)
        ids = tuple(range(len(pts))) if self.ids is None else tuple(int(i) for i in self.ids)
        if len(ids) != len(pts) or len(set(ids)) != len(ids):
            raise ValueError("landmark ids must be unique, one per point")
        object.__setattr__(self, "ids", ids)

    def check_distinct(self, h: float = 1.0):
        d = np.linalg.norm(self.points[:, None] - self.points[None], axis=-1)
        np.fill_diagonal(d, np.inf)
        if len(self) > 1 and d.min() <= 1e-12 * h:
            raise ValueError("coincident landmarks")
        return self

    def moved(self, points) -> "LandmarkSet":
        return LandmarkSet(points, self.ids)

    def __len__(self):
        return len(self.points)


def interpolate(f, x):
    """Evaluate a sampled field at physical points ``x`` (shape (2,) or (N, 2)).

    Scalar fields clamp the query into the grid. Vector fields fade linearly to
    zero across one cell beyond the boundary.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x.reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise ValueError("invalid query point")
    idx = f.grid.to_index(pts)
    if isinstance(f, VectorField):
        out = _k.interp_vector(f.values, idx)
    elif isinstance(f, ScalarField):
        out = _k.interp_scalar(f.values, idx)
    else:
        raise TypeError(f"cannot interpolate {type(f).__name__}")
    return out[0] if single else out


def interp_vector_array(grid, values, pts):
    """Array-level twin of :func:`interpolate` for vector fields, no checks."""
    return _k.interp_vector(np.ascontiguousarray(values), grid.to_index(pts))


def interp_map_array(grid, values, pts):
    """Interpolate a map's node images; affine maps are reproduced exactly, also outside."""
    return _k.interp_map(np.ascontiguousarray(values), grid.to_index(pts))


def jacobian_array(values, h):
    """Per-node derivative of a (nx, ny, 2) array: J[..., a, b] = d f_a / d x_b.

    Second-order central differences inside, second-order one-sided at the edges.
    """
    if values.shape[0] < 3 or values.shape[1] < 3:
        raise ValueError("jacobian needs nx, ny >= 3")
    dx = np.gradient(values, h, axis=0, edge_order=2)
    dy = np.gradient(values, h, axis=1, edge_order=2)
    return np.stack([dx, dy], axis=-1)


def jacobian(v: VectorField) -> np.ndarray:
    return jacobian_array(v.values, v.grid.h)


def bracket_array(u, v, h):
    """[u, v] = Du.v - Dv.u on raw (nx, ny, 2) arrays."""
    du = jacobian_array(u, h)
    dv = jacobian_array(v, h)
    return np.einsum("...ab,...b->...a", du, v) - np.einsum("...ab,...b->...a", dv, u)


def lie_bracket(u: VectorField, v: VectorField) -> VectorField:
    u.grid.check_same(v.grid)
    return VectorField(u.grid, bracket_array(u.values, v.values, u.grid.h))


def integrate_scale(samples: Sequence) -> VectorField:
    """Weighted sum of fields, accumulated in the given order."""
    samples = list(samples)
    if not samples:
        raise ValueError("integrate_scale needs at least one sample")
    grid = samples[0][1].grid
    acc = np.zeros(grid.shape + (2,))
    for w, f in samples:
        if w < 0:
            raise ValueError("scale weights must be nonnegative")
        grid.check_same(f.grid)
        acc = acc + w * f.values
    return VectorField(grid, acc)
