"""Gaussian reproducing kernels: single, finite mixtures and quadrature continua.

A :class:`KernelSpec` is stored as an ordered list of elementary Gaussian
*terms*, each assigned to a *group* (one group per scale). Every sum over
terms is accumulated in term order, so a continuum spec and the finite spec
obtained by binning its nodes produce bit-identical kernel values.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from ._backend import kernels as _k
from .fields import Grid2, LandmarkSet, VectorField

FINITE = "finite"
CONTINUUM = "continuum"


class KernelSystemError(np.linalg.LinAlgError):
    def __init__(self, msg="ill-conditioned kernel system; increase jitter or separate points"):
        super().__init__(msg)


@dataclass(frozen=True)
class GaussianKernel:
    sigma: float
    weight: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.weight > 0:
            raise ValueError("kernel weight must be positive")

    def __call__(self, x, y):
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        d = x[:, None, :] - y[None, :, :]
        r2 = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1]
        return self.weight * np.exp(r2 * (-0.5 / (self.sigma * self.sigma)))


def geometric_sigma(s_min, s_max, sigma_min, sigma_max):
    """sigma(s) = sigma_max^(1-u) sigma_min^u with u the position of s in [s_min, s_max]."""

    def sigma_of_s(s):
        u = (s - s_min) / (s_max - s_min)
        return sigma_max ** (1.0 - u) * sigma_min**u

    return sigma_of_s


class KernelSpec:
    """Kernel ``K = sum_t w_t k_{sigma_t}``, with terms grouped into scales.

    Build with :meth:`finite`, :meth:`continuum` or :meth:`binned`; groups are
    ordered coarse to fine.
    """

    def __init__(self, mode, terms, groups, continuum=None):
        self.mode = mode
        self.terms = tuple(terms)
        self.groups = tuple(int(g) for g in groups)
        self.continuum_info = continuum
        if not self.terms:
            raise ValueError("kernel needs at least one component")
        if list(self.groups) != sorted(self.groups) or self.groups[0] != 0:
            raise ValueError("term groups must be contiguous and start at 0")
        self.n_scales = self.groups[-1] + 1
        self.sig2 = np.array([t.sigma**2 for t in self.terms])
        self.weights = np.array([t.weight for t in self.terms])
        self.term_group = np.array(self.groups, dtype=np.intp)

    @classmethod
    def finite(cls, components: Sequence) -> "KernelSpec":
        """Mixture of components, coarse to fine.

        Each component is a :class:`GaussianKernel` or a sequence of them
        (summed, e.g. a bin of continuum nodes).
        """
        terms, groups, lead = [], [], []
        for g, c in enumerate(components):
            c = [c] if isinstance(c, GaussianKernel) else list(c)
            if not c:
                raise ValueError("empty kernel component")
            terms.extend(c)
            groups.extend([g] * len(c))
            lead.append(max(t.sigma for t in c))
        if any(b >= a for a, b in zip(lead, lead[1:])):
            raise ValueError("finite kernel components must have strictly decreasing sigma")
        return cls(FINITE, terms, groups)

    @classmethod
    def single(cls, sigma, weight=1.0) -> "KernelSpec":
        return cls.finite([GaussianKernel(sigma, weight)])

    @classmethod
    def continuum(
        cls,
        s_min: float,
        s_max: float,
        n_nodes: int,
        sigma_min: float | None = None,
        sigma_max: float | None = None,
        sigma_of_s: Callable | None = None,
        density: Callable | None = None,
    ) -> "KernelSpec":
        """Midpoint quadrature of ``int K_{sigma(s)} dlambda(s)`` over [s_min, s_max].

        ``density`` is the density of lambda w.r.t. Lebesgue measure (default 1).
        """
        if not 0 <= s_min < s_max:
            raise ValueError("need 0 <= s_min < s_max")
        if n_nodes < 1:
            raise ValueError("need at least one quadrature node")
        if sigma_of_s is None:
            if sigma_min is None or sigma_max is None:
                raise ValueError("give sigma_of_s or sigma_min/sigma_max")
            sigma_of_s = geometric_sigma(s_min, s_max, sigma_min, sigma_max)
        ds = (s_max - s_min) / n_nodes
        s = s_min + ds * (np.arange(n_nodes) + 0.5)
        lam = np.full(n_nodes, ds)
        if density is not None:
            lam = lam * np.array([density(x) for x in s])
        if np.any(lam <= 0):
            raise ValueError("quadrature weights must be positive")
        terms = [GaussianKernel(float(sigma_of_s(x)), float(w)) for x, w in zip(s, lam)]
        info = dict(s_min=s_min, s_max=s_max, nodes=s, weights=lam, sigma_min=sigma_min, sigma_max=sigma_max)
        return cls(CONTINUUM, terms, range(n_nodes), continuum=info)

    @property
    def nodes(self):
        """Quadrature pairs (s_j, lambda_j) of a continuum spec."""
        if self.mode != CONTINUUM:
            raise ValueError("only continuum specs have quadrature nodes")
        return list(zip(self.continuum_info["nodes"], self.continuum_info["weights"]))

    def binned(self, edges: Sequence[float]) -> "KernelSpec":
        """Finite spec with K_k = sum of the node terms whose s lies in [edges[k], edges[k+1])."""
        if self.mode != CONTINUUM:
            raise ValueError("only continuum specs can be binned")
        return KernelSpec.finite(self.bin_terms(edges))

    def bin_index(self, edges):
        edges = np.asarray(edges, dtype=float)
        info = self.continuum_info
        if np.any(np.diff(edges) <= 0):
            raise ValueError("partition must be strictly increasing")
        if edges[0] > info["s_min"] or edges[-1] < info["s_max"]:
            raise ValueError("partition must cover the scale interval")
        idx = np.searchsorted(edges, info["nodes"], side="right") - 1
        counts = np.bincount(idx, minlength=len(edges) - 1)
        if np.any(counts == 0):
            raise ValueError("refine quadrature or coarsen partition")
        return idx

    def bin_terms(self, edges):
        idx = self.bin_index(edges)
        return [[t for t, i in zip(self.terms, idx) if i == k] for k in range(len(edges) - 1)]

    def component(self, k) -> "KernelSpec":
        """Scale ``k`` alone as a one-component finite spec."""
        return KernelSpec.finite([[t for t, g in zip(self.terms, self.groups) if g == k]])

    def components(self):
        return [self.component(k) for k in range(self.n_scales)]

    def scalar(self, x, y) -> np.ndarray:
        """Scalar kernel matrix k(x_a, y_b), terms summed in order."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        d = x[:, None, :] - y[None, :, :]
        r2 = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1]
        out = np.zeros(r2.shape)
        for s2, w in zip(self.sig2, self.weights):
            out = out + w * np.exp(r2 * (-0.5 / s2))
        return out

    def total_weight(self):
        acc = 0.0
        for w in self.weights:
            acc = acc + w
        return acc

    def describe(self):
        if self.mode == FINITE:
            return ";".join(
                "+".join(f"{t.sigma:.6g}x{t.weight:.6g}" for t, g in zip(self.terms, self.groups) if g == k)
                for k in range(self.n_scales)
            )
        i = self.continuum_info
        return f"continuum[{i['s_min']}..{i['s_max']}]x{len(self.terms)}"

    def __eq__(self, other):
        return (
            isinstance(other, KernelSpec)
            and self.mode == other.mode
            and self.terms == other.terms
            and self.groups == other.groups
        )

    def __repr__(self):
        return f"KernelSpec({self.mode}, {self.describe()})"


@dataclass(frozen=True)
class Momentum:
    """Covectors on landmarks (shape (n, 2)) or on grid nodes (shape (nx, ny, 2))."""

    carrier: object
    covectors: np.ndarray

    def __post_init__(self):
        c = np.array(self.covectors, dtype=float)
        if isinstance(self.carrier, LandmarkSet):
            c = c.reshape(len(self.carrier), 2)
        elif isinstance(self.carrier, Grid2):
            c = c.reshape(self.carrier.shape + (2,))
        else:
            raise TypeError("momentum carrier must be a LandmarkSet or Grid2")
        if not np.all(np.isfinite(c)):
            raise ValueError("momentum must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "covectors", c)

    def pair(self, v) -> float:
        """(p, v): sum over landmarks, or h^2-weighted sum over grid nodes."""
        v = getattr(v, "values", v)
        s = float(np.sum(self.covectors * np.asarray(v).reshape(self.covectors.shape)))
        if isinstance(self.carrier, Grid2):
            s *= self.carrier.h**2
        return s


def kernel_eval(spec: KernelSpec, x, y) -> np.ndarray:
    """2x2 matrix K(x, y) = k(x, y) Id."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("invalid kernel argument")
    return spec.scalar(x.reshape(1, 2), y.reshape(1, 2))[0, 0] * np.eye(2)


def apply_at(spec: KernelSpec, x, centers, p) -> np.ndarray:
    """Array-level kernel application: v(x) = sum_a k(x, c_a) p_a, shape (N, 2)."""
    x = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1, 2))
    centers = np.ascontiguousarray(np.asarray(centers, dtype=float).reshape(-1, 2))
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    mom = np.ascontiguousarray(np.broadcast_to(p, (len(spec.terms),) + p.shape))
    return _k.gauss_apply(x, centers, mom, spec.sig2, spec.weights)


def _grid_convolve(spec: KernelSpec, grid: Grid2, P):
    """h^2 sum_nodes k(x, y) P(y) evaluated at the grid nodes (separable Gaussians)."""
    xs = grid.h * np.arange(grid.nx)
    ys = grid.h * np.arange(grid.ny)
    dx2 = (xs[:, None] - xs[None, :]) ** 2
    dy2 = (ys[:, None] - ys[None, :]) ** 2
    out = np.zeros(grid.shape + (2,))
    for s2, w in zip(spec.sig2, spec.weights):
        kx = np.exp(dx2 * (-0.5 / s2))
        ky = np.exp(dy2 * (-0.5 / s2))
        for c in range(2):
            out[..., c] = out[..., c] + w * (kx @ P[..., c] @ ky.T)
    return out * grid.h**2


def apply_kernel(spec: KernelSpec, p: Momentum, at=None):
    """Velocity generated by a momentum.

    Landmark carrier: values at ``at`` (points, a Grid2, or the carrier itself
    when omitted). Grid carrier: the h^2-weighted discrete convolution, as a
    VectorField on the carrier grid (or values at ``at`` points).
    """
    if isinstance(p.carrier, LandmarkSet):
        centers = p.carrier.points
        if at is None:
            return apply_at(spec, centers, centers, p.covectors)
        if isinstance(at, Grid2):
            v = apply_at(spec, at.nodes().reshape(-1, 2), centers, p.covectors)
            return VectorField(at, v.reshape(at.shape + (2,)))
        return apply_at(spec, at, centers, p.covectors)
    grid = p.carrier
    if at is None or at == grid:
        return VectorField(grid, _grid_convolve(spec, grid, p.covectors))
    pts = at.nodes().reshape(-1, 2) if isinstance(at, Grid2) else at
    v = apply_at(spec, pts, grid.nodes().reshape(-1, 2), p.covectors * grid.h**2)
    if isinstance(at, Grid2):
        return VectorField(at, v.reshape(at.shape + (2,)))
    return v


class GramSystem:
    """Block Gram matrix G[(a,i),(b,j)] = k(x_a, x_b) delta_ij plus diagonal jitter."""

    def __init__(self, spec: KernelSpec, points: LandmarkSet, jitter=None):
        self.spec = spec
        self.points = points
        self.scalar_matrix = spec.scalar(points.points, points.points)
        n = len(points)
        if jitter is None:
            jitter = 1e-10 * np.trace(self.scalar_matrix) / n
        if jitter < 0:
            raise ValueError("jitter must be nonnegative")
        self.jitter = float(jitter)
        self._factor = None

    @property
    def matrix(self):
        """Full 2n x 2n block matrix, jitter included; index 2a + i."""
        return np.kron(self.scalar_matrix, np.eye(2)) + self.jitter * np.eye(2 * len(self.points))

    def _jittered(self):
        return self.scalar_matrix + self.jitter * np.eye(len(self.points))

    def factor(self):
        if self._factor is None:
            try:
                self._factor = scipy.linalg.cho_factor(self._jittered(), lower=True, check_finite=True)
            except np.linalg.LinAlgError as exc:
                raise KernelSystemError() from exc
        return self._factor

    def solve(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(len(self.points), 2)
        A = self._jittered()
        p = scipy.linalg.cho_solve(self.factor(), v)
        r = v - A @ p
        p = p + scipy.linalg.cho_solve(self.factor(), r)
        nv = np.linalg.norm(v)
        if np.linalg.norm(v - A @ p) > 1e-10 * nv and nv > 0:
            raise KernelSystemError()
        # refine towards the unjittered system while that keeps helping
        K = self.scalar_matrix
        res = np.linalg.norm(v - K @ p)
        for _ in range(4):
            if res <= 1e-14 * nv:
                break
            q = p + scipy.linalg.cho_solve(self.factor(), v - K @ p)
            rq = np.linalg.norm(v - K @ q)
            if rq >= res:
                break
            p, res = q, rq
        return p


def solve_momentum(spec: KernelSpec, v_at_points, points, jitter=None, tol=1e-8, maxiter=2000) -> Momentum:
    """Invert the kernel: find p with K p = v.

    Landmarks use a Cholesky solve of the (jittered) Gram matrix; grid
    carriers use conjugate gradients on the discrete convolution.
    """
    if isinstance(points, Grid2):
        grid = points
        v = getattr(v_at_points, "values", v_at_points)
        v = np.asarray(v, dtype=float).reshape(grid.shape + (2,))
        n = v.size

        def mv(x):
            return _grid_convolve(spec, grid, x.reshape(grid.shape + (2,))).ravel()

        op = scipy.sparse.linalg.LinearOperator((n, n), matvec=mv, dtype=float)
        x, info = scipy.sparse.linalg.cg(op, v.ravel(), rtol=tol, maxiter=maxiter)
        if info != 0:
            warnings.warn(f"grid momentum solve stopped before tolerance {tol} (info={info})", stacklevel=2)
        return Momentum(grid, x.reshape(grid.shape + (2,)))
    p = GramSystem(spec, points, jitter).solve(v_at_points)
    return Momentum(points, p)


def project_scales(spec: KernelSpec, v_at_points, points: LandmarkSet, jitter=None):
    """Minimal-norm split of v across the scales: v_i = K_i K^{-1} v."""
    p = solve_momentum(spec, v_at_points, points, jitter)
    return [apply_at(c, points.points, points.points, p.covectors) for c in spec.components()]


def rkhs_norm(spec: KernelSpec, p: Momentum) -> float:
    """Squared norm (p, K p) of the velocity generated by p."""
    return p.pair(apply_kernel(spec, p))


def scale_norms(spec: KernelSpec, p: Momentum) -> np.ndarray:
    """(p, K_i p) for each scale i."""
    return np.array([rkhs_norm(c, p) for c in spec.components()])
