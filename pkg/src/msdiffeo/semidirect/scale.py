"""Continuum of scales: velocity bundles v_s(t), the scale flow and the sampling map.

Scale runs over [0, 1] (coarse to fine). A bundle stores v at S scale nodes
and M+1 time nodes. Cutoffs for partial scale integrals are the uniform
points c_j = j/S, j = 0..S.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import fields
from ..fields import Grid2, interp_map_array, interp_vector_array
from ..flows import RK4, Diffeomorphism, FlowPath, ad_array, compose, integrate_flow, step_points
from .reconstruct import COARSE_FIRST, COARSE_LAST, ScaleTuple

MIDPOINT = "midpoint"
TRAPEZOID = "trapezoid"


class ScaleBundle:
    """v_s(t) sampled at scale nodes with quadrature weights.

    ``rule='midpoint'``: nodes (j + 1/2)/S, weights 1/S.
    ``rule='trapezoid'``: nodes j/S for j = 0..S, trapezoid weights.
    ``velocities`` has shape (n_nodes, M+1, nx, ny, 2).
    """

    def __init__(self, grid: Grid2, velocities, rule=MIDPOINT):
        v = np.array(velocities, dtype=float)
        if v.ndim != 5 or v.shape[2:] != grid.shape + (2,) or v.shape[1] < 2:
            raise ValueError("bundle velocities must have shape (nodes, M+1, nx, ny, 2)")
        if not np.all(np.isfinite(v)):
            raise ValueError("bundle velocities must be finite")
        if rule not in (MIDPOINT, TRAPEZOID):
            raise ValueError(f"unknown quadrature rule {rule!r}")
        if rule == TRAPEZOID and v.shape[0] < 2:
            raise ValueError("trapezoid bundle needs at least two nodes")
        v.setflags(write=False)
        self.grid = grid
        self.velocities = v
        self.rule = rule

    @classmethod
    def from_function(cls, grid, n_scale, steps, f, rule=MIDPOINT):
        """Sample ``f(s, t, x, y) -> (vx, vy)``; ``n_scale`` is the number of scale cells S."""
        x = grid.nodes()
        if rule == MIDPOINT:
            s_nodes = (np.arange(n_scale) + 0.5) / n_scale
        else:
            s_nodes = np.arange(n_scale + 1) / n_scale
        out = np.empty((len(s_nodes), steps + 1) + grid.shape + (2,))
        for j, s in enumerate(s_nodes):
            for m, t in enumerate(np.linspace(0.0, 1.0, steps + 1)):
                vx, vy = f(s, t, x[..., 0], x[..., 1])
                out[j, m, ..., 0] = vx
                out[j, m, ..., 1] = vy
        return cls(grid, out, rule)

    @property
    def n_nodes(self):
        return self.velocities.shape[0]

    @property
    def n_cells(self):
        """Number of scale cells S (cutoffs are j/S)."""
        return self.n_nodes if self.rule == MIDPOINT else self.n_nodes - 1

    @property
    def steps(self):
        return self.velocities.shape[1] - 1

    @property
    def nodes(self):
        S = self.n_cells
        if self.rule == MIDPOINT:
            return (np.arange(S) + 0.5) / S
        return np.arange(S + 1) / S

    @property
    def weights(self):
        S = self.n_cells
        if self.rule == MIDPOINT:
            return np.full(S, 1.0 / S)
        w = np.full(S + 1, 1.0 / S)
        w[0] = w[-1] = 0.5 / S
        return w

    @property
    def cutoffs(self):
        return np.arange(self.n_cells + 1) / self.n_cells

    def cutoff_index(self, c) -> int:
        S = self.n_cells
        j = int(round(c * S))
        if not (0.0 <= c <= 1.0) or abs(j - c * S) > 1e-9:
            raise ValueError(f"cutoff {c} is not a sampled scale point (multiples of 1/{S})")
        return j

    def partials(self):
        """int_0^{c_j} v_s ds for every cutoff, shape (S+1, M+1, nx, ny, 2)."""
        V, S = self.velocities, self.n_cells
        out = np.zeros((S + 1,) + V.shape[1:])
        ds = 1.0 / S
        for j in range(S):
            if self.rule == MIDPOINT:
                out[j + 1] = out[j] + ds * V[j]
            else:
                out[j + 1] = out[j] + (0.5 * ds) * (V[j] + V[j + 1])
        return out

    def at_cutoffs(self):
        """v_s at the cutoff points (interpolated linearly in s for midpoint bundles)."""
        V = self.velocities
        if self.rule == TRAPEZOID:
            return V
        if self.n_nodes == 1:
            return np.stack([V[0], V[0]])
        inner = 0.5 * (V[:-1] + V[1:])
        first = 1.5 * V[0] - 0.5 * V[1]
        last = 1.5 * V[-1] - 0.5 * V[-2]
        return np.concatenate([first[None], inner, last[None]])

    def integral(self):
        """int_0^1 v_s ds in node order."""
        acc = np.zeros(self.velocities.shape[1:])
        for w, v in zip(self.weights, self.velocities):
            acc = acc + w * v
        return acc

    def total_path(self) -> FlowPath:
        return FlowPath(self.grid, self.integral())


@dataclass
class ScaleFlowResult:
    cutoffs: np.ndarray
    eta_a: list
    eta_b: list
    sup_distance: float
    t_index: int

    def eta(self, s, way="A"):
        j = int(np.argmin(np.abs(self.cutoffs - s)))
        if abs(self.cutoffs[j] - s) > 1e-9:
            raise ValueError(f"cutoff {s} was not sampled")
        return (self.eta_a if way == "A" else self.eta_b)[j]


def _time_index(M, t):
    m = int(round(t * M))
    if not (0.0 <= t <= 1.0) or abs(m - t * M) > 1e-9:
        raise ValueError(f"time {t} is not a time node")
    return m


def _ad_inverse_integral(grid, flows, V, m_t):
    """int_0^{t} Ad_{psi(r)^{-1}} v(r) dr by the trapezoid rule over time nodes 0..m_t."""
    M = len(V) - 1
    dt = 1.0 / M
    acc = np.zeros(V.shape[1:])
    if m_t == 0:
        return acc
    terms = [ad_array(grid, flows[m].inverse_values, flows[m].map_values, V[m]) for m in range(m_t + 1)]
    for m in range(m_t):
        acc = acc + (0.5 * dt) * (terms[m] + terms[m + 1])
    return acc


def _left_invariant_flow(grid, W, integrator):
    """eta with eta^{-1} d_s eta = W(s), from W at uniform s-nodes; forward and inverse maps."""
    S = len(W) - 1
    ds = 1.0 / S
    shape = grid.shape + (2,)
    nodes = grid.nodes().reshape(-1, 2)
    fwd = nodes.copy()
    inv = nodes.copy()
    out = [Diffeomorphism(grid, fwd.reshape(shape), inv.reshape(shape))]
    for j in range(S):
        # exponential-midpoint step: flow of the s-averaged field over ds, composed on the right
        w = 0.5 * (W[j] + W[j + 1])
        f = lambda t, x: interp_vector_array(grid, w, x)  # noqa: E731
        b = lambda t, x: -interp_vector_array(grid, w, x)  # noqa: E731
        step = step_points(f, nodes, 0.0, ds, integrator.scheme)
        back = step_points(b, nodes, 0.0, ds, integrator.scheme)
        fwd = interp_map_array(grid, fwd.reshape(shape), step)
        inv = interp_map_array(grid, back.reshape(shape), inv)
        out.append(Diffeomorphism(grid, fwd.reshape(shape), inv.reshape(shape)))
    return out


def scale_flow(bundle: ScaleBundle, cutoffs=None, t=1.0, integrator=RK4, full_flow_frame=False) -> ScaleFlowResult:
    """eta(s) = psi_s(t) computed two ways.

    (A) psi_s(t) as the time-flow of int_0^s v_r dr.
    (B) the flow in s of U(s) = Ad_{psi_s(t)} int_0^t Ad_{psi_s(r)^{-1}} v_s(r) dr,
        with the r-integral by the trapezoid rule and RK4 in s.
    With ``full_flow_frame=True`` way (B) instead integrates the left-invariant
    scale velocity int_0^1 Ad_{phi(r)^{-1}} v_s(r) dr, phi the flow of the
    full integral.
    """
    grid, M = bundle.grid, bundle.steps
    m_t = _time_index(M, t)
    S = bundle.n_cells
    all_c = bundle.cutoffs
    req = all_c if cutoffs is None else np.asarray(cutoffs, dtype=float)
    idx = [bundle.cutoff_index(c) for c in req]

    partials = bundle.partials()
    flows = [integrate_flow(FlowPath(grid, partials[j]), integrator, with_inverse=True) for j in range(S + 1)]
    eta_a_all = [flows[j][m_t] for j in range(S + 1)]

    Vc = bundle.at_cutoffs()
    if full_flow_frame:
        phi = flows[S]
        W = [_ad_inverse_integral(grid, phi, Vc[j], M) for j in range(S + 1)]
        eta_b_all = _left_invariant_flow(grid, W, integrator)
    else:
        U = []
        for j in range(S + 1):
            inner = _ad_inverse_integral(grid, flows[j], Vc[j], m_t)
            U.append(ad_array(grid, flows[j][m_t].map_values, flows[j][m_t].inverse_values, inner))
        eta_b_all = integrate_flow(FlowPath(grid, np.stack(U)), integrator, with_inverse=True)

    eta_a = [eta_a_all[j] for j in idx]
    eta_b = [eta_b_all[j] for j in idx]
    dist = max(a.sup_distance(b) for a, b in zip(eta_a, eta_b))
    return ScaleFlowResult(np.asarray(req), eta_a, eta_b, dist, m_t)


def compatibility_residual(bundle: ScaleBundle, s=0.5, t=0.5, integrator=RK4) -> float:
    """Relative sup-residual of d_s u - d_t U = [U, u] at one interior (s, t) node.

    u is the time velocity of psi_s (the partial integral of v), U the scale
    velocity of way (B); d_s u = v_s exactly and d_t U is a central difference.
    Scaled by the sup of the bracket, so a wrong bracket sign gives about 2.
    """
    grid, M = bundle.grid, bundle.steps
    j = bundle.cutoff_index(s)
    m = _time_index(M, t)
    if not 0 < m < M:
        raise ValueError("t must be an interior time node")
    u = bundle.partials()[j]
    v = bundle.at_cutoffs()[j]
    flow = integrate_flow(FlowPath(grid, u), integrator, with_inverse=True)

    def U(k):
        inner = _ad_inverse_integral(grid, flow, v, k)
        return ad_array(grid, flow[k].map_values, flow[k].inverse_values, inner)

    dU = (U(m + 1) - U(m - 1)) * (0.5 * M)
    br = fields.bracket_array(U(m), u[m], grid.h)
    scale = float(np.max(np.abs(br)))
    if scale == 0.0:
        return float(np.max(np.abs(v[m] - dU)))
    return float(np.max(np.abs(v[m] - dU - br))) / scale


def scale_segment(result: ScaleFlowResult, s_low, s_high, convention="right", way="A") -> Diffeomorphism:
    """Scale content of [s_low, s_high].

    ``right``: eta(s_low)^{-1} o eta(s_high) (the finite-scale factor).
    ``left``:  eta(s_high) o eta(s_low)^{-1}.
    """
    if s_low > s_high:
        raise ValueError("need s_low <= s_high")
    lo = result.eta(s_low, way)
    hi = result.eta(s_high, way)
    if s_low == s_high:
        return Diffeomorphism.identity(lo.grid)
    if convention == "right":
        return compose(lo.inverse(), hi)
    if convention == "left":
        return compose(hi, lo.inverse())
    raise ValueError(f"unknown segment convention {convention!r}")


def bin_nodes(bundle: ScaleBundle, partition):
    """Bin index of every scale node; empty bins are an error."""
    edges = np.asarray(partition, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("partition must be strictly increasing with at least two points")
    if edges[0] < 0 or edges[-1] > 1:
        raise ValueError("partition must lie within [0, 1]")
    s = bundle.nodes
    idx = np.searchsorted(edges, s, side="right") - 1
    idx = np.where(s == edges[-1], len(edges) - 2, idx)
    inside = (idx >= 0) & (idx < len(edges) - 1)
    counts = np.bincount(idx[inside], minlength=len(edges) - 1)
    if np.any(counts == 0):
        raise ValueError("refine quadrature or coarsen partition")
    return idx


def sampling_map(bundle: ScaleBundle, partition) -> ScaleTuple:
    """Psi: v_k = sum of w_j v_{s_j} over the nodes in [t_{k-1}, t_k), coarse first."""
    idx = bin_nodes(bundle, partition)
    n = len(partition) - 1
    sums = [np.zeros(bundle.velocities.shape[1:]) for _ in range(n)]
    for j, (w, v) in enumerate(zip(bundle.weights, bundle.velocities)):
        if 0 <= idx[j] < n:
            sums[idx[j]] = sums[idx[j]] + w * v
    return ScaleTuple(tuple(FlowPath(bundle.grid, s) for s in sums), COARSE_FIRST)


def binned_total(bundle: ScaleBundle, partition):
    """int v_s ds accumulated bin by bin, the order matching :func:`sampling_map`."""
    tup = sampling_map(bundle, partition)
    acc = np.zeros(bundle.velocities.shape[1:])
    for p in tup.paths:
        acc = acc + p.velocities
    return acc


def _prefix_midpoints(bundle: ScaleBundle):
    """int_0^{s_j} v_r dr at each node: strict-prefix sum plus half the node's own cell."""
    out = np.empty_like(bundle.velocities)
    acc = np.zeros(bundle.velocities.shape[1:])
    for j, (w, v) in enumerate(zip(bundle.weights, bundle.velocities)):
        out[j] = acc + (0.5 * w) * v
        acc = acc + w * v
    return out


def continuum_bracket(u: ScaleBundle, v: ScaleBundle) -> ScaleBundle:
    """[u, v]_s = [u_s, int_0^s v] + [int_0^s u, v_s] at every node and time."""
    u.grid.check_same(v.grid)
    if u.velocities.shape != v.velocities.shape or u.rule != v.rule:
        raise ValueError("bundles must share nodes, times and rule")
    if u.rule != MIDPOINT:
        raise ValueError("continuum bracket is defined for midpoint bundles")
    h = u.grid.h
    pu, pv = _prefix_midpoints(u), _prefix_midpoints(v)
    out = np.empty_like(u.velocities)
    for j in range(u.n_nodes):
        for m in range(u.velocities.shape[1]):
            out[j, m] = fields.bracket_array(u.velocities[j, m], pv[j, m], h) + fields.bracket_array(pu[j, m], v.velocities[j, m], h)
    return ScaleBundle(u.grid, out, MIDPOINT)


def _tuple_arrays(x):
    if isinstance(x, ScaleTuple):
        return [p.velocities for p in x.paths], x.ordering, x.grid
    arrs = [getattr(f, "values", f) for f in x]
    return [np.asarray(a)[None] for a in arrs], COARSE_FIRST, getattr(x[0], "grid", None)


def semidirect_bracket(u, v, h=None):
    """Bracket of the semidirect sum, coarse-first form

        [u, v]_k = [u_k, sum_{i<k} v_i] + [sum_{i<k} u_i, v_k] + [u_k, v_k].

    Accepts two ScaleTuples (applied at every time node) or two sequences of
    VectorFields. Coarse-last tuples are handled by reversing the order.
    """
    U, ordering, grid = _tuple_arrays(u)
    W, ordering_v, _ = _tuple_arrays(v)
    if ordering != ordering_v or len(U) != len(W):
        raise ValueError("tuple mismatch")
    h = grid.h if grid is not None else h
    if h is None:
        raise ValueError("grid spacing unknown")
    if ordering == COARSE_LAST:
        U, W = U[::-1], W[::-1]
    su = np.zeros_like(U[0])
    sw = np.zeros_like(W[0])
    out = []
    for a, b in zip(U, W):
        r = np.stack([
            fields.bracket_array(a[m], sw[m], h) + fields.bracket_array(su[m], b[m], h) + fields.bracket_array(a[m], b[m], h)
            for m in range(a.shape[0])
        ])
        out.append(r)
        su = su + a
        sw = sw + b
    if ordering == COARSE_LAST:
        out = out[::-1]
    if isinstance(u, ScaleTuple):
        return ScaleTuple(tuple(FlowPath(grid, r) for r in out), ordering)
    from ..fields import VectorField

    return [VectorField(grid, r[0]) if grid is not None else r[0] for r in out]
