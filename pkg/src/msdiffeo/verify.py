"""Self-contained numerical checks of the library's equivalence claims.

Each check yields a measured value and a bound: ``max`` checks pass when the
value is at most the threshold, ``min`` checks when it is at least the bound,
``range`` checks when it lies inside [lo, hi]. All synthetic data comes from
one seeded generator, and the report holds no timings, so reruns match byte
for byte.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from . import fields
from .fields import Grid2, LandmarkSet
from .flows import Diffeomorphism, FlowPath, ad_array, integrate_flow
from .kernels import GaussianKernel, KernelSpec, project_scales, solve_momentum, scale_norms, rkhs_norm
from .registration import landmarks as lm
from .registration.energy import energy
from .registration.problem import INTEGRAL_KERNEL, SIMULTANEOUS, SUM_OF_KERNELS, Control, MatchingProblem
from .registration.report import split_control
from .semidirect import groups as grp
from .semidirect.reconstruct import COARSE_FIRST, COARSE_LAST, ScaleTuple, diagram_residual
from .semidirect.scale import (
    TRAPEZOID,
    ScaleBundle,
    binned_total,
    compatibility_residual,
    continuum_bracket,
    sampling_map,
    scale_flow,
)

REPORT_COLUMNS = ("check", "value", "kind", "bound", "status")


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    kind: str  # max | min | range
    lo: float = -np.inf
    hi: float = np.inf

    @property
    def passed(self):
        v = self.value
        if not np.isfinite(v):
            return False
        if self.kind == "max":
            return v <= self.hi
        if self.kind == "min":
            return v >= self.lo
        return self.lo <= v <= self.hi

    @property
    def bound(self):
        if self.kind == "max":
            return "<= %.3g" % self.hi
        if self.kind == "min":
            return ">= %.3g" % self.lo
        return "%.3g..%.3g" % (self.lo, self.hi)

    def row(self):
        return (self.name, float(self.value), self.kind, self.bound, "PASS" if self.passed else "FAIL")


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)

    def add(self, check: Check):
        self.checks.append(check)

    def extend(self, checks):
        self.checks.extend(checks)

    @property
    def all_passed(self):
        return all(c.passed for c in self.checks)

    @property
    def exit_code(self):
        return 0 if self.all_passed else 3

    def rows(self):
        return [c.row() for c in self.checks]

    def table(self):
        w = max([len(c.name) for c in self.checks] + [5])
        lines = [f"{'check':<{w}}  {'value':>12}  {'bound':<18} status"]
        for name, value, _, bound, status in self.rows():
            lines.append(f"{name:<{w}}  {value:>12.4g}  {bound:<18} {status}")
        return "\n".join(lines)


def _max(name, value, threshold, tighten=1.0):
    return Check(name, float(value), "max", hi=threshold / tighten)


# ---- matrix group suite ----


def oracle_checks(rng, tuples=1000, ns=(1, 2, 3, 4), threshold=1e-11, tighten=1.0):
    """Group axioms, closure and the reorder/trivialisation homomorphisms on random 3x3 tuples."""
    out = []
    for n in ns:
        for order in (COARSE_LAST, COARSE_FIRST):
            a, b, c = (grp.random_batch(rng, tuples, n, order) for _ in range(3))
            e = grp.identity_batch(tuples, n, order)
            ab = grp.sdp_multiply(a, b)
            ai = grp.sdp_inverse(a)
            err = {
                "assoc": grp.max_entry_error(grp.sdp_multiply(ab, c), grp.sdp_multiply(a, grp.sdp_multiply(b, c))),
                "identity": max(grp.max_entry_error(grp.sdp_multiply(a, e), a),
                                grp.max_entry_error(grp.sdp_multiply(e, a), a)),
                "inverse": max(grp.max_entry_error(grp.sdp_multiply(a, ai), e),
                               grp.max_entry_error(grp.sdp_multiply(ai, a), e)),
                "closure": 0.0 if grp.batch_in_chain(ab) and grp.batch_in_chain(ai) else np.inf,
                "trivialize_hom": grp.max_entry_error(
                    grp.trivialize(ab), grp.direct_multiply(grp.trivialize(a), grp.trivialize(b))),
            }
            if order == COARSE_LAST:
                pa, pb = grp.reorder_hom(a), grp.reorder_hom(b)
                err["reorder_hom"] = grp.max_entry_error(grp.reorder_hom(ab), grp.sdp_multiply(pa, pb))
                err["reorder_roundtrip"] = grp.max_entry_error(grp.reorder_hom_inverse(pa), a)
                err["triangle"] = grp.max_entry_error(grp.trivialize(pa), grp.trivialize(a))
            for key, v in err.items():
                out.append(_max(f"oracle_{key}_{order}_n{n}", v, threshold, tighten))
    return out


# ---- fields and flows ----


def _bracket_checks(tighten):
    out = []
    g = Grid2.unit_square(17)
    x, y = g.nodes()[..., 0], g.nodes()[..., 1]
    u = np.stack([x, 0 * x], -1)
    v = np.stack([0 * x, x], -1)
    want = np.stack([0 * x, -x], -1)
    out.append(_max("bracket_linear_exact", np.max(np.abs(fields.bracket_array(u, v, g.h) - want)), 1e-12, tighten))
    v2 = np.stack([y, 0 * x], -1)
    out.append(_max("bracket_antisymmetry",
                    np.max(np.abs(fields.bracket_array(u, v2, g.h) + fields.bracket_array(v2, u, g.h))), 1e-13, tighten))
    errs = []
    for n in (17, 33, 65):
        g = Grid2.unit_square(n)
        x, y = g.nodes()[..., 0], g.nodes()[..., 1]
        u = np.stack([x**3 + y, x * y**2], -1)
        v = np.stack([y**3, x**2 * y], -1)
        exact = np.stack([3 * x**2 * y**3 + x**2 * y - 3 * x * y**4,
                          y**5 + x**3 * y**2 - 2 * x**4 * y - 2 * x * y**2], -1)
        errs.append(np.max(np.abs(fields.bracket_array(u, v, g.h) - exact)))
    out.append(Check("bracket_decay_17_33", errs[0] / errs[1], "range", 3.5, 4.5))
    out.append(Check("bracket_decay_33_65", errs[1] / errs[2], "range", 3.5, 4.5))
    return out


def _flow_checks(tighten):
    """Linear fields about the centre; only nodes whose paths stay inside are measured."""
    out = []
    g = Grid2.unit_square(17)
    c = np.array([0.5, 0.5])
    x = g.nodes()
    inner = np.linalg.norm(x - c, axis=-1) <= 0.25
    A = np.array([[0.1, -0.8], [0.8, -0.1]])
    lin = (x - c) @ A.T
    evals, evecs = np.linalg.eig(A)
    expA = (evecs @ np.diag(np.exp(evals)) @ np.linalg.inv(evecs)).real
    exact = c + (x - c) @ expA.T
    errs = []
    for M in (4, 8):
        phi = integrate_flow(FlowPath(g, np.stack([lin] * (M + 1))))[-1]
        errs.append(np.max(np.abs(phi.map_values - exact)[inner]))
    out.append(Check("flow_rk4_order", errs[0] / errs[1], "range", 12.0, 20.0))
    fwd = integrate_flow(FlowPath(g, np.stack([lin] * 9)), with_inverse=True)[-1]
    back = fwd(fwd.inverse_values.reshape(-1, 2)).reshape(x.shape)
    out.append(_max("flow_inverse_consistency", np.max(np.abs(back - x)[inner]), 1e-6, tighten))
    B = np.array([[1.1, 0.2], [-0.1, 0.9]])
    phi = Diffeomorphism(g, c + (x - c) @ B.T, c + (x - c) @ np.linalg.inv(B).T)
    conj = (x - c) @ (B @ A @ np.linalg.inv(B)).T
    got = ad_array(g, phi.map_values, phi.inverse_values, lin)
    out.append(_max("ad_linear_conjugation", np.max(np.abs(got - conj)[inner]), 1e-10, tighten))
    return out


# ---- kernels ----


def _gauss(points, sigma, weight):
    d = points[:, None, :] - points[None, :, :]
    return weight * np.exp(-np.sum(d * d, -1) / (2 * sigma * sigma))


def qp_split(points, components, v):
    """Minimal-norm split of v by a direct KKT solve in the per-scale momenta.

    Minimises sum_i c_i' G_i c_i subject to sum_i G_i c_i = v, for each
    coordinate, and returns the velocities G_i c_i.
    """
    n, k = len(points), len(components)
    Gs = [_gauss(points, s, w) for s, w in components]
    N = n * k
    kkt = np.zeros((N + n, N + n))
    for i, G in enumerate(Gs):
        kkt[i * n:(i + 1) * n, i * n:(i + 1) * n] = 2 * G
        kkt[i * n:(i + 1) * n, N:] = -G.T
        kkt[N:, i * n:(i + 1) * n] = G
    rhs = np.zeros((N + n, 2))
    rhs[N:] = v
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return [G @ sol[i * n:(i + 1) * n] for i, G in enumerate(Gs)]


def _projection_checks(rng, tighten, configs=4):
    worst, worst_norm = 0.0, 0.0
    for trial in range(configs):
        k = 2 + trial % 2
        comps = [(0.4, 1.0), (0.15, 1.0), (0.06, 0.5)][:k]
        spec = KernelSpec.finite([GaussianKernel(s, w) for s, w in comps])
        pts = LandmarkSet(rng.uniform(0.1, 0.9, (5, 2)))
        v = rng.standard_normal((5, 2))
        got = project_scales(spec, v, pts)
        ref = qp_split(pts.points, comps, v)
        for a, b in zip(got, ref):
            worst = max(worst, np.max(np.abs(a - b)) / np.max(np.abs(v)))
        p = solve_momentum(spec, v, pts)
        total = rkhs_norm(spec, p)
        worst_norm = max(worst_norm, abs(np.sum(scale_norms(spec, p)) - total) / total)
    return [_max("projection_vs_qp", worst, 1e-7, tighten), _max("projection_norm_identity", worst_norm, 1e-9, tighten)]


# ---- semidirect reconstructions and the scale flow ----


def _bump(cx, cy, s, amp, om):
    def f(t, x, y):
        e = amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))
        return e * np.cos(om * t), e * np.sin(om * t + 0.3)
    return f


DIAGRAM_FIELDS = (_bump(0.5, 0.5, 0.25, 0.25, 8.0), _bump(0.45, 0.55, 0.15, 0.2, 10.4), _bump(0.55, 0.45, 0.12, 0.15, 12.8))


def diagram_decay(n_scales, ordering, grid_n=32, steps=(16, 32, 64), fns=DIAGRAM_FIELDS):
    """Diagram residuals for halving time steps; returns (residuals, ratios)."""
    g = Grid2.unit_square(grid_n)
    res = []
    for M in steps:
        paths = [FlowPath.from_function(g, M, f) for f in fns[:n_scales]]
        if ordering == COARSE_LAST:
            paths = paths[::-1]
        res.append(diagram_residual(ScaleTuple(tuple(paths), ordering)))
    return res, [res[i] / res[i + 1] for i in range(len(res) - 1)]


def _diagram_checks():
    out = []
    for ordering in (COARSE_LAST, COARSE_FIRST):
        _, ratios = diagram_decay(2, ordering)
        out.append(Check(f"diagram_decay_{ordering}_16_32", ratios[0], "range", 1.6, 2.6))
        out.append(Check(f"diagram_decay_{ordering}_32_64", ratios[1], "range", 1.6, 2.6))
    return out


def scale_bundle_field(s, t, x, y, amp=0.8, omega=2.0, kappa=8.0):
    """Smooth synthetic v_s(t) vanishing on the boundary of the unit square."""
    b = amp * np.sin(np.pi * x) * np.sin(np.pi * y)
    return b * np.cos(omega * t + kappa * s + y), b * np.sin(omega * t - kappa * s + x)


def scale_flow_decay(grid_n=32, pairs=((8, 16), (16, 32))):
    g = Grid2.unit_square(grid_n)
    d = [scale_flow(ScaleBundle.from_function(g, S, M, scale_bundle_field, TRAPEZOID)).sup_distance for S, M in pairs]
    return d, [d[i] / d[i + 1] for i in range(len(d) - 1)]


def _scale_checks(tighten):
    _, ratios = scale_flow_decay()
    g = Grid2.unit_square(32)
    bundle = ScaleBundle.from_function(g, 8, 16, scale_bundle_field, TRAPEZOID)
    return [
        Check("scale_flow_decay_8_16", ratios[0], "min", lo=1.6),
        _max("time_scale_compatibility", compatibility_residual(bundle), 0.25, tighten),
    ]


# ---- sampling map on polynomial bundles ----


class _Poly:
    """Polynomial in (x, y), coefficient c[i, j] of x^i y^j."""

    def __init__(self, c):
        self.c = np.atleast_2d(np.asarray(c, dtype=float))

    def __add__(self, o):
        n = max(self.c.shape[0], o.c.shape[0]), max(self.c.shape[1], o.c.shape[1])
        a = np.zeros(n)
        a[: self.c.shape[0], : self.c.shape[1]] += self.c
        a[: o.c.shape[0], : o.c.shape[1]] += o.c
        return _Poly(a)

    def __mul__(self, o):
        if not isinstance(o, _Poly):
            return _Poly(self.c * o)
        a = np.zeros((self.c.shape[0] + o.c.shape[0] - 1, self.c.shape[1] + o.c.shape[1] - 1))
        for i, j in zip(*np.nonzero(self.c)):
            a[i : i + o.c.shape[0], j : j + o.c.shape[1]] += self.c[i, j] * o.c
        return _Poly(a)

    def d(self, axis):
        return _Poly(npoly.polyder(self.c, axis=axis)) if self.c.shape[axis] > 1 else _Poly([[0.0]])

    def __call__(self, x, y):
        return npoly.polyval2d(x, y, self.c)


def _mono(coef, i, j):
    c = np.zeros((i + 1, j + 1))
    c[i, j] = coef
    return _Poly(c)


def _vbracket(u, v):
    """[u, v] = Du.v - Dv.u for pairs of polynomials."""
    return tuple(u[a].d(0) * v[0] + u[a].d(1) * v[1] + (v[a].d(0) * u[0] + v[a].d(1) * u[1]) * -1.0 for a in range(2))


# s-linear test fields: (constant part, s-coefficient part) per component
_U = (
    (_mono(1, 3, 0) + _mono(1, 0, 1), _mono(-2, 1, 1)),
    (_mono(1, 2, 0), _mono(1, 1, 2)),
)
_V = (
    (_mono(1, 0, 3) + _mono(1, 1, 1), _mono(-1, 0, 3)),
    (_mono(-1, 1, 2), _mono(1, 3, 0) + _mono(1, 0, 0)),
)


def _bin_integral(F, a, b):
    return tuple(c0 * (b - a) + c1 * (0.5 * (b * b - a * a)) for c0, c1 in F)


def _poly_bundle_fn(F):
    def f(s, t, x, y):
        return tuple(c0(x, y) + s * c1(x, y) for c0, c1 in F)
    return f


def sampling_decay(partition=(0.0, 0.25, 0.5, 0.75, 1.0), sizes=(17, 33, 65), nodes=64):
    """Residual of the sampled continuum bracket against the exact bracket of the bins."""
    exact, su, sv = [], None, None
    zero = (_Poly([[0.0]]), _Poly([[0.0]]))
    su, sv = zero, zero
    for a, b in zip(partition[:-1], partition[1:]):
        pu, pv = _bin_integral(_U, a, b), _bin_integral(_V, a, b)
        terms = [_vbracket(pu, sv), _vbracket(su, pv), _vbracket(pu, pv)]
        exact.append(tuple(terms[0][k] + terms[1][k] + terms[2][k] for k in range(2)))
        su = tuple(su[k] + pu[k] for k in range(2))
        sv = tuple(sv[k] + pv[k] for k in range(2))
    errs = []
    for n in sizes:
        g = Grid2.unit_square(n)
        x, y = g.nodes()[..., 0], g.nodes()[..., 1]
        bu = ScaleBundle.from_function(g, nodes, 1, _poly_bundle_fn(_U))
        bv = ScaleBundle.from_function(g, nodes, 1, _poly_bundle_fn(_V))
        lhs = sampling_map(continuum_bracket(bu, bv), list(partition))
        err = 0.0
        for k, e in enumerate(exact):
            want = np.stack([e[0](x, y), e[1](x, y)], -1)
            err = max(err, float(np.max(np.abs(lhs.paths[k].velocities - want))))
        errs.append(err)
    return errs, [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]


def _sampling_checks(rng):
    _, ratios = sampling_decay()
    g = Grid2.unit_square(9)
    bu = ScaleBundle(g, rng.standard_normal((16, 3) + g.shape + (2,)))
    part = [0.0, 0.25, 0.5, 0.75, 1.0]
    summed = sampling_map(bu, part).total().velocities
    gap = float(np.max(np.abs(summed - binned_total(bu, part))))
    return [
        Check("sampling_hom_decay_17_33", ratios[0], "min", lo=3.0),
        Check("sampling_hom_decay_33_65", ratios[1], "min", lo=3.0),
        Check("sampling_total_bit_exact", gap, "max", hi=0.0),
    ]


# ---- matching energies ----


def random_landmark_problem(rng, n=3, comps=((0.25, 1.0), (0.08, 1.0)), steps=10, formulation=SUM_OF_KERNELS):
    src = rng.uniform(0.25, 0.75, (n, 2))
    while np.min(np.linalg.norm(src[:, None] - src[None] + 10 * np.eye(n)[..., None], axis=-1)) < 0.05:
        src = rng.uniform(0.25, 0.75, (n, 2))
    tgt = src + 0.05 * rng.standard_normal((n, 2))
    spec = KernelSpec.finite([GaussianKernel(s, w) for s, w in comps])
    return MatchingProblem(LandmarkSet(src), LandmarkSet(tgt), spec, formulation, time_steps=steps)


def gradient_fd_error(problem, control, step=1e-6):
    """Relative gap between the reverse-mode gradient and central differences."""
    P = control.momenta
    g = lm.gradient(problem.kernel, problem.source.points, problem.target.points, P,
                    problem.per_scale, problem.integrator, problem.data_weight)
    fd = np.zeros_like(P)
    flat, fdf = P.reshape(-1), fd.reshape(-1)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = step
        hi = energy(problem, Control((flat + e).reshape(P.shape))).total
        lo = energy(problem, Control((flat - e).reshape(P.shape))).total
        fdf[i] = (hi - lo) / (2 * step)
    return float(np.linalg.norm(g - fd) / np.linalg.norm(fd))


def _energy_checks(rng, tighten):
    out = []
    worst = 0.0
    for _ in range(3):
        pb = random_landmark_problem(rng)
        c = Control(0.3 * rng.standard_normal(pb.zero_control().momenta.shape))
        worst = max(worst, gradient_fd_error(pb, c))
    out.append(_max("gradient_vs_central_differences", worst, 1e-5, tighten))

    pb = random_landmark_problem(rng, n=6)
    c = Control(0.3 * rng.standard_normal(pb.zero_control().momenta.shape))
    e_sum = energy(pb, c).total
    sim = pb.with_formulation(SIMULTANEOUS)
    e_sim = energy(sim, split_control(c, sim.n_groups)).total
    out.append(_max("simultaneous_vs_sum_energy", abs(e_sim - e_sum) / abs(e_sum), 1e-8, tighten))

    cont = KernelSpec.continuum(0.0, 1.0, 16, 0.05, 0.3)
    pc = MatchingProblem(pb.source, pb.target, cont, INTEGRAL_KERNEL, time_steps=pb.time_steps)
    binned = pb.with_formulation(SUM_OF_KERNELS, cont.binned([0.0, 0.25, 0.5, 0.75, 1.0]))
    ea, eb = energy(pc, c), energy(binned, c)
    gap = max(abs(ea.total - eb.total), abs(ea.regularization - eb.regularization), abs(ea.data - eb.data))
    out.append(Check("continuum_binned_bit_exact", gap, "max", hi=0.0))
    return out


def run_checks(seed=0, tighten=1.0, oracle_tuples=200) -> VerifyReport:
    """The full suite; ``tighten`` divides every absolute threshold."""
    rng = np.random.default_rng(seed)
    rep = VerifyReport()
    rep.extend(_bracket_checks(tighten))
    rep.extend(_flow_checks(tighten))
    rep.extend(_projection_checks(rng, tighten))
    rep.extend(oracle_checks(rng, oracle_tuples, tighten=tighten))
    rep.extend(_diagram_checks())
    rep.extend(_scale_checks(tighten))
    rep.extend(_sampling_checks(rng))
    rep.extend(_energy_checks(rng, tighten))
    return rep


def run_oracle(seed=0, tuples=1000, tighten=1.0) -> VerifyReport:
    rep = VerifyReport()
    rep.extend(oracle_checks(np.random.default_rng(seed), tuples, tighten=tighten))
    return rep
