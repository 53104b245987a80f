"""Evaluate all equivalent formulations at the matching controls and tabulate the gaps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..kernels import CONTINUUM
from ..semidirect.reconstruct import diagram_residual, reconstruct
from .energy import energy, scale_tuple, trajectory
from .problem import (
    KERNEL_BUNDLE,
    SDP_COARSE_FIRST,
    SDP_COARSE_LAST,
    SIMULTANEOUS,
    SUM_OF_KERNELS,
    TOTAL_FORMS,
    Control,
)

REPORT_COLUMNS = ("formulation", "kernel", "total", "reg", "data", "rel_delta", "sup_distance", "bit_exact")


@dataclass(frozen=True)
class EquivalenceRow:
    formulation: str
    kernel: str
    total: float
    reg: float
    data: float
    rel_delta: float
    sup_distance: float
    bit_exact: bool

    def as_tuple(self):
        return tuple(getattr(self, c) for c in REPORT_COLUMNS)


def split_control(control: Control, n_groups) -> Control:
    """The minimal-norm per-scale control for a total momentum: every group carries the same p."""
    if control.n_groups != 1:
        raise ValueError("expected a single-momentum control")
    return Control(np.repeat(control.momenta, n_groups, axis=1))


def _final_points(problem, control):
    return trajectory(problem, control)[-1] if problem.is_landmarks else None


def _row(name, problem, control, ref, partner=None, sup=0.0):
    e = energy(problem, control)
    delta = abs(e.total - ref.total) / max(abs(ref.total), 1e-300)
    exact = partner is not None and e.total == partner.total and e.regularization == partner.regularization
    return EquivalenceRow(name, problem.kernel.describe(), e.total, e.regularization, e.data, delta, sup, exact), e


def equivalence_report(problem, control: Control, partition=None) -> list:
    """Rows for every formulation equivalent to ``problem`` at ``control``.

    ``problem`` must be a total formulation (sum of kernels, or integral
    kernel for a continuum). Continuum kernels are also binned on
    ``partition`` (four uniform bins by default).
    """
    if problem.formulation not in TOTAL_FORMS:
        raise ValueError("equivalence report starts from a sum-of-kernels or integral-kernel control")
    ref = energy(problem, control)
    rows = [EquivalenceRow(problem.formulation, problem.kernel.describe(), ref.total, ref.regularization,
                           ref.data, 0.0, 0.0, False)]
    q_ref = _final_points(problem, control)

    def per_scale_rows(kernel, ref_energy, tag):
        n = kernel.n_scales
        split = split_control(control, n)
        sim = problem.with_formulation(SIMULTANEOUS if tag == "finite" else KERNEL_BUNDLE, kernel)
        r, _ = _row(sim.formulation, sim, split, ref_energy, sup=_point_gap(sim, split, q_ref))
        out = [r]
        if tag == "finite":
            for form in (SDP_COARSE_FIRST, SDP_COARSE_LAST):
                sp = problem.with_formulation(form, kernel)
                tup = scale_tuple(sp, split)
                res = diagram_residual(tup, sp.integrator, reconstruct(tup, sp.integrator))
                r, _ = _row(form, sp, split, ref_energy, sup=res)
                out.append(r)
        return out

    if problem.kernel.mode == CONTINUUM:
        n = 4 if partition is None else len(partition) - 1
        info = problem.kernel.continuum_info
        edges = np.linspace(info["s_min"], info["s_max"], n + 1) if partition is None else np.asarray(partition)
        binned = problem.kernel.binned(edges)
        bundle = per_scale_rows(problem.kernel, ref, "continuum")
        rows.extend(bundle)
        fin = problem.with_formulation(SUM_OF_KERNELS, binned)
        r, _ = _row(SUM_OF_KERNELS, fin, control, ref, partner=ref, sup=_point_gap(fin, control, q_ref))
        rows.append(r)
        bundle_energy = energy(problem.with_formulation(KERNEL_BUNDLE), split_control(control, problem.kernel.n_scales))
        split = split_control(control, binned.n_scales)
        sim = problem.with_formulation(SIMULTANEOUS, binned)
        r, _ = _row(SIMULTANEOUS, sim, split, ref, partner=bundle_energy, sup=_point_gap(sim, split, q_ref))
        rows.append(r)
        for form in (SDP_COARSE_FIRST, SDP_COARSE_LAST):
            sp = problem.with_formulation(form, binned)
            tup = scale_tuple(sp, split)
            r, _ = _row(form, sp, split, ref, sup=diagram_residual(tup, sp.integrator))
            rows.append(r)
    else:
        rows.extend(per_scale_rows(problem.kernel, ref, "finite"))
    return rows


def _point_gap(problem, control, q_ref):
    if q_ref is None:
        return 0.0
    return float(np.max(np.abs(_final_points(problem, control) - q_ref)))
