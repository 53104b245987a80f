"""``msdiffeo register|decompose|verify|oracle --config FILE [--out DIR] [--seed N]``.

Exit codes: 0 success, 1 invalid configuration or inputs, 2 numerical
failure, 3 a verification check failed.
"""
from __future__ import annotations

import argparse
import os
import shutil
import sys
import tempfile
import warnings
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, load_config
from .fields import Grid2, LandmarkSet
from .flows import integrate_flow
from .kernels import CONTINUUM
from .registration.energy import scale_tuple
from .registration.optimize import LOG_COLUMNS, optimize
from .registration.problem import (
    INTEGRAL_KERNEL,
    KERNEL_BUNDLE,
    SDP_COARSE_FIRST,
    SDP_FORMS,
    SUM_OF_KERNELS,
    TOTAL_FORMS,
    Control,
    MatchingProblem,
)
from .registration.report import REPORT_COLUMNS, EquivalenceRow, equivalence_report, split_control
from .semidirect.reconstruct import COARSE_LAST, diagram_residual, reconstruct
from .semidirect.scale import MIDPOINT, ScaleBundle, scale_flow, scale_segment
from . import verify as verify_mod

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FAIL = 0, 1, 2, 3
DECOMPOSE_COLUMNS = ("scale", "max_displacement", "jac_det_min", "jac_det_max", "diagram_residual",
                     "scale_flow_ab_distance")


class InputError(ConfigError):
    pass


@contextmanager
def output_dir(target):
    """Write into a sibling temp folder, then move it into place in one rename.

    If ``target`` already exists the files are moved in one by one instead.
    """
    target = Path(target).resolve()
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if not target.exists():
        os.rename(tmp, target)
        return
    for f in sorted(tmp.iterdir()):
        os.replace(f, target / f.name)
    tmp.rmdir()


def _require(cfg: RunConfig, key):
    p = cfg.path(key)
    if p is None:
        raise InputError(f"paths.{key} is required for {cfg.command}")
    if not p.exists():
        raise InputError(f"paths.{key}: {p} does not exist")
    return p


def _read_data(path):
    try:
        if str(path).lower().endswith(".pgm"):
            return io.read_pgm(path)
        cols, _ = io.read_table(path)
        if tuple(cols) == ("id", "x", "y"):
            return io.read_landmarks(path)
        if tuple(cols) == ("i", "j", "value"):
            return io.read_image(path)
    except ValueError as e:
        raise InputError(str(e)) from e
    raise InputError(f"{path}: expected id,x,y landmarks, an i,j,value image or a PGM")


def build_problem(cfg: RunConfig, formulation=None) -> MatchingProblem:
    src = _read_data(_require(cfg, "source"))
    tgt = _read_data(_require(cfg, "target"))
    grid = Grid2.unit_square(cfg["grid.size"]) if isinstance(src, LandmarkSet) else None
    try:
        return MatchingProblem(
            src, tgt, cfg.kernel_spec(), formulation or cfg["formulation"], cfg["data.sigma2"],
            cfg["time.steps"], grid, cfg.integrator(),
        )
    except (ValueError, TypeError) as e:
        raise InputError(str(e)) from e


def _header(cfg):
    return io.header_line(cfg.seed, cfg.command)


def run_register(cfg: RunConfig, out) -> int:
    problem = build_problem(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = optimize(problem, cfg.optimizer())
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    ctrl = result.control
    tup = scale_tuple(problem, ctrl)
    phi = integrate_flow(tup.total(), problem.integrator, with_inverse=True)[-1]
    if problem.formulation in TOTAL_FORMS:
        rows = equivalence_report(problem, ctrl)
    else:
        e = result.energy
        rows = [EquivalenceRow(problem.formulation, problem.kernel.describe(), e.total, e.regularization,
                               e.data, 0.0, 0.0, False)]
    h = _header(cfg)
    with output_dir(out) as d:
        io.write_table(d / "energy_log.csv", LOG_COLUMNS, result.history, h)
        io.write_control(d / "control_final.csv", ctrl.momenta, h)
        io.write_diffeo(d / "phi_final.csv", phi, h)
        io.write_table(d / "equivalence_report.csv", REPORT_COLUMNS, [r.as_tuple() for r in rows], h)
        (d / "run.cfg").write_text(cfg.serialize())
    print(f"register: {result.iterations} iterations, total={result.energy.total:.6g}, "
          f"data={result.energy.data:.6g} ({result.message})")
    return EXIT_OK


def _load_control(cfg, problem):
    p = _require(cfg, "control")
    if p.is_dir():
        p = p / "control_final.csv"
        if not p.exists():
            raise InputError(f"{p.parent} holds no control_final.csv")
    carrier = (len(problem.source),) if problem.is_landmarks else problem.grid.shape
    try:
        momenta = io.read_control(p, carrier)
    except ValueError as e:
        raise InputError(str(e)) from e
    if momenta.shape[0] != problem.time_steps:
        raise InputError(f"control has {momenta.shape[0]} time steps, config says {problem.time_steps}")
    return Control(momenta)


def _per_scale_problem(cfg, problem, control):
    """Per-scale semidirect problem and control; total controls are split across the scales."""
    kernel = problem.kernel
    base = problem
    if kernel.mode == CONTINUUM:
        info = kernel.continuum_info
        kernel = kernel.binned(np.linspace(info["s_min"], info["s_max"], cfg["kernel.bins"] + 1))
        base = problem.with_formulation(SUM_OF_KERNELS, kernel)
    form = cfg["formulation"] if cfg["formulation"] in SDP_FORMS else SDP_COARSE_FIRST
    if control.n_groups == 1:
        control = split_control(control, kernel.n_scales)
    if control.n_groups != kernel.n_scales:
        raise InputError(f"control has {control.n_groups} scale groups, kernel has {kernel.n_scales}")
    return base.with_formulation(form, kernel), control


def _scale_bundle(tup):
    """Midpoint bundle on [0, 1] whose cutoff j/n partial integral is v_1 + ... + v_j (coarse first)."""
    paths = tup.paths[::-1] if tup.ordering == COARSE_LAST else tup.paths
    n = len(paths)
    return ScaleBundle(tup.grid, np.stack([n * p.velocities for p in paths]), MIDPOINT)


def run_decompose(cfg: RunConfig, out) -> int:
    base = build_problem(cfg)
    control = _load_control(cfg, base)
    if base.kernel.mode == CONTINUUM:
        if base.formulation != INTEGRAL_KERNEL:
            raise InputError("decompose a continuum run from its integral-kernel control")
        nodes = base.with_formulation(KERNEL_BUNDLE)
        bundle = _scale_bundle(scale_tuple(nodes, split_control(control, nodes.n_groups)))
    problem, control = _per_scale_problem(cfg, base, control)
    tup = scale_tuple(problem, control)
    if base.kernel.mode != CONTINUUM:
        bundle = _scale_bundle(tup)
    psis = reconstruct(tup, problem.integrator)
    residual = diagram_residual(tup, problem.integrator, psis)
    flow = scale_flow(bundle, integrator=problem.integrator)
    coarse_first = psis[::-1] if tup.ordering == COARSE_LAST else psis
    rows = []
    for k, psi in enumerate(coarse_first, 1):
        det = psi[-1].jacobian_determinant()
        disp = float(np.max(np.abs(psi[-1].displacement())))
        rows.append((k, disp, float(det.min()), float(det.max()), residual, flow.sup_distance))
    h = _header(cfg)
    with output_dir(out) as d:
        for k, psi in enumerate(coarse_first, 1):
            for m, phi in enumerate(psi):
                io.write_diffeo(d / f"psi_scale{k}_t{m}.csv", phi, h)
        for j, eta in enumerate(flow.eta_a):
            io.write_diffeo(d / f"eta_s{j}.csv", eta, h)
        c = flow.cutoffs
        for j in range(1, len(c)):
            seg = scale_segment(flow, c[j - 1], c[j], cfg["decompose.convention"])
            io.write_diffeo(d / f"segment_s{j}.csv", seg, h)
        io.write_table(d / "decomposition_report.csv", DECOMPOSE_COLUMNS, rows, h)
    print(f"decompose: {len(psis)} scales ({problem.formulation}), diagram residual {residual:.3e}, "
          f"scale-flow gap {flow.sup_distance:.3e}")
    return EXIT_OK


def _emit_report(cfg, out, name, report) -> int:
    with output_dir(out) as d:
        io.write_table(d / name, verify_mod.REPORT_COLUMNS, report.rows(), _header(cfg))
    print(report.table())
    failed = [c.name for c in report.checks if not c.passed]
    print(f"{len(report.checks) - len(failed)}/{len(report.checks)} checks passed")
    return EXIT_OK if not failed else EXIT_FAIL


def run_verify(cfg: RunConfig, out) -> int:
    report = verify_mod.run_checks(cfg.seed, cfg["verify.tighten"])
    return _emit_report(cfg, out, "verify_report.csv", report)


def run_oracle(cfg: RunConfig, out) -> int:
    report = verify_mod.run_oracle(cfg.seed, cfg["oracle.tuples"], cfg["verify.tighten"])
    return _emit_report(cfg, out, "oracle_report.csv", report)


COMMANDS = {"register": run_register, "decompose": run_decompose, "verify": run_verify, "oracle": run_oracle}


def parser():
    p = argparse.ArgumentParser(prog="msdiffeo", description="Multi-scale diffeomorphic registration.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key = value run configuration (optional for verify and oracle)")
    p.add_argument("--out", help="output directory (default: paths.output, else ./<command>_out)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if cfg.command not in (None, args.command):
            raise ConfigError(f"config is for '{cfg.command}', not '{args.command}'")
        if args.config is None and args.command in ("register", "decompose"):
            raise ConfigError(f"{args.command} needs --config")
        cfg = cfg.with_values(command=args.command)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must be a 64-bit unsigned integer")
            cfg = cfg.with_values(seed=args.seed)
        out = args.out or cfg.path("output") or Path(f"{args.command}_out")
        return COMMANDS[args.command](cfg, out)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
