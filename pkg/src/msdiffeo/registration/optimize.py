"""Quasi-Newton descent with backtracking; the accepted energies never increase."""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .energy import energy, gradient
from .problem import SDP_FORMS, SIMULTANEOUS, Control, MatchingProblem

LOG_COLUMNS = ("iter", "total", "reg", "data", "step", "grad_norm")


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 200
    step_init: float = 1.0
    backtrack: float = 0.5
    armijo: float = 1e-4
    grad_tol: float = 1e-8
    rel_tol: float = 1e-12
    memory: int = 10
    max_backtracks: int = 50

    def __post_init__(self):
        if self.max_iters < 0 or self.memory < 1 or self.max_backtracks < 1:
            raise ValueError("iteration counts must be positive")
        if not (0 < self.backtrack < 1 and 0 < self.armijo < 1):
            raise ValueError("need 0 < backtrack < 1 and 0 < armijo < 1")
        if not (self.step_init > 0 and self.grad_tol >= 0 and self.rel_tol >= 0):
            raise ValueError("step and tolerances must be positive")


@dataclass
class OptimizeResult:
    control: Control
    energy: object
    history: list = field(default_factory=list)
    converged: bool = False
    message: str = ""

    @property
    def iterations(self):
        return len(self.history) - 1


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def optimize(problem: MatchingProblem, config: OptimizerConfig = OptimizerConfig(), control0: Control | None = None):
    """Minimise the problem's energy from ``control0`` (zero by default).

    Semidirect formulations are optimised through the simultaneous form,
    which has the same control and regulariser; the returned energies are
    those of the requested formulation.
    """
    target = problem
    if problem.formulation in SDP_FORMS:
        problem = problem.with_formulation(SIMULTANEOUS)
    ctrl = problem.zero_control() if control0 is None else control0
    x = ctrl.flat()

    def fg(v):
        c = ctrl.like(v)
        e = energy(problem, c)
        if not np.isfinite(e.total):
            raise FloatingPointError("energy is not finite")
        return e, gradient(problem, c).flat()

    e, g = fg(x)
    gn = float(np.linalg.norm(g))
    history = [(0, e.total, e.regularization, e.data, 0.0, gn)]
    pairs = deque(maxlen=config.memory)
    converged, message = False, "max_iters reached"
    for it in range(1, config.max_iters + 1):
        if gn <= config.grad_tol:
            converged, message = True, "gradient below tolerance"
            break
        d = _two_loop(g, list(pairs))
        slope = float(np.dot(g, d))
        if not pairs or slope >= 0:
            pairs.clear()
            d = -g * (config.step_init / max(gn, 1.0))
            slope = float(np.dot(g, d))
        step = 1.0
        accepted = False
        for _ in range(config.max_backtracks):
            xn = x + step * d
            try:
                en, gn_vec = fg(xn)
            except FloatingPointError:
                step *= config.backtrack
                continue
            if en.total <= e.total + config.armijo * step * slope:
                accepted = True
                break
            step *= config.backtrack
        if not accepted:
            message = "line search failed"
            converged = gn <= 10 * config.grad_tol
            break
        s, y = xn - x, gn_vec - g
        sy = float(np.dot(s, y))
        if sy > 1e-12 * float(np.dot(y, y)):
            pairs.append((s, y, 1.0 / sy))
        rel = abs(e.total - en.total) / max(abs(e.total), 1e-300)
        x, e, g = xn, en, gn_vec
        gn = float(np.linalg.norm(g))
        history.append((it, e.total, e.regularization, e.data, step, gn))
        if rel <= config.rel_tol:
            converged, message = True, "relative energy change below tolerance"
            break
    else:
        if gn <= config.grad_tol:
            converged, message = True, "gradient below tolerance"
    best = ctrl.like(x)
    if not converged:
        warnings.warn(f"optimizer stopped without converging: {message}", stacklevel=2)
    final = energy(target, best) if target is not problem else e
    return OptimizeResult(best, final, history, converged, message)
