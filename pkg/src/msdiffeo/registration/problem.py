"""Matching problems, controls and energy breakdowns."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..fields import Grid2, LandmarkSet, ScalarField
from ..flows import RK4, TimeIntegrator
from ..kernels import CONTINUUM, FINITE, KernelSpec

SUM_OF_KERNELS = "sum_of_kernels"
SIMULTANEOUS = "simultaneous"
SDP_COARSE_LAST = "sdp_coarse_last"
SDP_COARSE_FIRST = "sdp_coarse_first"
INTEGRAL_KERNEL = "integral_kernel"
KERNEL_BUNDLE = "kernel_bundle"

FORMULATIONS = (SUM_OF_KERNELS, SIMULTANEOUS, SDP_COARSE_LAST, SDP_COARSE_FIRST, INTEGRAL_KERNEL, KERNEL_BUNDLE)
# one momentum for the whole kernel, or one per kernel group (scale / quadrature node)
TOTAL_FORMS = (SUM_OF_KERNELS, INTEGRAL_KERNEL)
PER_SCALE_FORMS = (SIMULTANEOUS, SDP_COARSE_LAST, SDP_COARSE_FIRST, KERNEL_BUNDLE)
SDP_FORMS = (SDP_COARSE_LAST, SDP_COARSE_FIRST)


def default_sigma2(diameter, n_points):
    return 1e-2 * diameter**2 / max(n_points, 1)


@dataclass(frozen=True)
class MatchingProblem:
    """Source/target pair with kernel, data weight and time discretisation.

    ``grid`` is the working domain: the image grid, or for landmarks the grid
    used by semidirect reconstructions (unit square 32^2 when omitted).
    """

    source: object
    target: object
    kernel: KernelSpec
    formulation: str = SUM_OF_KERNELS
    sigma2: float | None = None
    time_steps: int = 10
    grid: Grid2 | None = None
    integrator: TimeIntegrator = RK4

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.formulation in (INTEGRAL_KERNEL, KERNEL_BUNDLE) and self.kernel.mode != CONTINUUM:
            raise ValueError(f"{self.formulation} needs a continuum kernel")
        if self.formulation not in (INTEGRAL_KERNEL, KERNEL_BUNDLE) and self.kernel.mode != FINITE:
            raise ValueError(f"{self.formulation} needs a finite kernel")
        if self.time_steps < 1:
            raise ValueError("need at least one time step")
        if isinstance(self.source, LandmarkSet):
            if not isinstance(self.target, LandmarkSet) or len(self.target) != len(self.source):
                raise ValueError("landmark target must match the source size")
            self.source.check_distinct(1.0 if self.grid is None else self.grid.h)
            if self.grid is None:
                object.__setattr__(self, "grid", Grid2.unit_square(32))
        elif isinstance(self.source, ScalarField):
            if not isinstance(self.target, ScalarField):
                raise ValueError("image target must be an image")
            self.source.grid.check_same(self.target.grid)
            object.__setattr__(self, "grid", self.source.grid)
        else:
            raise TypeError("source must be a LandmarkSet or a ScalarField")
        if self.sigma2 is None:
            n = len(self.source) if self.is_landmarks else self.grid.nx * self.grid.ny
            object.__setattr__(self, "sigma2", default_sigma2(self.grid.diameter, n))
        if not self.sigma2 > 0:
            raise ValueError("sigma^2 must be positive")

    @property
    def is_landmarks(self):
        return isinstance(self.source, LandmarkSet)

    @property
    def data_weight(self):
        return 1.0 / (2.0 * self.sigma2)

    @property
    def per_scale(self):
        return self.formulation in PER_SCALE_FORMS

    @property
    def n_groups(self):
        """Momentum groups: 1 for total formulations, else one per kernel group."""
        return self.kernel.n_scales if self.per_scale else 1

    @property
    def dt(self):
        return 1.0 / self.time_steps

    def with_formulation(self, formulation, kernel=None) -> "MatchingProblem":
        return MatchingProblem(
            self.source, self.target, self.kernel if kernel is None else kernel, formulation,
            self.sigma2, self.time_steps, self.grid, self.integrator,
        )

    def zero_control(self) -> "Control":
        carrier = (len(self.source),) if self.is_landmarks else self.grid.shape
        return Control(np.zeros((self.time_steps, self.n_groups) + carrier + (2,)))


@dataclass(frozen=True)
class Control:
    """Momenta per time interval and momentum group.

    Shape (M, G, n, 2) for landmarks, (M, G, nx, ny, 2) for images; groups
    follow the kernel's coarse-to-fine order.
    """

    momenta: np.ndarray

    def __post_init__(self):
        m = np.array(self.momenta, dtype=float)
        if not np.all(np.isfinite(m)):
            raise ValueError("control must be finite")
        m.setflags(write=False)
        object.__setattr__(self, "momenta", m)

    @property
    def steps(self):
        return self.momenta.shape[0]

    @property
    def n_groups(self):
        return self.momenta.shape[1]

    def flat(self):
        return self.momenta.ravel().copy()

    def like(self, flat) -> "Control":
        return Control(np.asarray(flat, dtype=float).reshape(self.momenta.shape))

    def norm(self):
        return float(np.linalg.norm(self.momenta))


@dataclass(frozen=True)
class EnergyBreakdown:
    regularization: float
    data: float
    data_weight: float
    per_scale: tuple = field(default=())

    @property
    def total(self):
        return self.regularization + self.data_weight * self.data

    def as_row(self):
        return dict(total=self.total, reg=self.regularization, data=self.data)
