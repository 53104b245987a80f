"""Multi-scale diffeomorphic registration with per-scale decomposition."""
__version__ = "0.1.0"

from ._backend import NAME as backend
from .fields import Grid2, LandmarkSet, ScalarField, VectorField, interpolate, jacobian, lie_bracket, integrate_scale
from .flows import Diffeomorphism, FlowPath, TimeIntegrator, adjoint_action, compose, integrate_flow, inverse_flow
from .kernels import GaussianKernel, KernelSpec, Momentum, apply_kernel, kernel_eval, project_scales, solve_momentum
