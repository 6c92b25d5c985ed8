"""Discrete weak KAM theory and cohomology forcing on tori."""

from .action import ActionKernel, SpatialGrid, build_kernel, grid_for
from .aubry import aubry_set, mane_set, mather_set_approx, static_classes
from .errors import KamError, NegativeResult, NoConnectionError, ObstructionError
from .forcing import KernelFactory, diffusion_chain, forcing_step, twist_forcing_scan, verify
from .model import LagrangianModel, builtin_model, cover_model, expression_model
from .pseudograph import Pseudograph
from .semiconcave import GridFunction
from .weakkam import Tolerances, alpha, conjugate_pair, truncated_barrier, weak_kam_solve

__version__ = "0.1.0"

__all__ = [
    "ActionKernel", "SpatialGrid", "build_kernel", "grid_for",
    "aubry_set", "mane_set", "mather_set_approx", "static_classes",
    "KamError", "NegativeResult", "NoConnectionError", "ObstructionError",
    "KernelFactory", "diffusion_chain", "forcing_step", "twist_forcing_scan", "verify",
    "LagrangianModel", "builtin_model", "cover_model", "expression_model",
    "Pseudograph", "GridFunction",
    "Tolerances", "alpha", "conjugate_pair", "truncated_barrier", "weak_kam_solve",
]
