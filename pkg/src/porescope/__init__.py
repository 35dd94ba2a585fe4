"""porescope: image-based pore-scale flow analysis on voxel volumes."""

__version__ = "0.1.0"

from .errors import PorescopeError
from .props import DARCY_M2, FluidProps, darcy_to_m2, m2_to_darcy

__all__ = [
    "__version__",
    "PorescopeError",
    "FluidProps",
    "DARCY_M2",
    "darcy_to_m2",
    "m2_to_darcy",
]
