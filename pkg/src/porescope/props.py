"""Fluid properties and permeability unit conversion."""

from dataclasses import dataclass

#: One darcy in square metres.
DARCY_M2 = 9.869233e-13

# Water as used in the CFD runs; kinematic viscosity quoted at 25 degC.
DEFAULT_DENSITY = 997.0
DEFAULT_DYNAMIC_VISCOSITY = 8.8871e-4
DEFAULT_KINEMATIC_VISCOSITY = 8.93e-7


def m2_to_darcy(k_m2):
    return k_m2 / DARCY_M2


def darcy_to_m2(k_darcy):
    return k_darcy * DARCY_M2


@dataclass(frozen=True)
class FluidProps:
    """Constant fluid properties in SI units.

    The kinematic viscosity is carried separately from ``mu / rho`` because
    the Reynolds number uses a tabulated value that differs slightly from the
    ratio of the simulation constants. The two must agree within
    ``rel_tol``.
    """

    density: float = DEFAULT_DENSITY
    dynamic_viscosity: float = DEFAULT_DYNAMIC_VISCOSITY
    kinematic_viscosity: float = DEFAULT_KINEMATIC_VISCOSITY
    rel_tol: float = 0.005

    def __post_init__(self):
        for name in ("density", "dynamic_viscosity", "kinematic_viscosity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        ratio = self.dynamic_viscosity / self.density
        if abs(ratio - self.kinematic_viscosity) > self.rel_tol * self.kinematic_viscosity:
            raise ValueError(
                f"kinematic_viscosity {self.kinematic_viscosity:g} inconsistent with "
                f"mu/rho = {ratio:g}"
            )

    @classmethod
    def from_dynamic(cls, dynamic_viscosity, density=DEFAULT_DENSITY):
        """Properties with the kinematic viscosity derived as ``mu / rho``."""
        return cls(density, dynamic_viscosity, dynamic_viscosity / density)
