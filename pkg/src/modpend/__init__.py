"""modpend: classical and quantum simulations of the atomic modulated pendulum."""

from .units import ModelParams, PhysicalSetup

__all__ = ["ModelParams", "PhysicalSetup"]
__version__ = "0.1.0"
