"""Soft actor-critic policy provider for the shielded manipulator stack."""

from .sac import SacAgent, SacConfig

__all__ = ["SacAgent", "SacConfig"]
__version__ = "0.1.0"
