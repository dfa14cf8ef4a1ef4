"""Finite-cutoff laboratory for the quartic rank-3 tensor field theory."""

from .params import DomainError, Lattice, ModelParams

__all__ = ["DomainError", "Lattice", "ModelParams"]
__version__ = "0.1.0"
