"""Lowest-order weak Galerkin solvers for linear elasticity and Biot poroelasticity."""

from .mesh import Mesh, build_structured_mesh, mesh_stats
from .wgfem import PhysicalParams, WgBlocks, WgField, assemble

__version__ = "0.1.0"

__all__ = ["Mesh", "PhysicalParams", "WgBlocks", "WgField", "assemble", "build_structured_mesh", "mesh_stats"]
