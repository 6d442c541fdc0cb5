"""Hybrid High-Order solver for the power-law Brinkman problem on polygonal meshes."""

from .mesh import Mesh, MeshError, generate_cartesian, generate_triangular, hexagonal_mesh, load_mesh
from .system import BrinkmanData, BrinkmanSystem, Discretization, NewtonOptions, newton_solve
from .harness import ManufacturedCase, StudyConfig, build_case, run_study

__all__ = [
    "BrinkmanData",
    "BrinkmanSystem",
    "Discretization",
    "ManufacturedCase",
    "Mesh",
    "MeshError",
    "NewtonOptions",
    "StudyConfig",
    "build_case",
    "generate_cartesian",
    "generate_triangular",
    "hexagonal_mesh",
    "load_mesh",
    "newton_solve",
    "run_study",
]

__version__ = "0.1.0"
