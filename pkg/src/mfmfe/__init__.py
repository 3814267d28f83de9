"""Multipoint flux mixed finite elements of arbitrary order on quads and hexes."""
from .quadrature import gauss_lobatto_rule, gauss_rule, tensor_rule
from .mesh import Mesh, example1_mesh, example2_mesh, refine_uniform, structured_mesh
from .refbasis import build_nodal_basis, build_pressure_basis, build_rt_basis
from .solver import solve_mfmfe, solve_rt
from .postprocess import postprocess
from .verify import error_norms, example1_case, example2_case

__version__ = "0.1.0"

__all__ = [
    "gauss_lobatto_rule",
    "gauss_rule",
    "tensor_rule",
    "Mesh",
    "example1_mesh",
    "example2_mesh",
    "refine_uniform",
    "structured_mesh",
    "build_nodal_basis",
    "build_pressure_basis",
    "build_rt_basis",
    "solve_mfmfe",
    "solve_rt",
    "postprocess",
    "error_norms",
    "example1_case",
    "example2_case",
]
