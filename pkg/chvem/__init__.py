from .assembly import GlobalSystem, build_system
from .mesh import PolygonalMesh, generate_quad_mesh, generate_tri_mesh, load_mesh
from .timestepper import CahnHilliardSolver, Schedule, StepParameters

__all__ = [
    "CahnHilliardSolver",
    "GlobalSystem",
    "PolygonalMesh",
    "Schedule",
    "StepParameters",
    "build_system",
    "generate_quad_mesh",
    "generate_tri_mesh",
    "load_mesh",
]
