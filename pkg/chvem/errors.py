from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from chvem.timestepper import NewtonReport


class ChvemError(Exception):
    """Base class for all solver errors"""

    pass


class MeshError(ChvemError):
    """Invalid mesh input"""

    pass


class MeshParseError(MeshError):
    """Mesh stream could not be parsed in the declared format"""

    pass


class MeshTopologyError(MeshError):
    """Non-manifold edge, out of range vertex index or self-intersecting cell"""

    pass


class MeshOrientationError(MeshError):
    """Cell loop with zero signed area"""

    pass


class GeometryError(ChvemError):
    """Degenerate element: singular projector system or mass matrix"""

    pass


class ConfigError(ChvemError):
    """Run configuration failed validation"""

    pass


class ExpressionError(ConfigError):
    """Initial-datum expression could not be parsed or evaluated"""

    pass


class SolverError(ChvemError):
    """Nonlinear or linear solve failure"""

    pass


class LinearSolverError(SolverError):
    """Sparse factorization or Krylov iteration broke down"""

    pass


class NewtonConvergenceError(SolverError):
    """Newton iteration did not reach the tolerance"""

    def __init__(self, message: str, report: "NewtonReport"):
        super().__init__(message)
        self.report = report


class NoInterfaceError(ChvemError):
    """The sampled field has no sign change at the requested level"""

    pass
