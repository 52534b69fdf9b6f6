"""Exception types shared across the solver modules."""


class DscflowError(Exception):
    """Base class for all solver errors."""


class InvalidParameter(DscflowError):
    """A mesh generator or config parameter is out of range."""


class OrientationError(DscflowError):
    """A face vector points into its cell (vertex labeling violated)."""


class DegenerateCell(DscflowError):
    """Cell volume below the degeneracy threshold."""


class SingularCell(DscflowError):
    """Node-vector matrix is numerically singular; gamma cannot be built."""


class NonConformingMesh(DscflowError):
    """A quadrilateral face is shared by more than two cells."""


class ZeroDenominator(DscflowError):
    """Interface continuity update has a vanishing denominator."""


class ZeroDiagonal(DscflowError):
    """A one-unknown port or pressure solve has a vanishing coefficient."""


class NonFiniteState(DscflowError):
    """A field value became NaN or Inf during a cycle."""


class NoConvergence(DscflowError):
    """Divergence cleaning exhausted its iteration budget."""

    def __init__(self, message, residual=None, sweeps=None):
        super().__init__(message)
        self.residual = residual
        self.sweeps = sweeps


class ConfigError(DscflowError):
    """Simulation configuration is invalid or inconsistent."""
