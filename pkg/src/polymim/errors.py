"""Exception types shared across the package."""


class PolymimError(Exception):
    """Base class for all package-specific errors."""


class MeshGeometryError(PolymimError):
    """Mesh geometry is inconsistent (bad crossing, orientation, area...)."""


class MeshResourceError(PolymimError):
    """Requested mesh exceeds the configured size budget."""


class ElementConstructionError(PolymimError):
    """A local element solve failed (singular or ill-conditioned cell)."""


class LumpingError(PolymimError):
    """A diagonal-approximation probe produced a vanishing response."""


class SolverError(PolymimError):
    """An iterative solve diverged or failed to reach its tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class AdvectionCflError(PolymimError):
    """Per-cell outflow exceeds the cell area within one step."""


class StateValidityError(PolymimError):
    """Model state contains non-finite values."""


class ConfigError(PolymimError):
    """Malformed run configuration."""


class CacheError(PolymimError):
    """Operator archive is unreadable or built for a different mesh."""
