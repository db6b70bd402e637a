"""Compatible compound finite elements on polygonal spherical meshes.

Primal cells (hexagons/pentagons or cubed-sphere quads) carry piecewise
constants, edge fluxes and vertex nodal values; the dual mesh carries the
rotated counterparts.  Both families are built on a shared triangular
supermesh, which makes the discrete div/grad/curl relations hold exactly
and supplies mimetic building blocks for a rotating shallow-water model.
"""

__version__ = "0.1.0"

from .errors import (
    AdvectionCflError,
    ConfigError,
    ElementConstructionError,
    LumpingError,
    MeshGeometryError,
    MeshResourceError,
    SolverError,
)

__all__ = [
    "AdvectionCflError",
    "ConfigError",
    "ElementConstructionError",
    "LumpingError",
    "MeshGeometryError",
    "MeshResourceError",
    "SolverError",
    "__version__",
]
