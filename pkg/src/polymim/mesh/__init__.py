from .build import PolyMesh, build_from_polygons, build_supermesh
from .generators import gen_cubed_sphere, gen_hex_icos
from .fileio import read_pmesh, write_pmesh

__all__ = [
    "PolyMesh",
    "build_from_polygons",
    "build_supermesh",
    "gen_cubed_sphere",
    "gen_hex_icos",
    "read_pmesh",
    "write_pmesh",
]
