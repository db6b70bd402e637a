"""`pmesh v1` mesh container.

Layout::

    pmesh v1\n
    family <name>\n
    level <int>\n
    radius <repr-float>\n
    counts <nverts> <ncells> <ncellrefs>\n
    data\n
    <verts: nverts*3 little-endian float64>
    <cell_off: ncells+1 little-endian int32>
    <cell_verts: ncellrefs little-endian int32>

Only the canonical inputs are stored; edges, dual mesh and supermesh are
rebuilt deterministically on read, so a write/read/write cycle is
byte-identical.
"""

import hashlib

import numpy as np

from ..errors import MeshGeometryError
from .build import build_from_polygons, build_supermesh

MAGIC = b"pmesh v1\n"


def write_pmesh(mesh, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"family {mesh.family}\n".encode())
        fh.write(f"level {mesh.level}\n".encode())
        fh.write(f"radius {mesh.radius!r}\n".encode())
        fh.write(f"counts {mesh.nverts} {mesh.ncells} {len(mesh.cell_verts)}\n".encode())
        fh.write(b"data\n")
        fh.write(np.ascontiguousarray(mesh.unit_verts, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(mesh.cell_off, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(mesh.cell_verts, dtype="<i4").tobytes())


def read_pmesh(path):
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise MeshGeometryError(f"{path}: not a pmesh v1 file")
        hdr = {}
        while True:
            line = fh.readline().decode()
            if line == "data\n":
                break
            if not line:
                raise MeshGeometryError(f"{path}: truncated header")
            key, _, val = line.rstrip("\n").partition(" ")
            hdr[key] = val
        try:
            nverts = int(hdr["counts"].split()[0])
            ncells = int(hdr["counts"].split()[1])
            nrefs = int(hdr["counts"].split()[2])
            radius = float(hdr["radius"])
            level = int(hdr["level"])
        except (KeyError, ValueError, IndexError) as exc:
            raise MeshGeometryError(f"{path}: malformed header") from exc
        verts = np.frombuffer(fh.read(nverts * 3 * 8), dtype="<f8").reshape(nverts, 3)
        cell_off = np.frombuffer(fh.read((ncells + 1) * 4), dtype="<i4").astype(np.int64)
        cell_verts = np.frombuffer(fh.read(nrefs * 4), dtype="<i4").astype(np.int64)
    if len(cell_verts) != nrefs or len(cell_off) != ncells + 1:
        raise MeshGeometryError(f"{path}: truncated data block")
    cells = [cell_verts[cell_off[i]:cell_off[i + 1]] for i in range(ncells)]
    mesh = build_from_polygons(verts, cells, family=hdr.get("family", "custom"),
                               level=level, radius=radius)
    return build_supermesh(mesh)


def mesh_hash(mesh):
    """Stable content hash used to key operator caches."""
    h = hashlib.sha256()
    h.update(f"{mesh.family} {mesh.level} {mesh.radius!r}".encode())
    for arr in mesh.content_arrays():
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
