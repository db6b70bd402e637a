"""Primal/dual polygonal spherical meshes and their shared triangular supermesh.

Conventions fixed here and relied on everywhere else:

* Cell vertex cycles are counterclockwise viewed from outside the sphere.
* Each edge stores (cell_left, cell_right, vert_tail, vert_head).  The unit
  tangent t points tail -> head; the edge normal is n = t x k with k the
  outward radial, so n points out of cell_left into cell_right.  cell_left
  is the cell whose cycle traverses the edge tail -> head.
* The dual edge runs from the dual vertex of cell_left to that of
  cell_right, hence its tangent m satisfies n . m > 0.
* Incidence matrices: D2[i, e] = +1 if i is cell_left(e), -1 if cell_right;
  D1[e, j] = +1 if j is vert_head(e), -1 if vert_tail.  The co-derivatives
  are the views Dbar1 = -D2^T and Dbar2 = D1^T, so D2 @ D1 = 0 and
  Dbar2 @ Dbar1 = 0 hold in integer arithmetic.
* Every primal edge is split at its crossing with the dual edge into two
  chords; each cell of n edges is covered by 2n flat triangles
  {corner, crossing, centre}.  Each triangle belongs to exactly one primal
  cell and one dual cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import MeshGeometryError

# supermesh sub-edge id layout, E = number of primal edges:
#   [0, 2E)    type 1, halves of primal edges: 2e = (tail, x_e), 2e+1 = (x_e, head)
#   [2E, 4E)   type 2, halves of dual edges: 2E+2e = (c_left, x_e), 2E+2e+1 = (c_right, x_e)
#   [4E, 6E)   type 3, centre-corner spokes: 4E + cell_off[i] + k = (c_i, v_k of cell i)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _tangent_basis(p):
    """Any orthonormal pair spanning the plane orthogonal to unit vector p."""
    a = np.zeros(3)
    a[np.argmin(np.abs(p))] = 1.0
    t1 = np.cross(p, a)
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(p, t1)


@dataclass
class PolyMesh:
    """Polygonal spherical mesh with dual mesh and triangular supermesh."""

    family: str
    level: int
    radius: float

    # primal topology/geometry
    unit_verts: np.ndarray     # (V, 3) canonical unit-sphere vertex positions
    verts: np.ndarray          # (V, 3) primal vertex positions (radius-scaled)
    cell_verts: np.ndarray     # flat CCW vertex cycles
    cell_off: np.ndarray       # (C+1,) offsets into cell_verts / cell_edges
    cell_edges: np.ndarray     # edge k of cell i joins cycle verts k, k+1
    cell_edge_fwd: np.ndarray  # bool, True when the cell is cell_left of that edge
    edges: np.ndarray          # (E, 4) = (cell_left, cell_right, vert_tail, vert_head)

    # dual mesh
    dual_verts: np.ndarray       # (C, 3) one per primal cell
    dual_cell_cells: np.ndarray  # flat CCW cells around each primal vertex
    dual_cell_off: np.ndarray    # (V+1,)
    dual_cell_edges: np.ndarray  # edge k separates cells k, k+1 of the ring

    # crossings and supermesh (build_supermesh)
    crossings: np.ndarray = None       # (E, 3) on the unit sphere
    node_xyz: np.ndarray = None        # (V+E+C, 3) verts | crossings | dual_verts
    tri_nodes: np.ndarray = None       # (T, 3) CCW supermesh node ids
    tri_cell: np.ndarray = None        # (T,) owning primal cell
    tri_dual: np.ndarray = None        # (T,) owning dual cell (= primal vertex)
    tri_edge: np.ndarray = None        # (T,) primal edge of the crossing node
    tri_area: np.ndarray = None        # (T,)
    tri_normal: np.ndarray = None      # (T, 3) unit facet normals
    tri_subs: np.ndarray = None        # (T, 3) sub-edge ids, cycle order
    tri_sub_o: np.ndarray = None       # (T, 3) +1 when the sub-edge normal leaves T
    sub_pq: np.ndarray = None          # (6E, 2) canonical sub-edge endpoints (nodes)
    sub_len: np.ndarray = None         # (6E,)
    cell_area: np.ndarray = None       # (C,)
    dual_area: np.ndarray = None       # (V,)
    edge_len: np.ndarray = None        # (E,) primal polyline length
    dual_edge_len: np.ndarray = None   # (E,)
    kite_area: np.ndarray = None       # (E,) area of the 4 facets at each edge
    cell_centroid: np.ndarray = None   # (C, 3) area-weighted, not normalised
    dual_centroid: np.ndarray = None   # (V, 3)

    # ring-aligned cell views used by the element construction
    pview: "CellViews" = None
    dview: "CellViews" = None

    @property
    def ncells(self):
        return len(self.dual_verts)

    @property
    def nedges(self):
        return len(self.edges)

    @property
    def nverts(self):
        return len(self.verts)

    def cell_sizes(self):
        return np.diff(self.cell_off)

    def dual_sizes(self):
        return np.diff(self.dual_cell_off)

    def space_dim(self, space):
        return {"V2": self.ncells, "V1": self.nedges, "V0": self.nverts,
                "V^0": self.ncells, "V^1": self.nedges, "V^2": self.nverts}[space]

    def incidence(self):
        """(D1, D2) as integer CSR matrices; Dbar1 = -D2.T, Dbar2 = D1.T."""
        E = self.nedges
        rows = np.repeat(np.arange(E), 2)
        d1 = sp.csr_matrix(
            (np.tile([1, -1], E), (rows, self.edges[:, [3, 2]].ravel())),
            shape=(E, self.nverts), dtype=np.int64)
        d2 = sp.csr_matrix(
            (np.tile([1, -1], E), (self.edges[:, [0, 1]].ravel(), np.repeat(np.arange(E), 2))),
            shape=(self.ncells, E), dtype=np.int64)
        return d1, d2

    def content_arrays(self):
        """Arrays defining the mesh up to deterministic rebuilds (hashing, IO)."""
        return [self.unit_verts, self.cell_off, self.cell_verts]

    def scaled(self, radius):
        """Same mesh on a sphere of the given radius (geometry rescaled)."""
        if radius == self.radius:
            return self
        base = build_from_polygons(self.unit_verts,
                                   _cycles_list(self.cell_off, self.cell_verts),
                                   family=self.family, level=self.level, radius=radius)
        return build_supermesh(base)


@dataclass
class CellViews:
    """Ring-aligned supermesh indices for every cell of one family.

    The ring of cell c alternates corner and crossing nodes
    [p0, x0, p1, x1, ...]; triangle r is (ring_r, ring_{r+1}, centre).
    All arrays are flat with ``off`` giving per-cell extents (ring length
    2n); ``edge_ids``/``bc`` have per-cell extent n.
    """

    off: np.ndarray        # (C+1,) offsets in units of ring positions (2n)
    ring_nodes: np.ndarray
    center_nodes: np.ndarray  # (C,)
    tri_ids: np.ndarray    # triangle r of the ring
    bnd_subs: np.ndarray   # boundary sub-edge of triangle r
    spoke_subs: np.ndarray  # spoke (centre, ring_r)
    edge_ids: np.ndarray   # mesh edge of ring segment pair (2k, 2k+1)
    bc_flux: np.ndarray    # per ring position: basis flux of the owning edge


def _cycles_list(off, flat):
    return [flat[off[i]:off[i + 1]] for i in range(len(off) - 1)]


def build_from_polygons(verts, cells, family="custom", level=-1, radius=1.0):
    """Assemble primal+dual topology from vertex positions and cell cycles.

    ``verts`` are positions on the unit sphere (kept bit-exact, so file
    round trips are byte-identical); ``cells`` is a sequence of vertex-index
    cycles.  Cycles may have either orientation on input; they are stored
    counterclockwise as seen from outside.
    """
    verts = np.array(verts, dtype=np.float64)
    nrm = np.linalg.norm(verts, axis=1)
    if (np.abs(nrm - 1.0) > 1e-9).any():
        raise MeshGeometryError("vertex positions must lie on the unit sphere")
    ncells = len(cells)
    nverts = len(verts)

    cyc = []
    for ci, cell in enumerate(cells):
        cell = np.asarray(cell, dtype=np.int64)
        if len(cell) < 3 or len(np.unique(cell)) != len(cell):
            raise MeshGeometryError(f"cell {ci}: degenerate vertex cycle")
        p = verts[cell]
        area_vec = np.cross(p, np.roll(p, -1, axis=0)).sum(axis=0)
        if area_vec @ p.mean(axis=0) < 0:
            cell = cell[::-1]
        cyc.append(cell)

    # edge table; first traversal in cycle order defines (tail, head) = cell_left
    edge_id = {}
    edges = []
    cell_edges = []
    cell_edge_fwd = []
    for ci, cell in enumerate(cyc):
        for k in range(len(cell)):
            a, b = int(cell[k]), int(cell[(k + 1) % len(cell)])
            key = (a, b) if a < b else (b, a)
            if key not in edge_id:
                edge_id[key] = len(edges)
                edges.append([ci, -1, a, b])
                cell_edges.append(edge_id[key])
                cell_edge_fwd.append(True)
            else:
                e = edge_id[key]
                if edges[e][1] != -1 or (edges[e][2], edges[e][3]) != (b, a):
                    raise MeshGeometryError(f"edge {e}: inconsistent traversal at cell {ci}")
                edges[e][1] = ci
                cell_edges.append(e)
                cell_edge_fwd.append(False)
    edges = np.asarray(edges, dtype=np.int64)
    if (edges[:, 1] < 0).any():
        bad = int(np.nonzero(edges[:, 1] < 0)[0][0])
        raise MeshGeometryError(f"edge {bad}: only one adjacent cell (surface not closed)")
    nedges = len(edges)
    if ncells - nedges + nverts != 2:
        raise MeshGeometryError(
            f"Euler check failed: C-E+V = {ncells}-{nedges}+{nverts} != 2")

    cell_off = np.zeros(ncells + 1, dtype=np.int64)
    cell_off[1:] = np.cumsum([len(c) for c in cyc])
    cell_verts = np.concatenate(cyc)

    dual_verts = np.zeros((ncells, 3))
    for ci, cell in enumerate(cyc):
        dual_verts[ci] = verts[cell].mean(axis=0)
    dual_verts = _unit(dual_verts)

    # rings of cells around each primal vertex, CCW from outside
    v_cells = [[] for _ in range(nverts)]
    for ci, cell in enumerate(cyc):
        for v in cell:
            v_cells[v].append(ci)
    v_edges = [[] for _ in range(nverts)]
    for e, (_, _, a, b) in enumerate(edges):
        v_edges[a].append(e)
        v_edges[b].append(e)

    dual_cell_cells = []
    dual_cell_edges = []
    dual_cell_off = np.zeros(nverts + 1, dtype=np.int64)
    for j in range(nverts):
        ring = np.asarray(v_cells[j], dtype=np.int64)
        t1, t2 = _tangent_basis(verts[j])
        d = dual_verts[ring] - verts[j]
        order = np.argsort(np.arctan2(d @ t2, d @ t1), kind="stable")
        ring = ring[order]
        c = _unit(dual_verts[ring].mean(axis=0, keepdims=True))[0]
        poly = dual_verts[ring]
        if np.cross(poly, np.roll(poly, -1, axis=0)).sum(axis=0) @ c < 0:
            ring = ring[::-1]
        pair_edge = {}
        for e in v_edges[j]:
            pair_edge[frozenset((edges[e, 0], edges[e, 1]))] = e
        ring_e = []
        for k in range(len(ring)):
            key = frozenset((int(ring[k]), int(ring[(k + 1) % len(ring)])))
            if key not in pair_edge:
                raise MeshGeometryError(f"vertex {j}: cells {sorted(key)} share no edge")
            ring_e.append(pair_edge[key])
        dual_cell_cells.append(ring)
        dual_cell_edges.append(np.asarray(ring_e, dtype=np.int64))
        dual_cell_off[j + 1] = dual_cell_off[j] + len(ring)

    mesh = PolyMesh(
        family=family, level=level, radius=float(radius),
        unit_verts=verts, verts=verts * radius,
        cell_verts=cell_verts, cell_off=cell_off,
        cell_edges=np.asarray(cell_edges, dtype=np.int64),
        cell_edge_fwd=np.asarray(cell_edge_fwd, dtype=bool),
        edges=edges,
        dual_verts=dual_verts * radius,
        dual_cell_cells=np.concatenate(dual_cell_cells),
        dual_cell_off=dual_cell_off,
        dual_cell_edges=np.concatenate(dual_cell_edges),
    )
    mesh.crossings = _edge_crossings(mesh)
    return mesh


def _edge_crossings(mesh):
    """Great-circle intersection of each primal edge with its dual edge.

    Raises when the crossing falls outside either arc; the compound element
    construction requires a genuine interior crossing.
    """
    a = mesh.unit_verts[mesh.edges[:, 2]]
    b = mesh.unit_verts[mesh.edges[:, 3]]
    ud = _unit(mesh.dual_verts)
    c = ud[mesh.edges[:, 0]]
    d = ud[mesh.edges[:, 1]]
    g1 = np.cross(a, b)
    g2 = np.cross(c, d)
    x = np.cross(g1, g2)
    nrm2 = np.linalg.norm(x, axis=1)
    if (nrm2 < 1e-14).any():
        e = int(np.argmin(nrm2))
        raise MeshGeometryError(f"edge {e}: primal and dual edges are collinear")
    x = x / nrm2[:, None]
    flip = np.einsum("ij,ij->i", x, a + b) < 0
    x[flip] *= -1.0

    def _within(p, q, g, x):
        s1 = np.einsum("ij,ij->i", np.cross(p, x), g)
        s2 = np.einsum("ij,ij->i", np.cross(x, q), g)
        return np.minimum(s1, s2)

    w1 = _within(a, b, g1, x)
    w2 = _within(c, d, g2, x)
    if (w1 < 0).any() or (w2 < 0).any():
        e = int(np.argmin(np.minimum(w1, w2)))
        which = "primal" if w1[e] < w2[e] else "dual"
        raise MeshGeometryError(f"edge {e}: crossing point outside the {which} edge")

    t = b - a
    n = np.cross(t, x)
    if (np.einsum("ij,ij->i", n, d - c) <= 0).any():
        e = int(np.argmin(np.einsum("ij,ij->i", n, d - c)))
        raise MeshGeometryError(f"edge {e}: dual edge tangent opposes the normal (n.m <= 0)")
    return x * mesh.radius


def build_supermesh(mesh):
    """Attach the triangular supermesh and ring-aligned cell views."""
    if mesh.crossings is None:
        mesh.crossings = _edge_crossings(mesh)
    V, E, C = mesh.nverts, mesh.nedges, mesh.ncells
    mesh.node_xyz = np.vstack([mesh.verts, mesh.crossings, mesh.dual_verts])

    sub_pq = np.empty((6 * E, 2), dtype=np.int64)
    sub_pq[0:2 * E:2] = np.column_stack([mesh.edges[:, 2], V + np.arange(E)])
    sub_pq[1:2 * E:2] = np.column_stack([V + np.arange(E), mesh.edges[:, 3]])
    sub_pq[2 * E:4 * E:2] = np.column_stack([V + E + mesh.edges[:, 0], V + np.arange(E)])
    sub_pq[2 * E + 1:4 * E:2] = np.column_stack([V + E + mesh.edges[:, 1], V + np.arange(E)])
    sub_pq[4 * E:] = np.column_stack(
        [V + E + np.repeat(np.arange(C), mesh.cell_sizes()), mesh.cell_verts])
    mesh.sub_pq = sub_pq
    mesh.sub_len = np.linalg.norm(
        mesh.node_xyz[sub_pq[:, 1]] - mesh.node_xyz[sub_pq[:, 0]], axis=1)
    mesh.edge_len = mesh.sub_len[0:2 * E:2] + mesh.sub_len[1:2 * E:2]
    mesh.dual_edge_len = mesh.sub_len[2 * E:4 * E:2] + mesh.sub_len[2 * E + 1:4 * E:2]

    # primal cell views + triangle enumeration
    sizes = mesh.cell_sizes()
    off = np.zeros(C + 1, dtype=np.int64)
    off[1:] = np.cumsum(2 * sizes)
    ntri = off[-1]
    ring_nodes = np.empty(ntri, dtype=np.int64)
    tri_ids = np.arange(ntri, dtype=np.int64)
    bnd_subs = np.empty(ntri, dtype=np.int64)
    spoke_subs = np.empty(ntri, dtype=np.int64)
    bc_flux = np.empty(ntri)
    edge_ids = np.empty(off[-1] // 2, dtype=np.int64)
    e_ptr = 0
    for i in range(C):
        s, n = mesh.cell_off[i], sizes[i]
        vcyc = mesh.cell_verts[s:s + n]
        ecyc = mesh.cell_edges[s:s + n]
        fwd = mesh.cell_edge_fwd[s:s + n]
        for k in range(n):
            r0 = off[i] + 2 * k
            ring_nodes[r0] = vcyc[k]
            ring_nodes[r0 + 1] = V + ecyc[k]
            half = 0 if fwd[k] else 1
            bnd_subs[r0] = 2 * ecyc[k] + half
            bnd_subs[r0 + 1] = 2 * ecyc[k] + 1 - half
            spoke_subs[r0] = 4 * E + s + k
            spoke_subs[r0 + 1] = 2 * E + 2 * ecyc[k] + (0 if fwd[k] else 1)
            le = mesh.edge_len[ecyc[k]]
            bc_flux[r0] = mesh.sub_len[bnd_subs[r0]] / le
            bc_flux[r0 + 1] = mesh.sub_len[bnd_subs[r0 + 1]] / le
            edge_ids[e_ptr] = ecyc[k]
            e_ptr += 1
    mesh.pview = CellViews(off=off, ring_nodes=ring_nodes,
                           center_nodes=V + E + np.arange(C),
                           tri_ids=tri_ids, bnd_subs=bnd_subs,
                           spoke_subs=spoke_subs, edge_ids=edge_ids,
                           bc_flux=bc_flux)

    tri_nodes = np.empty((ntri, 3), dtype=np.int64)
    tri_nodes[:, 0] = ring_nodes
    roll = np.arange(ntri) + 1
    roll[off[1:] - 1] = off[:-1]
    tri_nodes[:, 1] = ring_nodes[roll]
    tri_nodes[:, 2] = V + E + np.repeat(np.arange(C), 2 * sizes)
    mesh.tri_nodes = tri_nodes
    mesh.tri_cell = np.repeat(np.arange(C), 2 * sizes)
    is_corner = tri_nodes[:, 0] < V
    mesh.tri_dual = np.where(is_corner, tri_nodes[:, 0], tri_nodes[:, 1])
    mesh.tri_edge = np.where(is_corner, tri_nodes[:, 1], tri_nodes[:, 0]) - V

    p0 = mesh.node_xyz[tri_nodes[:, 0]]
    cr = np.cross(mesh.node_xyz[tri_nodes[:, 1]] - p0, mesh.node_xyz[tri_nodes[:, 2]] - p0)
    twice_area = np.linalg.norm(cr, axis=1)
    if (twice_area <= 0).any():
        raise MeshGeometryError(f"degenerate supermesh triangle {int(np.argmin(twice_area))}")
    mesh.tri_normal = cr / twice_area[:, None]
    bad = np.einsum("ij,ij->i", mesh.tri_normal, p0) <= 0
    if bad.any():
        raise MeshGeometryError(
            f"supermesh triangle {int(np.nonzero(bad)[0][0])} is inverted")
    mesh.tri_area = 0.5 * twice_area

    # per-triangle sub-edges in cycle order (01, 12, 20) with orientation flags
    tri_subs = np.empty((ntri, 3), dtype=np.int64)
    tri_subs[:, 0] = bnd_subs
    tri_subs[:, 1] = spoke_subs[roll]
    tri_subs[:, 2] = spoke_subs
    mesh.tri_subs = tri_subs
    trav = np.stack([tri_nodes[:, [0, 1]], tri_nodes[:, [1, 2]], tri_nodes[:, [2, 0]]], axis=1)
    pq = sub_pq[tri_subs]
    same = (trav == pq).all(axis=2)
    if not np.logical_or(same, (trav == pq[:, :, ::-1]).all(axis=2)).all():
        raise MeshGeometryError("sub-edge endpoint bookkeeping is inconsistent")
    mesh.tri_sub_o = np.where(same, 1, -1).astype(np.int8)

    mesh.cell_area = np.bincount(mesh.tri_cell, weights=mesh.tri_area, minlength=C)
    mesh.dual_area = np.bincount(mesh.tri_dual, weights=mesh.tri_area, minlength=V)
    mesh.kite_area = np.bincount(mesh.tri_edge, weights=mesh.tri_area, minlength=E)
    w = mesh.tri_area[:, None] * (
        p0 + mesh.node_xyz[tri_nodes[:, 1]] + mesh.node_xyz[tri_nodes[:, 2]]) / 3.0
    mesh.cell_centroid = np.zeros((C, 3))
    np.add.at(mesh.cell_centroid, mesh.tri_cell, w)
    mesh.cell_centroid /= mesh.cell_area[:, None]
    mesh.dual_centroid = np.zeros((V, 3))
    np.add.at(mesh.dual_centroid, mesh.tri_dual, w)
    mesh.dual_centroid /= mesh.dual_area[:, None]

    mesh.dview = _dual_views(mesh)
    return mesh


def _dual_views(mesh):
    """Ring-aligned view of the dual cells over the same supermesh."""
    V, E, C = mesh.nverts, mesh.nedges, mesh.ncells
    sizes = mesh.dual_sizes()
    off = np.zeros(V + 1, dtype=np.int64)
    off[1:] = np.cumsum(2 * sizes)
    ring_nodes = np.empty(off[-1], dtype=np.int64)
    tri_ids = np.empty(off[-1], dtype=np.int64)
    bnd_subs = np.empty(off[-1], dtype=np.int64)
    spoke_subs = np.empty(off[-1], dtype=np.int64)
    bc_flux = np.empty(off[-1])
    edge_ids = np.empty(off[-1] // 2, dtype=np.int64)

    # (edge, half, side) -> triangle id
    tri_table = np.empty((E, 2, 2), dtype=np.int64)
    half = (mesh.tri_dual != mesh.edges[mesh.tri_edge, 2]).astype(np.int64)
    side = (mesh.tri_cell != mesh.edges[mesh.tri_edge, 0]).astype(np.int64)
    tri_table[mesh.tri_edge, half, side] = np.arange(len(mesh.tri_cell))

    vert_pos = {}
    for i in range(C):
        s = mesh.cell_off[i]
        for k, v in enumerate(mesh.cell_verts[s:mesh.cell_off[i + 1]]):
            vert_pos[(i, int(v))] = k

    e_ptr = 0
    for j in range(V):
        s, m = mesh.dual_cell_off[j], sizes[j]
        ring_c = mesh.dual_cell_cells[s:s + m]
        ring_e = mesh.dual_cell_edges[s:s + m]
        for k in range(m):
            r0 = off[j] + 2 * k
            i, e = int(ring_c[k]), int(ring_e[k])
            ring_nodes[r0] = V + E + i
            ring_nodes[r0 + 1] = V + e
            h = 0 if mesh.edges[e, 2] == j else 1
            sd = 0 if mesh.edges[e, 0] == i else 1
            i_next = int(ring_c[(k + 1) % m])
            sd_next = 0 if mesh.edges[e, 0] == i_next else 1
            tri_ids[r0] = tri_table[e, h, sd]
            tri_ids[r0 + 1] = tri_table[e, h, sd_next]
            bnd_subs[r0] = 2 * E + 2 * e + sd
            bnd_subs[r0 + 1] = 2 * E + 2 * e + sd_next
            spoke_subs[r0] = 4 * E + mesh.cell_off[i] + vert_pos[(i, j)]
            spoke_subs[r0 + 1] = 2 * e + h
            # circulation-positive flux runs out of the head-vertex dual cell;
            # the canonical type-2 tangent (c_side -> x) flips sign across sides
            ld = mesh.dual_edge_len[e]
            bc_flux[r0] = (1.0 if sd == 0 else -1.0) * mesh.sub_len[bnd_subs[r0]] / ld
            bc_flux[r0 + 1] = (1.0 if sd_next == 0 else -1.0) * mesh.sub_len[bnd_subs[r0 + 1]] / ld
            edge_ids[e_ptr] = e
            e_ptr += 1

    return CellViews(off=off, ring_nodes=ring_nodes,
                     center_nodes=np.arange(V),
                     tri_ids=tri_ids, bnd_subs=bnd_subs,
                     spoke_subs=spoke_subs, edge_ids=edge_ids,
                     bc_flux=bc_flux)
