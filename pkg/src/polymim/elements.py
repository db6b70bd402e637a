"""Compound element bases on the supermesh.

Each function space is represented by the coefficients of its basis
functions on plain sub-element bases:

* piecewise constants: one value per supermesh triangle,
* nodal P1: one value per supermesh node,
* lowest-order flux elements: one flux per supermesh sub-edge, measured
  against the fixed sub-edge normal nu = tau x k (tau = canonical endpoint
  order, k = outward radial).

Primal flux functions have unit net flux through their edge, split over the
two half-edges in proportion to length, equal divergence on the 2n facets
of each adjacent cell and vanishing weak curl against the centre hat
function; that local problem is a square (2n) x (2n) solve per cell.  The
rotated dual family solves the mirror problem on dual cells; the dual flux
basis w_e is k x (its stored sub-edge expansion).  Nodal bases interpolate
linearly along split edges and fill each cell centre with the one-point
discrete Laplace solve.

Because both families share one supermesh, the strong derivative of each
basis lies exactly in the neighbouring space and the incidence matrices
emerge from the element construction; tests assert this to roundoff.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ElementConstructionError


@dataclass
class TriGeometry:
    """Per-facet geometry shared by element construction and assembly."""

    xyz: np.ndarray       # (T, 3, 3) vertex coordinates
    area: np.ndarray      # (T,)
    khat: np.ndarray      # (T, 3) unit facet normal
    centroid: np.ndarray  # (T, 3)
    grad: np.ndarray      # (T, 3, 3) hat-function gradients, grad[t, a]
    # local edge a joins nodes (a, a+1); opposite node is a+2 (mod 3)

    @classmethod
    def build(cls, mesh):
        xyz = mesh.node_xyz[mesh.tri_nodes]
        area = mesh.tri_area
        khat = mesh.tri_normal
        centroid = xyz.mean(axis=1)
        grad = np.empty_like(xyz)
        for a in range(3):
            e = xyz[:, (a + 2) % 3] - xyz[:, (a + 1) % 3]
            grad[:, a] = np.cross(khat, e) / (2.0 * area[:, None])
        return cls(xyz=xyz, area=area, khat=khat, centroid=centroid, grad=grad)

    def rt0_moment(self, a):
        """integral of the edge-a flux function over the facet, outward unit flux."""
        return 0.5 * (self.centroid - self.xyz[:, (a + 2) % 3])


@dataclass
class InteriorSolves:
    """Interior spoke fluxes for one batch of equal-size cells."""

    cells: np.ndarray      # (nc,)
    edge_cols: np.ndarray  # (nc, n) mesh edges of each cell
    spokes: np.ndarray     # (nc, 2n, n) flux of basis k through spoke r


@dataclass
class CompoundBases:
    """Sub-element expansions of all six compound bases."""

    U1: sp.csr_matrix   # (6E, E)  primal flux basis v_e
    W1: sp.csr_matrix   # (6E, E)  dual flux basis, field is k x expansion
    G0: sp.csr_matrix   # (nodes, V)  primal nodal basis gamma_j
    C0: sp.csr_matrix   # (nodes, C)  dual nodal basis chi_i
    A2: sp.csr_matrix   # (T, C)  primal constants alpha_i = 1/A_i
    B2: sp.csr_matrix   # (T, V)  dual constants beta_j = 1/dual_A_j
    interior_primal: list  # InteriorSolves batches for the primal flux basis
    interior_dual: list
    solve_residual: float

    def expansion(self, space):
        mat = {"V1": self.U1, "V^1": self.W1, "V0": self.G0,
               "V^0": self.C0, "V2": self.A2, "V^2": self.B2}[space]
        coo = mat.tocoo()
        order = np.lexsort((coo.row, coo.col))
        return zip(coo.col[order], coo.row[order], coo.data[order])


def _view_local_indices(mesh, view):
    """Per ring position: o-signs and local node/slot indices in triangle r."""
    tris = view.tri_ids
    subs3 = mesh.tri_subs[tris]
    o3 = mesh.tri_sub_o[tris]
    nodes3 = mesh.tri_nodes[tris]

    def slot_of(ids):
        s = np.full(len(ids), -1, dtype=np.int64)
        for a in range(3):
            s = np.where(subs3[:, a] == ids, a, s)
        if (s < 0).any():
            raise ElementConstructionError("sub-edge not found in its own facet")
        return s

    roll = _ring_roll(view)
    slot_bnd = slot_of(view.bnd_subs)
    slot_lo = slot_of(view.spoke_subs)
    slot_hi = slot_of(view.spoke_subs[roll])

    def node_slot(node_ids):
        s = np.full(len(node_ids), -1, dtype=np.int64)
        for a in range(3):
            s = np.where(nodes3[:, a] == node_ids, a, s)
        if (s < 0).any():
            raise ElementConstructionError("ring node not found in its own facet")
        return s

    ncell = len(view.off) - 1
    sizes2 = np.diff(view.off)
    loc_lo = node_slot(view.ring_nodes)
    loc_hi = node_slot(view.ring_nodes[roll])
    loc_c = node_slot(np.repeat(view.center_nodes, sizes2))
    o_bnd = _pick(o3, slot_bnd)
    o_lo = _pick(o3, slot_lo)
    o_hi = _pick(o3, slot_hi)
    return roll, slot_bnd, slot_lo, slot_hi, loc_lo, loc_hi, loc_c, o_bnd, o_lo, o_hi


def _ring_roll(view):
    roll = np.arange(len(view.ring_nodes)) + 1
    roll[view.off[1:] - 1] = view.off[:-1]
    return roll


def _pick(arr3, slots):
    return arr3[np.arange(len(slots)), slots]


def _flux_basis_interior(mesh, geom, view):
    """Solve the per-cell interior flux problems for all edges of each cell.

    Returns COO triplets (sub-edge row, mesh edge col, coefficient) plus the
    worst local linear-system residual.
    """
    (roll, slot_bnd, slot_lo, slot_hi, loc_lo, loc_hi, loc_c,
     o_bnd, o_lo, o_hi) = _view_local_indices(mesh, view)
    tris = view.tri_ids
    area = geom.area[tris]
    inv_a = 1.0 / area

    # weak-curl coefficients: integral of each slot's flux function against
    # the rotated centre-hat gradient, signed by the sub-edge orientation
    gc = _pick_vec(geom.grad[tris], loc_c)
    rot = np.cross(geom.khat[tris], gc)
    curl_bnd = o_bnd * np.einsum("ij,ij->i", rot, _moment(geom, tris, slot_bnd))
    curl_lo = o_lo * np.einsum("ij,ij->i", rot, _moment(geom, tris, slot_lo))
    curl_hi = o_hi * np.einsum("ij,ij->i", rot, _moment(geom, tris, slot_hi))

    sizes2 = np.diff(view.off)
    rows, cols, vals = [], [], []
    groups = []
    worst = 0.0
    for n2 in np.unique(sizes2):
        cells = np.nonzero(sizes2 == n2)[0]
        n = n2 // 2
        idx = view.off[cells][:, None] + np.arange(n2)[None, :]  # (nc, 2n)
        nxt = (np.arange(n2) + 1) % n2

        A = np.zeros((len(cells), n2, n2))
        # rows 0..2n-2: equal facet divergence; row 2n-1: zero weak curl
        for r in range(n2 - 1):
            A[:, r, r] += o_lo[idx[:, r]] * inv_a[idx[:, r]]
            A[:, r, nxt[r]] += o_hi[idx[:, r]] * inv_a[idx[:, r]]
            A[:, r, r + 1] -= o_lo[idx[:, r + 1]] * inv_a[idx[:, r + 1]]
            A[:, r, nxt[r + 1]] -= o_hi[idx[:, r + 1]] * inv_a[idx[:, r + 1]]
        for r in range(n2):
            A[:, n2 - 1, r] += curl_lo[idx[:, r]]
            A[:, n2 - 1, nxt[r]] += curl_hi[idx[:, r]]

        B = np.zeros((len(cells), n2, n))
        g = view.bc_flux[idx]  # (nc, 2n)
        div_b = o_bnd[idx] * inv_a[idx] * g
        for r in range(n2 - 1):
            B[:, r, r // 2] -= div_b[:, r]
            B[:, r, (r + 1) // 2 % n] += div_b[:, r + 1]
        B[:, n2 - 1, :] -= np.einsum(
            "cr,crk->ck", curl_bnd[idx] * g,
            np.eye(n)[np.repeat(np.arange(n), 2)][None, :, :])

        try:
            X = np.linalg.solve(A, B)
        except np.linalg.LinAlgError as exc:
            raise ElementConstructionError(
                f"singular local flux system on a {n}-gon cell") from exc
        worst = max(worst, float(np.abs(np.einsum("cij,cjk->cik", A, X) - B).max()))

        ecols = view.edge_ids[(view.off[cells] // 2)[:, None] + np.arange(n)[None, :]]
        rows.append(np.broadcast_to(view.spoke_subs[idx][:, :, None],
                                    X.shape).ravel())
        cols.append(np.broadcast_to(ecols[:, None, :], X.shape).ravel())
        vals.append(X.ravel())
        groups.append(InteriorSolves(cells=cells, edge_cols=ecols, spokes=X))

    triplets = (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))
    return triplets, groups, worst


def _moment(geom, tris, slots):
    return 0.5 * (geom.centroid[tris] -
                  geom.xyz[tris, (slots + 2) % 3])


def _pick_vec(arr, slots):
    return arr[np.arange(len(slots)), slots]


def _flux_basis(mesh, geom, dual):
    E = mesh.nedges
    view = mesh.dview if dual else mesh.pview
    (rows, cols, vals), groups, worst = _flux_basis_interior(mesh, geom, view)
    base = 2 * E if dual else 0
    sub0 = base + 2 * np.arange(E)
    lens = mesh.dual_edge_len if dual else mesh.edge_len
    sgn = -1.0 if dual else 1.0  # right half of a dual edge opposes the circulation
    rows = np.concatenate([rows, sub0, sub0 + 1])
    cols = np.concatenate([cols, np.arange(E), np.arange(E)])
    vals = np.concatenate([vals, mesh.sub_len[sub0] / lens,
                           sgn * mesh.sub_len[sub0 + 1] / lens])
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(6 * E, E))
    return mat, groups, worst


def _nodal_basis(mesh, geom, dual):
    V, E, C = mesh.nverts, mesh.nedges, mesh.ncells
    view = mesh.dview if dual else mesh.pview
    ndof = C if dual else V
    nnodes = V + E + C

    rows, cols, vals = [], [], []
    if dual:
        rows.append(V + E + np.arange(C))
        cols.append(np.arange(C))
        vals.append(np.ones(C))
        sub0 = 2 * E + 2 * np.arange(E)
        owners = mesh.edges[:, [0, 1]]
    else:
        rows.append(np.arange(V))
        cols.append(np.arange(V))
        vals.append(np.ones(V))
        sub0 = 2 * np.arange(E)
        owners = mesh.edges[:, [2, 3]]
    a = mesh.sub_len[sub0]
    b = mesh.sub_len[sub0 + 1]
    rows += [V + np.arange(E), V + np.arange(E)]
    cols += [owners[:, 0], owners[:, 1]]
    vals += [b / (a + b), a / (a + b)]

    # centre values: one-unknown discrete Laplace solve per cell
    (roll, _, _, _, loc_lo, loc_hi, loc_c, _, _, _) = _view_local_indices(mesh, view)
    tris = view.tri_ids
    g = geom.grad[tris]
    ga = geom.area[tris]
    gc = _pick_vec(g, loc_c)
    k_cc = ga * np.einsum("ij,ij->i", gc, gc)
    k_lo = ga * np.einsum("ij,ij->i", gc, _pick_vec(g, loc_lo))
    k_hi = ga * np.einsum("ij,ij->i", gc, _pick_vec(g, loc_hi))

    sizes2 = np.diff(view.off)
    cell_of_pos = np.repeat(np.arange(len(sizes2)), sizes2)
    kcc = np.bincount(cell_of_pos, weights=k_cc, minlength=len(sizes2))
    kring = k_lo.copy()
    np.add.at(kring, roll, k_hi)
    w = -kring / kcc[cell_of_pos]

    ring_nodes = view.ring_nodes
    centre = np.repeat(view.center_nodes, sizes2)
    corner = ring_nodes < V if not dual else ring_nodes >= V + E
    # corner contribution: w * identity entry of the ring node
    dof_of_node = (ring_nodes - (V + E)) if dual else ring_nodes
    rows.append(centre[corner])
    cols.append(dof_of_node[corner])
    vals.append(w[corner])
    # crossing contribution: w * linear interpolation entries
    cross = ~corner
    e_of = ring_nodes[cross] - V
    fa = (b / (a + b))[e_of]
    rows += [centre[cross], centre[cross]]
    cols += [owners[e_of, 0], owners[e_of, 1]]
    vals += [w[cross] * fa, w[cross] * (1.0 - fa)]

    rows = np.concatenate([np.atleast_1d(r) for r in rows])
    cols = np.concatenate([np.atleast_1d(c) for c in cols])
    vals = np.concatenate([np.atleast_1d(v) for v in vals])
    return sp.csr_matrix((vals, (rows, cols)), shape=(nnodes, ndof))


def build_bases(mesh, geom=None):
    """Construct all six compound bases; raises on singular local systems."""
    geom = geom or TriGeometry.build(mesh)
    C, V = mesh.ncells, mesh.nverts
    T = len(mesh.tri_area)
    A2 = sp.csr_matrix(
        (1.0 / mesh.cell_area[mesh.tri_cell], (np.arange(T), mesh.tri_cell)),
        shape=(T, C))
    B2 = sp.csr_matrix(
        (1.0 / mesh.dual_area[mesh.tri_dual], (np.arange(T), mesh.tri_dual)),
        shape=(T, V))
    U1, grp1, res1 = _flux_basis(mesh, geom, dual=False)
    W1, grp2, res2 = _flux_basis(mesh, geom, dual=True)
    G0 = _nodal_basis(mesh, geom, dual=False)
    C0 = _nodal_basis(mesh, geom, dual=True)
    return CompoundBases(U1=U1, W1=W1, G0=G0, C0=C0, A2=A2, B2=B2,
                         interior_primal=grp1, interior_dual=grp2,
                         solve_residual=max(res1, res2))


def tri_div_matrix(mesh):
    """(T, 6E) map from sub-edge fluxes to per-facet divergence values."""
    T = len(mesh.tri_area)
    rows = np.repeat(np.arange(T), 3)
    cols = mesh.tri_subs.ravel()
    vals = (mesh.tri_sub_o / mesh.tri_area[:, None]).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(T, 6 * mesh.nedges))


def grad_perp_matrix(mesh):
    """(6E, nodes) map from P1 nodal values to sub-edge fluxes of the
    rotated gradient: flux is value(p) - value(q) against nu = tau x k."""
    E = mesh.nedges
    rows = np.repeat(np.arange(6 * E), 2)
    cols = mesh.sub_pq.ravel()
    vals = np.tile([1.0, -1.0], 6 * E)
    nnodes = mesh.nverts + E + mesh.ncells
    return sp.csr_matrix((vals, (rows, cols)), shape=(6 * E, nnodes))


def center_laplace_value(ring_xyz, center_xyz, boundary_values):
    """Interior nodal value of a P1 field on one fan of facets.

    ``ring_xyz``: (2n, 3) alternating corner/crossing coordinates (CCW),
    ``boundary_values``: (2n,) nodal data on the ring.  Solves the single
    interior equation of the discrete Laplacian, as used for every compound
    nodal basis function.  Exposed for direct testing against closed forms.
    """
    ring_xyz = np.asarray(ring_xyz, float)
    bv = np.asarray(boundary_values, float)
    n2 = len(ring_xyz)
    kcc = 0.0
    acc = 0.0
    for r in range(n2):
        tri = np.array([ring_xyz[r], ring_xyz[(r + 1) % n2], center_xyz])
        e0 = tri[1] - tri[0]
        e1 = tri[2] - tri[0]
        nrm = np.cross(e0, e1)
        area = 0.5 * np.linalg.norm(nrm)
        khat = nrm / (2.0 * area)
        g = [np.cross(khat, tri[(a + 2) % 3] - tri[(a + 1) % 3]) / (2 * area)
             for a in range(3)]
        kcc += area * g[2] @ g[2]
        acc += area * (g[2] @ g[0]) * bv[r] + area * (g[2] @ g[1]) * bv[(r + 1) % n2]
    return -acc / kcc
