"""Assembly of the discrete operators used by the shallow-water model.

All matrices are exact integrals over the flat supermesh facets (degree-4
triangle quadrature; every integrand here is quadratic, so the rule is
exact and the degree-6 rule reproduces the same numbers to roundoff).

Matrix inventory, with (rows x cols) over cells C, edges E, vertices V:

==============  ===========  ====================================================
attribute       shape        entry
==============  ===========  ====================================================
mass2_inv       C x C        1/A_i on the diagonal (inverse cellwise mass)
mass1           E x E        <v_e, v_e'>            (primal flux mass)
mass0           V x V        <gamma_j, gamma_j'>    (primal nodal mass)
vc_mass         V x C        <gamma_j, alpha_i>     (columns sum to 1)
vd_mass         V x V        <gamma_j, beta_j'>     (columns sum to 1)
cd_mass         C x C        <alpha_i, chi_i'>      (rows sum to 1)
ee_mass         E x E        <v_e, w_e'>            (primal/dual flux pairing)
rot_mass        E x E        -<v_e, k x v_e'>       (antisymmetric)
kinetic         per cell     <v_a, v_b> restricted to the cell
==============  ===========  ====================================================

``d1`` (E x V) and ``d2`` (C x E) are the incidence matrices as floats;
the dual-complex derivatives are -d2.T and d1.T.  Discrete vector
calculus identities tying these matrices together are checked by
:func:`verify_identities`.

Operator files written by :func:`save_operators` are ``.npz`` archives:
``format`` (currently 1), ``mesh_hash``, ``degree``, ``raw_dev``,
``solve_residual``, then ``<name>_data/indices/indptr/shape`` for each
sparse matrix above and ``kin<i>_cells/edges/blocks`` for the kinetic
groups.  Loading validates the hash of the target mesh.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .elements import CompoundBases, TriGeometry, build_bases, _view_local_indices
from .errors import CacheError
from .mesh.fileio import mesh_hash
from .quadrature import triangle_rule

_SPARSE_NAMES = ("mass2_inv", "mass1", "mass0", "vc_mass", "vd_mass",
                 "cd_mass", "ee_mass", "rot_mass", "d1", "d2")


@dataclass
class Field:
    """Coefficient vector tagged with its function space."""

    space: str
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)

    def check(self, mesh):
        want = mesh.space_dim(self.space)
        if self.data.shape != (want,):
            raise ValueError(
                f"{self.space} field needs shape ({want},), got {self.data.shape}")
        return self


@dataclass
class KineticBlocks:
    """Per-cell kinetic-energy forms, grouped by cell size."""

    groups: list  # (cells, edge_cols (nc, n), blocks (nc, n, n))
    ncells: int

    def cell_energy(self, U):
        """(C,) integrals of |u|^2 / 2 over each cell."""
        out = np.zeros(self.ncells)
        for cells, ecols, blocks in self.groups:
            ug = U[ecols]
            out[cells] = 0.5 * np.einsum("ckl,ck,cl->c", blocks, ug, ug)
        return out

    def as_matrix(self, nedges):
        """Sum of the scattered blocks; equals the flux mass matrix."""
        rows, cols, vals = [], [], []
        for _, ecols, blocks in self.groups:
            n = ecols.shape[1]
            rows.append(np.repeat(ecols, n, axis=1).ravel())
            cols.append(np.tile(ecols, (1, n)).ravel())
            vals.append(blocks.ravel())
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nedges, nedges))


@dataclass
class OperatorSet:
    mesh: object
    bases: CompoundBases
    geom: TriGeometry
    degree: int
    mass2_inv: sp.csr_matrix
    mass1: sp.csr_matrix
    mass0: sp.csr_matrix
    vc_mass: sp.csr_matrix
    vd_mass: sp.csr_matrix
    cd_mass: sp.csr_matrix
    ee_mass: sp.csr_matrix
    rot_mass: sp.csr_matrix
    kinetic: KineticBlocks
    d1: sp.csr_matrix
    d2: sp.csr_matrix
    raw_dev: dict = field(default_factory=dict)
    solve_residual: float = 0.0

    @property
    def d1b(self):
        """Dual derivative taking cell quantities to edges."""
        return (-self.d2.T).tocsr()

    @property
    def d2b(self):
        """Dual derivative taking edge circulations to vertex cells."""
        return self.d1.T.tocsr()

    def weak_gradient_rhs(self, phi_cell):
        """RHS of the weak gradient: mass1 @ G = d1b @ mass2_inv @ phi."""
        return self.d1b @ (self.mass2_inv @ phi_cell)

    def perp_rhs(self, U):
        """RHS of the tangential reconstruction: mass1 @ Uperp = -rot @ U."""
        return -(self.rot_mass @ U)

    def weak_curl_rhs(self, U):
        """RHS of the nodal curl: mass0 @ Xi = d2b @ mass1 @ U."""
        return self.d2b @ (self.mass1 @ U)


def _facet_grams(geom, degree):
    """Per-facet 3x3 grams of the local flux functions.

    Returns (plain, rotated): integrals of R_a . R_b and R_a . (k x R_b).
    """
    bary, w = triangle_rule(degree)
    T = len(geom.area)
    opp = geom.xyz[:, [2, 0, 1], :]  # node opposite local edge a
    plain = np.zeros((T, 3, 3))
    rot = np.zeros((T, 3, 3))
    for q in range(len(w)):
        xq = np.einsum("a,tav->tv", bary[q], geom.xyz)
        Rq = (xq[:, None, :] - opp) / (2.0 * geom.area)[:, None, None]
        kRq = np.cross(geom.khat[:, None, :], Rq)
        aw = w[q] * geom.area
        plain += aw[:, None, None] * np.einsum("tav,tbv->tab", Rq, Rq)
        rot += aw[:, None, None] * np.einsum("tav,tbv->tab", Rq, kRq)
    return plain, rot


def _scatter_subedge_gram(mesh, blocks):
    """Assemble per-facet 3x3 sub-edge blocks into a (6E, 6E) matrix."""
    o = mesh.tri_sub_o.astype(float)
    signed = blocks * o[:, :, None] * o[:, None, :]
    rows = np.broadcast_to(mesh.tri_subs[:, :, None], signed.shape)
    cols = np.broadcast_to(mesh.tri_subs[:, None, :], signed.shape)
    n = 6 * mesh.nedges
    return sp.csr_matrix(
        (signed.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))


def _nodal_grams(mesh, geom):
    """P1 mass (nodes x nodes) and P1-against-constants (nodes x T)."""
    T = len(geom.area)
    nn = mesh.nverts + mesh.nedges + mesh.ncells
    a6 = geom.area / 6.0
    blocks = 0.5 * a6[:, None, None] * np.ones((T, 3, 3))
    blocks[:, np.arange(3), np.arange(3)] = a6[:, None]
    rows = np.broadcast_to(mesh.tri_nodes[:, :, None], blocks.shape)
    cols = np.broadcast_to(mesh.tri_nodes[:, None, :], blocks.shape)
    p1 = sp.csr_matrix(
        (blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(nn, nn))
    np0 = sp.csr_matrix(
        (np.repeat(geom.area / 3.0, 3),
         (mesh.tri_nodes.ravel(), np.repeat(np.arange(T), 3))),
        shape=(nn, T))
    return p1, np0


def _kinetic_blocks(mesh, geom, bases, plain):
    """Per-cell restrictions of the flux mass form."""
    view = mesh.pview
    (roll, slot_bnd, slot_lo, slot_hi,
     _, _, _, o_bnd, o_lo, o_hi) = _view_local_indices(mesh, view)
    groups = []
    for batch in bases.interior_primal:
        cells, ecols, X = batch.cells, batch.edge_cols, batch.spokes
        nc, n2, n = X.shape
        idx = view.off[cells][:, None] + np.arange(n2)[None, :]
        nxt = (np.arange(n2) + 1) % n2
        # facet-local expansion of each of the cell's n flux bases
        C = np.zeros((nc, n2, 3, n))
        ci = np.arange(nc)[:, None]
        ar = np.arange(n2)[None, :]
        bnd_col = np.eye(n)[np.repeat(np.arange(n), 2)]  # (2n, n)
        C[ci, ar, slot_bnd[idx], :] = (o_bnd[idx] * view.bc_flux[idx])[:, :, None] \
            * bnd_col[None, :, :]
        C[ci, ar, slot_lo[idx], :] = o_lo[idx][:, :, None] * X
        C[ci, ar, slot_hi[idx], :] = o_hi[idx][:, :, None] * X[:, nxt, :]
        G = plain[view.tri_ids[idx]]
        blocks = np.einsum("cfak,cfab,cfbl->ckl", C, G, C)
        blocks = 0.5 * (blocks + blocks.transpose(0, 2, 1))
        groups.append((cells, ecols, blocks))
    return KineticBlocks(groups=groups, ncells=mesh.ncells)


def assemble(mesh, degree=4):
    """Build every operator for a mesh carrying supermesh data."""
    geom = TriGeometry.build(mesh)
    bases = build_bases(mesh, geom)
    plain, rot = _facet_grams(geom, degree)
    gram_flux = _scatter_subedge_gram(mesh, plain)
    gram_rot = _scatter_subedge_gram(mesh, rot)
    p1, np0 = _nodal_grams(mesh, geom)

    U1, W1, G0, C0, A2, B2 = (bases.U1, bases.W1, bases.G0, bases.C0,
                              bases.A2, bases.B2)
    mass1 = (U1.T @ gram_flux @ U1).tocsr()
    mass0 = (G0.T @ p1 @ G0).tocsr()
    rot_mass = (-(U1.T @ gram_rot @ U1)).tocsr()
    ee_mass = (U1.T @ gram_rot @ W1).tocsr()
    vc_mass = (G0.T @ np0 @ A2).tocsr()
    vd_mass = (G0.T @ np0 @ B2).tocsr()
    cd_mass = (A2.T @ np0.T @ C0).tocsr()

    raw_dev = {
        "mass1_sym": _spmax(mass1 - mass1.T),
        "mass0_sym": _spmax(mass0 - mass0.T),
        "rot_antisym": _spmax(rot_mass + rot_mass.T),
    }
    mass1 = ((mass1 + mass1.T) * 0.5).tocsr()
    mass0 = ((mass0 + mass0.T) * 0.5).tocsr()
    rot_mass = ((rot_mass - rot_mass.T) * 0.5).tocsr()

    C = mesh.ncells
    mass2_inv = sp.csr_matrix(
        (1.0 / mesh.cell_area, (np.arange(C), np.arange(C))), shape=(C, C))
    d1i, d2i = mesh.incidence()
    d1 = sp.csr_matrix(d1i, dtype=float)
    d2 = sp.csr_matrix(d2i, dtype=float)
    kinetic = _kinetic_blocks(mesh, geom, bases, plain)

    return OperatorSet(mesh=mesh, bases=bases, geom=geom, degree=degree,
                       mass2_inv=mass2_inv, mass1=mass1, mass0=mass0,
                       vc_mass=vc_mass, vd_mass=vd_mass, cd_mass=cd_mass,
                       ee_mass=ee_mass, rot_mass=rot_mass, kinetic=kinetic,
                       d1=d1, d2=d2, raw_dev=raw_dev,
                       solve_residual=bases.solve_residual)


def _spmax(mat):
    mat = mat.tocoo()
    return float(np.abs(mat.data).max()) if mat.nnz else 0.0


def verify_identities(ops, tol=1e-11):
    """Residuals of the discrete vector-calculus identities.

    Every entry should sit at roundoff; returns {name: residual} and the
    caller decides whether to fail.  All residuals are relative to the
    magnitude of the terms compared.
    """
    d1, d2 = ops.d1, ops.d2
    d1b, d2b = ops.d1b, ops.d2b

    def rel(diff, ref):
        return _spmax(diff) / max(_spmax(ref), 1e-300)

    res = {}
    res["complex_primal"] = _spmax(d2 @ d1)
    res["complex_dual"] = _spmax(d2b @ d1b)
    res["rot_antisym"] = ops.raw_dev.get("rot_antisym", 0.0) \
        / max(_spmax(ops.rot_mass), 1e-300)
    res["mass1_sym"] = ops.raw_dev.get("mass1_sym", 0.0) \
        / max(_spmax(ops.mass1), 1e-300)
    res["mass0_sym"] = ops.raw_dev.get("mass0_sym", 0.0) \
        / max(_spmax(ops.mass0), 1e-300)

    ref = ops.vc_mass @ d2
    res["rot_divergence"] = rel(-(d2b @ ops.rot_mass) - ref, ref)
    ref = ops.vd_mass @ d2b
    res["pairing_curl"] = rel(d2b @ ops.ee_mass - ref, ref)
    ref = ops.ee_mass @ d1b
    res["pairing_gradient"] = rel(d1b @ ops.cd_mass - ref, ref)
    res["rot_gradient_null"] = _spmax(d2b @ ops.rot_mass @ d1) \
        / max(_spmax(ops.rot_mass), 1e-300)

    res["vc_colsum"] = float(np.abs(np.asarray(
        ops.vc_mass.sum(axis=0)).ravel() - 1.0).max())
    res["vd_colsum"] = float(np.abs(np.asarray(
        ops.vd_mass.sum(axis=0)).ravel() - 1.0).max())
    res["cd_rowsum"] = float(np.abs(np.asarray(
        ops.cd_mass.sum(axis=1)).ravel() - 1.0).max())

    sq = ops.kinetic.as_matrix(ops.mesh.nedges) - ops.mass1
    res["kinetic_total"] = _spmax(sq) / max(_spmax(ops.mass1), 1e-300)
    res["local_solve"] = ops.solve_residual
    return res


def save_operators(ops, path):
    payload = {
        "format": np.int64(1),
        "mesh_hash": np.bytes_(mesh_hash(ops.mesh).encode()),
        "degree": np.int64(ops.degree),
        "solve_residual": np.float64(ops.solve_residual),
        "raw_dev_keys": np.array(sorted(ops.raw_dev), dtype="U32"),
        "raw_dev_vals": np.array(
            [ops.raw_dev[k] for k in sorted(ops.raw_dev)], dtype=float),
        "ngroups": np.int64(len(ops.kinetic.groups)),
    }
    for name in _SPARSE_NAMES:
        mat = getattr(ops, name).tocsr()
        payload[f"{name}_data"] = mat.data
        payload[f"{name}_indices"] = mat.indices
        payload[f"{name}_indptr"] = mat.indptr
        payload[f"{name}_shape"] = np.asarray(mat.shape)
    for i, (cells, ecols, blocks) in enumerate(ops.kinetic.groups):
        payload[f"kin{i}_cells"] = cells
        payload[f"kin{i}_edges"] = ecols
        payload[f"kin{i}_blocks"] = blocks
    np.savez_compressed(path, **payload)


def load_operators(path, mesh):
    """Read an operator archive; the mesh must hash-match the archive."""
    try:
        with np.load(path) as z:
            if int(z["format"]) != 1:
                raise CacheError(f"unknown operator archive format in {path}")
            stored = bytes(z["mesh_hash"]).decode()
            if stored != mesh_hash(mesh):
                raise CacheError(
                    "operator archive was built for a different mesh")
            mats = {}
            for name in _SPARSE_NAMES:
                mats[name] = sp.csr_matrix(
                    (z[f"{name}_data"], z[f"{name}_indices"],
                     z[f"{name}_indptr"]),
                    shape=tuple(z[f"{name}_shape"]))
            groups = [(z[f"kin{i}_cells"], z[f"kin{i}_edges"],
                       z[f"kin{i}_blocks"]) for i in range(int(z["ngroups"]))]
            raw_dev = dict(zip([str(k) for k in z["raw_dev_keys"]],
                               z["raw_dev_vals"]))
            geom = TriGeometry.build(mesh)
            bases = build_bases(mesh, geom)
            return OperatorSet(
                mesh=mesh, bases=bases, geom=geom, degree=int(z["degree"]),
                kinetic=KineticBlocks(groups=groups, ncells=mesh.ncells),
                raw_dev=raw_dev,
                solve_residual=float(z["solve_residual"]), **mats)
    except (KeyError, ValueError, OSError) as exc:
        raise CacheError(f"unreadable operator archive {path}: {exc}") from exc
