"""Upwind swept-region transport: constancy, donor logic, CFL, limiter."""

import numpy as np
import pytest
import scipy.sparse as sp

from polymim.advection import AdvectionContext
from polymim.errors import AdvectionCflError


@pytest.fixture(scope="module")
def ctx2(hex2):
    return AdvectionContext(hex2, order=2)


@pytest.fixture(scope="module")
def ctx1(hex2):
    return AdvectionContext(hex2, order=1)


def _sweep(mesh, rng, scale=0.02):
    return scale * rng.standard_normal(mesh.nedges) \
        * mesh.cell_area[mesh.edges[:, 0]]


@pytest.mark.parametrize("order,limit", [(1, False), (2, False), (2, True)])
def test_transport_preserves_constants(hex2, rng, order, limit):
    ctx = AdvectionContext(hex2, order=order)
    sweep = _sweep(hex2, rng)
    flux = ctx.primal_flux(sweep, 3.7 * np.ones(hex2.ncells), limit=limit)
    assert np.abs(flux - 3.7 * sweep).max() == 0.0


def test_tangential_shift_preserves_constants(hex2, ctx2, rng):
    sweep = _sweep(hex2, rng)
    along = 0.05 * rng.standard_normal(hex2.nedges) * hex2.edge_len
    flux = ctx2.primal_flux(sweep, 3.7 * np.ones(hex2.ncells), along=along)
    assert np.abs(flux - 3.7 * sweep).max() == 0.0
    # a zero shift is the same code path as no shift at all
    q = rng.standard_normal(hex2.ncells)
    assert np.array_equal(
        ctx2.primal_flux(sweep, q, along=np.zeros(hex2.nedges)),
        ctx2.primal_flux(sweep, q))


def test_first_order_flux_is_donor_value(hex2, ctx1, rng):
    sweep = _sweep(hex2, rng)
    q = rng.standard_normal(hex2.ncells)
    donor = np.where(sweep >= 0, hex2.edges[:, 0], hex2.edges[:, 1])
    assert np.abs(ctx1.primal_flux(sweep, q) - q[donor] * sweep).max() == 0.0


def test_overswept_volume_raises(hex2, ctx2, rng):
    sweep = _sweep(hex2, rng)
    sweep[0] = 2.0 * hex2.cell_area[hex2.edges[0, 0]]
    with pytest.raises(AdvectionCflError):
        ctx2.primal_flux(sweep, np.ones(hex2.ncells))


def test_cfl_check_can_be_disabled(hex2, ctx1):
    sweep = np.zeros(hex2.nedges)
    sweep[0] = 2.0 * hex2.cell_area[hex2.edges[0, 0]]
    flux = ctx1.primal_flux(sweep, np.ones(hex2.ncells), check_cfl=False)
    assert np.isfinite(flux).all()


def test_limited_values_respect_neighbourhood_bounds(hex2, ctx2, rng):
    mesh = hex2
    sweep = _sweep(mesh, rng)
    q = rng.standard_normal(mesh.ncells)
    flux = ctx2.primal_flux(sweep, q, limit=True)
    # per-cell bounds over the cell and its edge neighbours
    C = mesh.ncells
    adj = sp.csr_matrix((np.ones(mesh.nedges),
                         (mesh.edges[:, 0], mesh.edges[:, 1])), shape=(C, C))
    adj = (adj + adj.T + sp.identity(C)).tocsr()
    lo, hi = np.empty(C), np.empty(C)
    for i in range(C):
        nb = adj.indices[adj.indptr[i]:adj.indptr[i + 1]]
        lo[i], hi[i] = q[nb].min(), q[nb].max()
    donor = np.where(sweep >= 0, mesh.edges[:, 0], mesh.edges[:, 1])
    ratio = flux / np.where(sweep == 0, 1.0, sweep)
    assert np.all(ratio >= lo[donor] - 1e-13)
    assert np.all(ratio <= hi[donor] + 1e-13)


def test_dual_transport_preserves_constants(hex2, ctx2, rng):
    thickness = 1.0 + np.abs(rng.standard_normal(hex2.nverts))
    sweep = 0.01 * rng.standard_normal(hex2.nedges) \
        * hex2.dual_area[hex2.edges[:, 2]]
    flux = ctx2.dual_flux(sweep, 3.7 * np.ones(hex2.nverts), thickness)
    assert np.abs(flux - 3.7 * sweep).max() == 0.0


def test_second_order_sees_gradients(hex2, ctx1, ctx2, rng):
    # a linearly varying field must produce different fluxes once the
    # reconstruction carries a gradient
    sweep = _sweep(hex2, rng)
    q = hex2.cell_centroid[:, 2] / hex2.cell_area
    f1, f2 = ctx1.primal_flux(sweep, q), ctx2.primal_flux(sweep, q)
    assert np.abs(f1 - f2).max() > 0.0
