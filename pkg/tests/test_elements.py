"""Compound-basis construction and its collapse onto incidence matrices.

The flux and nodal bases are built from local interior solves, yet their
facet-level divergence and rotated gradient must reduce to the integer
incidence matrices scaled by cell areas.  These identities are the
mechanism behind every conservation property downstream, so they are
checked directly at the sub-element level here.
"""

import numpy as np
import pytest

from polymim.elements import (center_laplace_value, grad_perp_matrix,
                              tri_div_matrix)
from polymim.quadrature import gauss_legendre_3pt, triangle_rule


def _relmax(diff, ref):
    d = np.abs(diff.toarray() if hasattr(diff, "toarray") else diff).max()
    r = np.abs(ref.toarray() if hasattr(ref, "toarray") else ref).max()
    return d / max(r, 1e-300)


@pytest.fixture(params=["hex2_ops", "cube1_ops"])
def ops(request):
    return request.getfixturevalue(request.param)


def test_primal_flux_divergence_is_incidence(ops):
    mesh, b = ops.mesh, ops.bases
    div = tri_div_matrix(mesh)
    assert _relmax(div @ b.U1 - b.A2 @ ops.d2, b.A2 @ ops.d2) < 1e-12


def test_dual_flux_divergence_is_incidence(ops):
    mesh, b = ops.mesh, ops.bases
    div = tri_div_matrix(mesh)
    assert _relmax(div @ b.W1 - b.B2 @ ops.d2b, b.B2 @ ops.d2b) < 1e-12


def test_primal_nodal_gradient_is_incidence(ops):
    mesh, b = ops.mesh, ops.bases
    gp = grad_perp_matrix(mesh)
    assert _relmax(gp @ b.G0 + b.U1 @ ops.d1, b.U1 @ ops.d1) < 1e-12


def test_dual_nodal_gradient_is_incidence(ops):
    mesh, b = ops.mesh, ops.bases
    gp = grad_perp_matrix(mesh)
    assert _relmax(gp @ b.C0 + b.W1 @ ops.d1b, b.W1 @ ops.d1b) < 1e-12


def test_nodal_bases_partition_unity(ops):
    mesh, b = ops.mesh, ops.bases
    ones_v = b.G0 @ np.ones(mesh.nverts)
    ones_c = b.C0 @ np.ones(mesh.ncells)
    assert np.abs(ones_v - 1.0).max() < 1e-13
    assert np.abs(ones_c - 1.0).max() < 1e-13


def test_interior_solve_residuals_small(ops):
    assert ops.solve_residual < 1e-12


def _hex_fan(perturb=0.0, seed=0):
    ang = np.deg2rad(60.0 * np.arange(6))
    corners = np.stack([np.cos(ang), np.sin(ang), np.zeros(6)], axis=1)
    if perturb:
        rng = np.random.default_rng(seed)
        corners += perturb * rng.standard_normal((6, 3))
        corners[:, 2] = 0.0
    mids = 0.5 * (corners + np.roll(corners, -1, axis=0))
    ring = np.empty((12, 3))
    ring[0::2], ring[1::2] = corners, mids
    return ring


def test_center_weight_regular_hexagon():
    # on a regular hexagon fan the centre couples only to the side
    # midpoints, each with weight 1/6; corners drop out entirely
    ring = _hex_fan()
    center = np.zeros(3)
    w_corner = center_laplace_value(ring, center, np.eye(12)[0])
    w_mid = center_laplace_value(ring, center, np.eye(12)[1])
    assert abs(w_corner) < 1e-14
    assert abs(w_mid - 1.0 / 6.0) < 1e-14
    assert abs(center_laplace_value(ring, center, np.ones(12)) - 1.0) < 1e-14


def test_center_value_exact_for_linear_data():
    ring = _hex_fan(perturb=0.1, seed=3)
    center = np.array([0.02, -0.01, 0.0])
    grad, const = np.array([0.3, -1.2, 0.0]), 0.7
    got = center_laplace_value(ring, center, ring @ grad + const)
    assert abs(got - (center @ grad + const)) < 1e-12


@pytest.mark.parametrize("degree", [4, 6])
def test_triangle_rule_exact_for_quartics(degree):
    pts, wts = triangle_rule(degree)
    assert abs(wts.sum() - 1.0) < 1e-14
    # barycentric monomial averages: l0^2 l1 l2 -> 1/180, l0^4 -> 1/15
    m1 = (wts * pts[:, 0] ** 2 * pts[:, 1] * pts[:, 2]).sum()
    m2 = (wts * pts[:, 0] ** 4).sum()
    assert abs(m1 - 1.0 / 180.0) < 1e-14
    assert abs(m2 - 1.0 / 15.0) < 1e-13


def test_line_rule_exact_to_degree_five():
    x, w = gauss_legendre_3pt()
    assert abs(w.sum() - 1.0) < 1e-14
    assert abs((w * x ** 5).sum() - 1.0 / 6.0) < 1e-14
