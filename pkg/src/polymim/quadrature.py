"""Quadrature rules and line/area integration helpers.

Triangle rules are symmetric Gauss rules with weights summing to one, so
for a flat facet with area ``A``::

    integral(f) = A * sum_q w_q * f(x_q)

All integrands that arise from products of the compound bases are at most
quadratic per facet, hence integrated exactly by the degree-4 rule.  The
degree-6 rule exists purely as an independent check.

The chord helpers integrate analytic velocity fields over the supermesh
polylines; they back both field initialisation and the solver probe
construction.
"""

import numpy as np


def _perm3(a, b):
    return [(a, b, b), (b, a, b), (b, b, a)]


def _perm6(a, b, c):
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def triangle_rule(degree=4):
    """Return (bary, weights): barycentric points (nq, 3) and weights (nq,)."""
    if degree <= 4:
        pts = _perm3(0.108103018168070, 0.445948490915965)
        wts = [0.223381589678011] * 3
        pts += _perm3(0.816847572980459, 0.091576213509771)
        wts += [0.109951743655322] * 3
    elif degree <= 6:
        pts = _perm3(0.501426509658179, 0.249286745170910)
        wts = [0.116786275726379] * 3
        pts += _perm3(0.873821971016996, 0.063089014491502)
        wts += [0.050844906370207] * 3
        pts += _perm6(0.053145049844816, 0.310352451033785, 0.636502499121399)
        wts += [0.082851075618374] * 6
    else:
        raise ValueError(f"no rule of degree {degree}")
    bary = np.asarray(pts, dtype=np.float64)
    w = np.asarray(wts, dtype=np.float64)
    return bary, w / w.sum()


def gauss_legendre_3pt():
    """3-point Gauss-Legendre rule on [0, 1]: (points, weights), weights sum to 1."""
    s = np.sqrt(0.6)
    x = np.array([0.5 - 0.5 * s, 0.5, 0.5 + 0.5 * s])
    w = np.array([5.0, 8.0, 5.0]) / 18.0
    return x, w


def _chord_quad(p, q):
    """Quadrature points, lengths and unit tangents for straight chords.

    ``p, q``: (n, 3) endpoints.  Returns (x (n, nq, 3), dl (n, nq),
    tangent (n, 3)).
    """
    s, w = gauss_legendre_3pt()
    seg = q - p
    ln = np.linalg.norm(seg, axis=-1)
    tan = seg / ln[:, None]
    x = p[:, None, :] + s[None, :, None] * seg[:, None, :]
    return x, w[None, :] * ln[:, None], tan


def chord_normal_flux(p, q, velocity):
    """Flux of an analytic velocity field through straight chords.

    The chord normal is tangent x radial, evaluated pointwise, which matches
    the edge-flux convention of the compound flux elements.  ``velocity``
    maps (n, 3) points to (n, 3) vectors; accepts broadcasting over a
    leading axis of quadrature points.
    """
    x, dl, tan = _chord_quad(p, q)
    u = velocity(x.reshape(-1, 3)).reshape(x.shape)
    rad = x / np.linalg.norm(x, axis=-1, keepdims=True)
    nu = np.cross(tan[:, None, :], rad)
    nu /= np.linalg.norm(nu, axis=-1, keepdims=True)
    return np.einsum("nqv,nqv,nq->n", u, nu, dl)


def chord_circulation(p, q, velocity):
    """Line integral of the tangential velocity along straight chords p->q."""
    x, dl, tan = _chord_quad(p, q)
    u = velocity(x.reshape(-1, 3)).reshape(x.shape)
    return np.einsum("nqv,nv,nq->n", u, tan, dl)


def edge_normal_flux(mesh, velocity, edges=None):
    """Net flux through primal edges (tail -> crossing -> head polyline)."""
    if edges is None:
        edges = np.arange(mesh.nedges)
    edges = np.asarray(edges)
    tail = mesh.verts[mesh.edges[edges, 2]]
    head = mesh.verts[mesh.edges[edges, 3]]
    mid = mesh.crossings[edges]
    return (chord_normal_flux(tail, mid, velocity)
            + chord_normal_flux(mid, head, velocity))


def dual_edge_circulation(mesh, velocity, edges=None):
    """Circulation along dual edges (left centre -> crossing -> right centre)."""
    if edges is None:
        edges = np.arange(mesh.nedges)
    edges = np.asarray(edges)
    left = mesh.dual_verts[mesh.edges[edges, 0]]
    right = mesh.dual_verts[mesh.edges[edges, 1]]
    mid = mesh.crossings[edges]
    return (chord_circulation(left, mid, velocity)
            + chord_circulation(mid, right, velocity))


def _facet_integrals(mesh, scalar, degree):
    bary, w = triangle_rule(degree)
    xyz = mesh.node_xyz[mesh.tri_nodes]
    acc = np.zeros(len(mesh.tri_area))
    for q in range(len(w)):
        xq = np.einsum("a,tav->tv", bary[q], xyz)
        acc += w[q] * scalar(xq)
    return acc * mesh.tri_area


def cell_integrals(mesh, scalar, degree=4):
    """(C,) integrals of an analytic scalar over the primal cells."""
    vals = _facet_integrals(mesh, scalar, degree)
    return np.bincount(mesh.tri_cell, weights=vals, minlength=mesh.ncells)


def dual_cell_integrals(mesh, scalar, degree=4):
    """(V,) integrals of an analytic scalar over the dual cells."""
    vals = _facet_integrals(mesh, scalar, degree)
    return np.bincount(mesh.tri_dual, weights=vals, minlength=mesh.nverts)
