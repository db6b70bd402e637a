"""Assembled operator properties: discrete identities, symmetry, caching."""

import numpy as np
import pytest

from polymim.errors import CacheError
from polymim.operators import (Field, assemble, load_operators,
                               save_operators, verify_identities)

ANTISYM_KEYS = ("rot_antisym",)


@pytest.fixture(params=["hex2_ops", "cube1_ops"])
def ops(request):
    return request.getfixturevalue(request.param)


def test_identity_residuals_at_roundoff(ops):
    res = verify_identities(ops)
    for name, value in res.items():
        tol = 1e-14 if name in ANTISYM_KEYS else 1e-12
        assert value <= tol, f"{name} = {value:.3e} (tol {tol:.0e})"


def test_complexes_close_exactly(ops):
    for prod in (ops.d2 @ ops.d1, ops.d2b @ ops.d1b):
        prod = prod.tocsr()
        prod.eliminate_zeros()
        assert prod.nnz == 0


def test_dual_derivatives_are_transposes(ops):
    a = (ops.d1b + ops.d2.T).tocsr()
    b = (ops.d2b - ops.d1.T).tocsr()
    a.eliminate_zeros(), b.eliminate_zeros()
    assert a.nnz == 0 and b.nnz == 0


def test_weak_gradient_rhs_wiring(ops, rng):
    phi = rng.standard_normal(ops.mesh.ncells)
    want = ops.d1b @ (ops.mass2_inv @ phi)
    assert np.array_equal(ops.weak_gradient_rhs(phi), want)


@pytest.mark.parametrize("name", ["mass1", "mass0"])
def test_mass_matrices_symmetric_positive(ops, rng, name):
    mat = getattr(ops, name)
    sym = np.abs((mat - mat.T).toarray()).max()
    assert sym <= 1e-13 * np.abs(mat.toarray()).max()
    for _ in range(10):
        x = rng.standard_normal(mat.shape[0])
        assert x @ (mat @ x) > 0.0


def test_assembly_invariant_under_quadrature_degree(hex1):
    # the facet integrands are quadratic, so the degree-4 and degree-6
    # rules must agree to roundoff
    a, b = assemble(hex1, degree=4), assemble(hex1, degree=6)
    for name in ("mass1", "ee_mass", "rot_mass", "vd_mass", "mass0"):
        diff = np.abs((getattr(a, name) - getattr(b, name)).toarray()).max()
        ref = np.abs(getattr(a, name).toarray()).max()
        assert diff <= 1e-12 * ref, name


def test_kinetic_blocks_sum_to_flux_mass(ops, rng):
    E = ops.mesh.nedges
    diff = ops.kinetic.as_matrix(E) - ops.mass1
    assert np.abs(diff.toarray()).max() <= 1e-12 * np.abs(
        ops.mass1.toarray()).max()
    U = rng.standard_normal(E)
    cell = ops.kinetic.cell_energy(U)
    total = 0.5 * U @ (ops.mass1 @ U)
    assert abs(cell.sum() - total) <= 1e-12 * abs(total)


def test_field_shape_checking(hex2):
    Field("V2", np.zeros(hex2.ncells)).check(hex2)
    Field("V1", np.zeros(hex2.nedges)).check(hex2)
    with pytest.raises(ValueError):
        Field("V2", np.zeros(hex2.ncells + 1)).check(hex2)


def test_operator_cache_round_trip(tmp_path, hex2, hex2_ops, rng):
    path = tmp_path / "ops.npz"
    save_operators(hex2_ops, path)
    back = load_operators(path, hex2)
    for name in ("mass1", "mass2_inv", "mass0", "vc_mass", "vd_mass",
                 "cd_mass", "ee_mass", "rot_mass", "d1", "d2"):
        a, b = getattr(hex2_ops, name), getattr(back, name)
        assert (a != b).nnz == 0, name
    assert back.degree == hex2_ops.degree
    assert back.solve_residual == hex2_ops.solve_residual
    assert len(back.kinetic.groups) == len(hex2_ops.kinetic.groups)
    U = rng.standard_normal(hex2.nedges)
    assert np.allclose(back.kinetic.cell_energy(U),
                       hex2_ops.kinetic.cell_energy(U), rtol=0, atol=0)


def test_operator_cache_rejects_other_mesh(tmp_path, hex2_ops, cube1):
    path = tmp_path / "ops.npz"
    save_operators(hex2_ops, path)
    with pytest.raises(CacheError):
        load_operators(path, cube1)


def test_operator_cache_rejects_corrupt_file(tmp_path, hex2):
    path = tmp_path / "ops.npz"
    path.write_bytes(b"not an archive")
    with pytest.raises(CacheError):
        load_operators(path, hex2)
