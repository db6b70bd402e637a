"""Shared fixtures: small meshes with assembled operators.

Everything here is a few hundred cells at most, so the unit-test files
stay fast.  The large fixed-size runs live inside test_acceptance.py
with their own module-scoped fixtures.
"""

import numpy as np
import pytest

from polymim.linsolve import SolverSuite
from polymim.mesh.generators import mesh_for
from polymim.operators import assemble
from polymim.swe import Planet


@pytest.fixture(scope="session")
def hex1():
    return mesh_for("hex", 1)


@pytest.fixture(scope="session")
def hex2():
    return mesh_for("hex", 2)


@pytest.fixture(scope="session")
def cube1():
    return mesh_for("cube", 1)


@pytest.fixture(scope="session")
def hex2_ops(hex2):
    return assemble(hex2)


@pytest.fixture(scope="session")
def cube1_ops(cube1):
    return assemble(cube1)


@pytest.fixture(scope="session")
def hex2_suite(hex2_ops):
    return SolverSuite.build(hex2_ops)


@pytest.fixture(scope="session")
def earth_hex2():
    return mesh_for("hex", 2, radius=Planet.radius)


@pytest.fixture(scope="session")
def earth_hex2_ops(earth_hex2):
    return assemble(earth_hex2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
