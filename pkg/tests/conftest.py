import warnings

import numpy as np
import pytest

from elastoacoustic import meshing as msh
from elastoacoustic.assembly import MaterialField, build_block_system

# the solid-only fixtures intentionally have no Gamma_D in some tests
warnings.filterwarnings("ignore", message="no Gamma_D edges")

PAPER_MATERIALS = dict(E=1.44e11, nu=0.35, rho_s=7700.0, rho_f=1000.0,
                       c=1430.0, g=9.8)


@pytest.fixture(scope="session")
def materials():
    return MaterialField(**PAPER_MATERIALS)


@pytest.fixture(scope="session")
def unit_square_mesh():
    return msh.build_cavity_mesh(msh.unit_square_solid(), 1)


@pytest.fixture(scope="session")
def omega1_n2():
    return msh.build_cavity_mesh(msh.omega1(), 2)


@pytest.fixture(scope="session")
def omega1_n1():
    # small enough for the dense oracle with either family
    return msh.build_cavity_mesh(msh.omega1(), 1)


@pytest.fixture(scope="session")
def omega2_n4():
    return msh.build_cavity_mesh(msh.omega2(), 4)


@pytest.fixture(scope="session")
def fluid_square_n3():
    return msh.build_cavity_mesh(msh.unit_square_fluid(), 3)


@pytest.fixture(scope="session")
def coupled_system_th(omega1_n2, materials):
    return build_block_system(omega1_n2, "taylor-hood", materials)


@pytest.fixture(scope="session")
def coupled_system_mini(omega1_n2, materials):
    return build_block_system(omega1_n2, "mini", materials)


def rng(seed=0):
    return np.random.default_rng(seed)
