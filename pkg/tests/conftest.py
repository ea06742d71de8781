import numpy as np
import pytest

from wkbtorus.grid import make_grid
from wkbtorus.hamiltonian import Potential
from wkbtorus.weak_kam import solve_weak_kam_plus


@pytest.fixture(scope="session")
def cosine():
    return Potential.cosine()


@pytest.fixture(scope="session")
def S_cos(cosine):
    """S+ for V = cos x on the 1024-node classical grid."""
    return solve_weak_kam_plus(cosine, 1.0, grid=make_grid(1, 1024))


@pytest.fixture(scope="session")
def S_cos_coarse(cosine):
    return solve_weak_kam_plus(cosine, 1.0, grid=make_grid(1, 256))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
