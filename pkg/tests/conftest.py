import numpy as np
import pytest


def random_density_matrix(dim: int, rng: np.random.Generator) -> np.ndarray:
    """A generic full-rank valid state: A A^dagger normalized to unit trace."""
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


@pytest.fixture
def rng():
    return np.random.default_rng(20240715)
