import numpy as np
import pytest

from lossfda.synthetic import SynthSpec, generate, make_eigenfunctions


@pytest.fixture
def rng():
    return np.random.default_rng(20240915)


@pytest.fixture(scope="session")
def small_dataset():
    """30 companies, 12 accident years, masked at 2006 (K_true = 2)."""
    spec = SynthSpec(
        n_companies=30, first_year=1995, n_years=12, calendar_year=2006,
        eigenfunctions=make_eigenfunctions(2),
        eigenvalues=np.array([4e-4, 1e-4]),
        seed=42,
    )
    return generate(spec)


@pytest.fixture(scope="session")
def small_curves(small_dataset):
    return small_dataset.masked_curves()


@pytest.fixture(scope="session")
def complete_curves(small_curves):
    return [c for c in small_curves if c.is_complete]
