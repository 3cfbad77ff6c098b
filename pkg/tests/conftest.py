import numpy as np
import pytest

from llns.spectral import SpectralField, TorusGrid, leray_project, project_cutoff


def random_field(d, n, m=None, seed=0, div_free=True, zero_mean=True):
    """Real random field, optionally Leray-projected and band-limited to 2^m."""
    rng = np.random.default_rng(seed)
    grid = TorusGrid(d, n)
    x = rng.standard_normal((d,) + grid.shape)
    from llns.spectral import to_spectral

    f = to_spectral(x)
    nyq = grid.kinf(True) >= n // 2
    f = f.with_coeffs(np.where(nyq, 0, f.coeffs))
    if m is not None:
        f = project_cutoff(f, m)
    if div_free:
        f = leray_project(f)
    if zero_mean:
        c = f.coeffs.copy()
        c[(slice(None),) + (0,) * d] = 0
        f = f.with_coeffs(c)
    return f


@pytest.fixture
def rand_field():
    return random_field


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance checks")
