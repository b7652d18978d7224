import numpy as np
import pytest

from qamimo.correlation import build_correlation_set
from qamimo.scenario import NetworkConfig, build_grid, build_pilot_book, drop_users


def random_psd(rng, M, rank=None, scale=1.0):
    rank = M if rank is None else rank
    X = rng.standard_normal((M, rank)) + 1j * rng.standard_normal((M, rank))
    return scale * (X @ X.conj().T) / rank


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_net():
    """Two cells sharing pilots, two users each, 8 antennas."""
    cfg = NetworkConfig(L=2, K=2, M=8, f=1, grid_shape=(1, 2), asd_deg=20.0, tx_power_dbm=20.0)
    grid = build_grid(cfg)
    drop = drop_users(cfg, grid, np.random.default_rng(7))
    corr = build_correlation_set(cfg, drop)
    pilots = build_pilot_book(cfg, grid)
    return cfg, grid, drop, corr, pilots
