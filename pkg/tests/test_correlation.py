import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from qamimo.correlation import (dump_matrix_csv, load_matrix_csv, local_scattering_matrix, quadrature_rule,
                                regularized_inverse)
from qamimo.scenario import NetworkConfig, build_grid, drop_from_positions
from qamimo.correlation import build_correlation_set


def _direct_entry(d, phi, asd):
    """Adaptive quadrature of E[exp(j pi d sin(phi + delta))], delta ~ N(0, asd^2)."""
    pdf = lambda x: math.exp(-0.5 * (x / asd) ** 2) / (math.sqrt(2 * math.pi) * asd)
    re = quad(lambda x: math.cos(math.pi * d * math.sin(phi + x)) * pdf(x), -12 * asd, 12 * asd,
              epsabs=1e-14, epsrel=1e-12, limit=400)[0]
    im = quad(lambda x: math.sin(math.pi * d * math.sin(phi + x)) * pdf(x), -12 * asd, 12 * asd,
              epsabs=1e-14, epsrel=1e-12, limit=400)[0]
    return re + 1j * im


def test_zero_asd_broadside_is_all_beta():
    R = local_scattering_matrix(2.0, 0.0, 0.0, 5)
    assert np.allclose(R, 2.0)


@pytest.mark.parametrize("asd_deg,phi_deg,M", [(10, 30, 4), (10, 30, 16), (40, -70, 32), (2, 10, 8)])
def test_against_adaptive_quadrature(asd_deg, phi_deg, M):
    asd, phi = math.radians(asd_deg), math.radians(phi_deg)
    R = local_scattering_matrix(1.0, phi, asd, M)
    for d in range(M):
        ref = _direct_entry(d, phi, asd)
        assert abs(R[d, 0] - ref) <= 1e-8 * max(1.0, abs(ref))


def test_quadrature_weights_sum_to_one():
    for asd in (0.01, 0.2, 0.7):
        _, w = quadrature_rule(asd, 64)
        assert math.isclose(np.sum(w), 1.0, rel_tol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 10.0), st.floats(-math.pi / 2, math.pi / 2), st.floats(0, 1.0), st.integers(1, 24))
def test_structure(beta, phi, asd, M):
    R = local_scattering_matrix(beta, phi, asd, M)
    assert np.max(np.abs(R - R.conj().T)) < 1e-12 * beta
    assert np.allclose(np.diag(R).real, beta, rtol=1e-12)
    assert np.linalg.eigvalsh(R).min() >= -1e-10 * beta
    for d in range(M):
        assert np.allclose(np.diagonal(R, -d), R[d, 0], rtol=0, atol=1e-15 * beta)


def test_monotone_decorrelation():
    # the magnitude only decreases while the entry stays positive (up to ~43 deg)
    mags = [abs(local_scattering_matrix(1.0, 0.0, math.radians(a), 8)[1, 0]) for a in np.linspace(0, 40, 41)]
    assert all(b <= a + 1e-12 for a, b in zip(mags, mags[1:]))
    vals = [local_scattering_matrix(1.0, 0.0, math.radians(a), 8)[1, 0].real for a in np.linspace(0, 60, 61)]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def test_bad_beta():
    with pytest.raises(ValueError):
        local_scattering_matrix(0.0, 0.0, 0.1, 4)


def test_mirror_angles_give_conjugates():
    R1 = local_scattering_matrix(1.0, 0.4, 0.2, 8)
    R2 = local_scattering_matrix(1.0, -0.4, 0.2, 8)
    assert np.allclose(R1, R2.conj(), atol=1e-14)


def test_correlation_set_trace_and_psd():
    cfg = NetworkConfig(L=1, K=1, M=8, f=1)
    grid = build_grid(cfg)
    drop = drop_from_positions(grid, grid.centers[:, None, :] + np.array([0.03, 0.04]))
    cs = build_correlation_set(cfg, drop)
    R = cs.R[0, 0, 0]
    assert math.isclose(np.sum(np.linalg.eigvalsh(R)), cfg.M * cs.beta[0, 0, 0], rel_tol=1e-10)
    assert np.linalg.eigvalsh(R).min() > -1e-10 * cs.beta[0, 0, 0]
    assert math.isclose(cs.angles[0, 0, 0], math.atan2(0.04, 0.03))


def test_regularized_inverse_identity():
    inv, eps = regularized_inverse(3.0 * np.eye(4), beta=3.0)
    assert np.allclose(inv, np.eye(4) / 3.0, rtol=1e-9)


@pytest.mark.parametrize("phi", [0.0, 0.3, 1.0])
def test_regularized_inverse_rank_one(phi):
    R = local_scattering_matrix(1.0, phi, 0.0, 2)
    inv, eps = regularized_inverse(R, beta=1.0)
    assert np.all(np.isfinite(inv))
    assert np.max(np.abs(R @ inv @ R - R)) < 1e-6


@pytest.mark.parametrize("M", [4, 8, 16])
def test_regularized_inverse_rank_one_roundoff_floor(M):
    # evaluating R R^-1 R in double precision costs about M u / eps
    R = local_scattering_matrix(1.0, 0.3, 0.0, M)
    inv, eps = regularized_inverse(R, beta=1.0)
    floor = 10 * M * np.finfo(float).eps / eps
    assert np.max(np.abs(R @ inv @ R - R)) < floor


def test_regularized_inverse_well_conditioned(rng):
    X = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    R = X @ X.conj().T + 5 * np.eye(5)
    inv, _ = regularized_inverse(R)
    assert np.allclose(inv, np.linalg.inv(R), rtol=1e-8, atol=1e-10)


def test_csv_roundtrip(tmp_path):
    R = local_scattering_matrix(1.0, 0.3, 0.1, 4)
    back = load_matrix_csv(dump_matrix_csv(tmp_path / "R.csv", R))
    assert np.allclose(back, R, rtol=1e-14)
