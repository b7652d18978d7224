import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qamimo.quantization import (ALPHA_TABLE, BitAllocation, apply_aqnm, distortion_factor,
                                 quant_noise_cov_avg, quant_noise_cov_exact, quant_noise_diag_avg,
                                 quant_noise_diag_exact)
from qamimo.channel import draw_channels
from qamimo.correlation import local_scattering_matrix


def test_table_values():
    assert distortion_factor(1) == 0.6366
    assert distortion_factor(3) == 0.96546
    assert distortion_factor(math.inf) == 1.0


def test_formula_above_five_bits():
    assert math.isclose(distortion_factor(10), 0.99999740, abs_tol=1e-8)
    assert math.isclose(distortion_factor(10), 1 - math.pi * math.sqrt(3) / 2 * 2.0**-20, rel_tol=1e-15)


@pytest.mark.parametrize("bad", [0, -1, 0.5, 2.5, float("nan")])
def test_invalid_bits(bad):
    with pytest.raises(ValueError):
        distortion_factor(bad)


def test_monotone_and_boundary_gap():
    alphas = [distortion_factor(b) for b in range(1, 16)] + [distortion_factor(math.inf)]
    assert all(b > a for a, b in zip(alphas, alphas[1:]))
    formula5 = 1 - math.pi * math.sqrt(3) / 2 * 2.0**-10
    assert abs(formula5 - ALPHA_TABLE[5]) < 1e-3
    assert all(0 < a <= 1 for a in alphas)


def test_exact_noise_identity_quantizer():
    H = np.ones((2, 3, 2), dtype=complex)
    assert np.all(quant_noise_cov_exact(np.eye(3), H, np.ones((2, 2)), 1.0) == 0)


def test_exact_noise_hand_value():
    # M = 1, alpha = 0.5, received power 1.5 plus noise 0.5
    H = np.array([[[np.sqrt(1.5)]]])
    Rq = quant_noise_cov_exact(np.array([[0.5]]), H, np.array([[1.0]]), 0.5)
    assert math.isclose(Rq[0, 0], 0.5)


def test_exact_noise_linear_in_power(rng):
    H = rng.standard_normal((2, 4, 3)) + 1j * rng.standard_normal((2, 4, 3))
    a = np.diag(np.full(4, 0.8))
    P = rng.uniform(0.5, 2, (2, 3))
    assert np.allclose(quant_noise_cov_exact(a, H, 2 * P, 0.0), 2 * quant_noise_cov_exact(a, H, P, 0.0))


def test_negative_power_rejected():
    with pytest.raises(ValueError):
        quant_noise_cov_exact(np.eye(2), np.ones((1, 2, 1)), -np.ones((1, 1)), 1.0)


def test_avg_noise_hand_value():
    beta, p, s2, a = 2.0, 3.0, 0.5, 0.6366
    Rq = quant_noise_cov_avg(a * np.eye(3), (beta * np.eye(3))[None, None], np.array([[p]]), s2)
    assert np.allclose(Rq, a * (1 - a) * (p * beta + s2) * np.eye(3))
    assert np.all(quant_noise_cov_avg(np.eye(3), (beta * np.eye(3))[None, None], np.array([[p]]), s2) == 0)


def test_avg_is_mean_of_exact(rng):
    M = 6
    R = np.stack([local_scattering_matrix(b, phi, 0.2, M) for b, phi in [(1.0, 0.1), (0.3, -0.7), (0.6, 1.1)]])
    R = R.reshape(1, 1, 3, M, M)  # one BS, one cell, three users
    P = np.array([[1.0, 2.0, 0.5]])
    alpha = np.full(M, distortion_factor(2))
    h = draw_channels(R, rng, 10_000)[:, 0, 0]  # (N, 3, M)
    exact = quant_noise_diag_exact(alpha, h, P[0], 0.1)
    avg = quant_noise_diag_avg(alpha, R[0], P, 0.1)
    assert np.all(np.abs(exact.mean(axis=0) / avg - 1) < 0.02)


def test_apply_aqnm_transparent(rng):
    y = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    assert np.allclose(apply_aqnm(np.eye(5), y, np.zeros((5, 5)), rng), y)


def test_apply_aqnm_moments(rng):
    alpha = np.array([0.6366, 0.96546])
    rq = np.array([0.3, 0.05])
    y = np.ones((100_000, 2), dtype=complex)
    out = apply_aqnm(np.diag(alpha), y, rq, rng)
    assert np.allclose(out.mean(axis=0), alpha, atol=4 * np.sqrt(rq.max() / 1e5))
    q = out - alpha
    assert np.all(np.abs(np.mean(np.abs(q) ** 2, axis=0) / rq - 1) < 0.02)


def test_power_bookkeeping(rng):
    # E|y_tilde|^2 = alpha E|y|^2 with the exact noise covariance
    M, N = 3, 100_000
    alpha = np.array([0.6366, 0.8825, 0.96546])
    y = (rng.standard_normal((N, M)) + 1j * rng.standard_normal((N, M))) * np.sqrt([0.5, 1.0, 2.0])
    rq = alpha * (1 - alpha) * np.abs(y) ** 2
    out = apply_aqnm(alpha, y, rq, rng)
    lhs = np.mean(np.abs(out) ** 2, axis=0)
    rhs = alpha * np.mean(np.abs(y) ** 2, axis=0)
    assert np.all(np.abs(lhs / rhs - 1) < 0.02)


@given(st.integers(1, 40))
def test_zero_noise_iff_ideal(b):
    a = distortion_factor(b)
    d = quant_noise_diag_avg(np.array([a, 1.0]), np.eye(2)[None, None], np.ones((1, 1)), 1.0)
    assert d[1] == 0 and (d[0] == 0) == (a == 1.0)


def test_bit_allocation_forms():
    assert BitAllocation.from_spec(3, 2, 4).bits.shape == (2, 4)
    per_bs = BitAllocation.from_spec([1, "inf"], 2, 3)
    assert np.allclose(per_bs.alpha, [[0.6366] * 3, [1.0] * 3])
    full = BitAllocation.from_spec([[1, 2], [3, 4]], 2, 2)
    assert full.alpha[1, 1] == 0.990503
    assert not BitAllocation.uniform("inf", 1, 2).quantized
    with pytest.raises(ValueError):
        BitAllocation.from_spec([1, 2, 3], 2, 2)
    with pytest.raises(ValueError):
        BitAllocation.uniform(0, 1, 1)
