"""Additive quantization noise model (AQNM) for per-antenna ADCs.

An ADC with ``b`` bits is linearized as ``y -> alpha*y + q`` with ``q``
Gaussian, uncorrelated with ``y`` and covariance
``alpha*(1 - alpha)*diag(E[y y^H])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: Distortion factors for 1..5 bits.
ALPHA_TABLE = {1: 0.6366, 2: 0.8825, 3: 0.96546, 4: 0.990503, 5: 0.997501}

INFINITE_BITS = math.inf


def _alpha_formula(b):
    return 1.0 - (math.pi * math.sqrt(3.0) / 2.0) * 2.0 ** (-2.0 * b)


def distortion_factor(bits):
    """Distortion factor ``alpha`` for ``bits`` (scalar or array).

    Table values up to 5 bits, ``1 - (pi*sqrt(3)/2)*2^(-2b)`` above, exactly
    1 for ``math.inf`` (no quantization).
    """
    b = np.asarray(bits, dtype=float)
    if np.any(np.isnan(b)) or np.any(b < 1):
        raise ValueError("bits must be >= 1 (or inf)")
    finite = np.isfinite(b)
    if np.any(finite & (b != np.round(b))):
        raise ValueError("bits must be integers")
    out = np.ones_like(b)
    for nb, a in ALPHA_TABLE.items():
        out[b == nb] = a
    high = finite & (b > 5)
    out[high] = _alpha_formula(b[high])
    return float(out) if out.ndim == 0 else out


def _parse_bits(value):
    if value is None:
        return math.inf
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "none", "unquantized"):
            return math.inf
        return float(int(value))
    return float(value)


@dataclass(frozen=True)
class BitAllocation:
    """Quantization bits per BS antenna, shape ``(L, M)``; ``inf`` means ideal."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=float)
        distortion_factor(b)  # validates
        object.__setattr__(self, "bits", b)

    @classmethod
    def uniform(cls, bits, L: int, M: int) -> "BitAllocation":
        return cls(np.full((L, M), _parse_bits(bits)))

    @classmethod
    def from_spec(cls, spec, L: int, M: int) -> "BitAllocation":
        """Scalar (uniform), length-L list (per BS) or ``L x M`` nested list."""
        if np.isscalar(spec) or spec is None or isinstance(spec, str):
            return cls.uniform(spec, L, M)
        rows = list(spec)
        if len(rows) != L:
            raise ValueError(f"bit allocation needs {L} entries, got {len(rows)}")
        if all(np.isscalar(r) or r is None or isinstance(r, str) for r in rows):
            return cls(np.array([[_parse_bits(r)] * M for r in rows]))
        arr = np.array([[_parse_bits(v) for v in r] for r in rows])
        if arr.shape != (L, M):
            raise ValueError(f"per-antenna bit matrix must be {L}x{M}")
        return cls(arr)

    @property
    def alpha(self) -> np.ndarray:
        return distortion_factor(self.bits)

    def sigma_ad(self, j: int) -> np.ndarray:
        return np.diag(self.alpha[j])

    @property
    def quantized(self) -> bool:
        return bool(np.any(np.isfinite(self.bits)))


def _diag_power(alpha, power_diag, sigma2):
    alpha = np.asarray(alpha, dtype=float)
    return alpha * (1.0 - alpha) * (np.real(power_diag) + sigma2)


def quant_noise_diag_exact(alpha, h, powers, sigma2):
    """Diagonal of the instantaneous quantization noise covariance.

    ``h`` holds the channels of every user into one BS with the user axes
    just before the antenna axis: ``(..., n_users..., M)``; ``powers`` must
    broadcast against the user axes.  Batched over leading axes.
    """
    h = np.asarray(h)
    p = np.asarray(powers, dtype=float)
    if np.any(p < 0):
        raise ValueError("powers must be non-negative")
    user_axes = tuple(range(h.ndim - 1 - p.ndim, h.ndim - 1))
    rx = np.sum(p[..., None] * np.abs(h) ** 2, axis=user_axes)
    return _diag_power(alpha, rx, sigma2)


def quant_noise_cov_exact(sigma_ad, H_all, P, sigma2) -> np.ndarray:
    """``Sigma(I - Sigma) diag(sum_i H_i P_i H_i^H + sigma2 I)`` for one BS.

    ``H_all`` is ``(L, M, K)`` (or a list of ``M x K`` blocks), ``P`` is
    ``(L, K)``.
    """
    alpha = np.diag(np.asarray(sigma_ad, dtype=float)) if np.ndim(sigma_ad) == 2 else np.asarray(sigma_ad)
    H = np.asarray(H_all)
    h = np.swapaxes(H, -1, -2)  # (L, K, M)
    return np.diag(quant_noise_diag_exact(alpha, h, P, sigma2))


def quant_noise_diag_avg(alpha, R_bs, powers, sigma2):
    """Diagonal of ``Sigma(I - Sigma) diag(sum p R + sigma2 I)``.

    ``R_bs`` is ``(L, K, M, M)`` (all users into one BS), ``powers`` ``(L, K)``.
    """
    p = np.asarray(powers, dtype=float)
    if np.any(p < 0):
        raise ValueError("powers must be non-negative")
    diag = np.einsum("ik,ikmm->m", p, R_bs)
    return _diag_power(alpha, diag, sigma2)


def quant_noise_cov_avg(sigma_ad, R_bs, P, sigma2) -> np.ndarray:
    alpha = np.diag(np.asarray(sigma_ad, dtype=float)) if np.ndim(sigma_ad) == 2 else np.asarray(sigma_ad)
    return np.diag(quant_noise_diag_avg(alpha, R_bs, P, sigma2))


def apply_aqnm(sigma_ad, y, R_q, rng: np.random.Generator) -> np.ndarray:
    """``alpha * y + q`` with ``q ~ CN(0, R_q)`` drawn independently of ``y``.

    ``R_q`` may be the diagonal matrix or its diagonal (broadcast over
    leading axes of ``y``).
    """
    alpha = np.diag(np.asarray(sigma_ad, dtype=float)) if np.ndim(sigma_ad) == 2 else np.asarray(sigma_ad)
    var = np.asarray(R_q)
    if var.ndim >= 2 and var.shape[-1] == var.shape[-2] and var.shape[-1] == np.shape(y)[-1] and np.ndim(y) == 1:
        var = np.real(np.diagonal(var, axis1=-2, axis2=-1))
    var = np.real(var)
    y = np.asarray(y)
    q = np.sqrt(var / 2.0) * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return alpha * y + q
