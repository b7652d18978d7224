"""LMMSE channel estimation from quantized pilots under pilot contamination.

BS ``j`` correlates the quantized pilot block with pilot ``t`` and obtains::

    y_t = tau_p * Sigma * sum_{(l,k') on t} sqrt(p_lk') h_{j,lk'} + Sigma n_t + q_t

with ``n_t ~ CN(0, sigma2 tau_p I)`` and ``q_t ~ CN(0, tau_p R_q)``.  The
quantization-aware estimate of user ``(i, k)`` on pilot ``t`` is
``h_hat = sqrt(p) R Sigma Psi y_t`` where

    Psi = (sum_{(l,k') on t} p tau_p Sigma R_{j,lk'} Sigma + sigma2 Sigma^2 + Rq_bar)^-1

The sum runs over *every* user on the pilot, the target included: that
inverse is ``tau_p`` times the inverse covariance of ``y_t``, which is what
makes ``B + C = R`` and the estimation error orthogonal to the estimate.
Because ``Psi`` then depends only on the pilot, it is shared by all users
on it and co-pilot estimates are linearly related.

The quantization-unaware baseline uses the same structure with ``Sigma = I``
and no quantization term while still receiving the quantized signal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .channel import complex_normal
from .correlation import CorrelationSet, regularized_inverse
from .quantization import BitAllocation, quant_noise_diag_avg, quant_noise_diag_exact
from .scenario import PilotBook


def _herm(A):
    return 0.5 * (A + np.swapaxes(A.conj(), -1, -2))


def _hpd_inverse(A: np.ndarray) -> np.ndarray:
    """Inverse of a stack of Hermitian positive-definite matrices.

    Falls back to a regularized inverse (with a warning) for matrices that
    are numerically singular.
    """
    A = _herm(np.asarray(A))
    try:
        np.linalg.cholesky(A)
        return _herm(np.linalg.inv(A))
    except np.linalg.LinAlgError:
        pass
    flat = A.reshape(-1, *A.shape[-2:])
    out = np.empty_like(flat)
    for n, a in enumerate(flat):
        try:
            np.linalg.cholesky(a)
            out[n] = _herm(np.linalg.inv(a))
        except np.linalg.LinAlgError:
            out[n], eps = regularized_inverse(a)
            warnings.warn(f"singular matrix regularized with eps={eps:g}", RuntimeWarning, stacklevel=3)
    return out.reshape(A.shape)


def _as_alpha(bits, L, M) -> np.ndarray:
    if isinstance(bits, BitAllocation):
        return bits.alpha.reshape(L, M)
    return BitAllocation.from_spec(bits, L, M).alpha


def _pilot_matrix(pilots: PilotBook) -> np.ndarray:
    """``(tau_p, L, K)`` 0/1 membership of every user in every pilot."""
    t = np.arange(pilots.tau_p)
    return (pilots.pilot_index[None, :, :] == t[:, None, None]).astype(float)


def _pilot_sums(R, pilots: PilotBook, powers):
    """``S[j, t] = sum_{(l,k') on t} p_lk' R[j, l, k']``, shape ``(L, tau_p, M, M)``."""
    return np.einsum("tik,ik,jikmn->jtmn", _pilot_matrix(pilots), powers, R)


def build_psi(correlation: CorrelationSet | np.ndarray, pilots: PilotBook, bits, powers, sigma2: float,
              j: int, ik: tuple[int, int], include_target: bool = True) -> np.ndarray:
    """Filter core ``Psi`` at BS ``j`` for user ``ik = (i, k)``.

    ``include_target=False`` leaves the target's own term out of the sum;
    the resulting matrix is *not* the LMMSE filter core and is only
    provided for comparison.
    """
    R = correlation.R if isinstance(correlation, CorrelationSet) else np.asarray(correlation)
    L, _, K, M, _ = R.shape
    powers = np.asarray(powers, dtype=float)
    alpha = _as_alpha(bits, L, M)[j]
    tau_p = pilots.tau_p
    i, k = ik
    members = [u for u in pilots.sets[(i, k)] if include_target or u != (i, k)]
    acc = np.zeros((M, M), dtype=complex)
    for (l, kk) in members:
        acc += powers[l, kk] * R[j, l, kk]
    rq = quant_noise_diag_avg(alpha, R[j], powers, sigma2)
    arg = tau_p * alpha[:, None] * acc * alpha[None, :] + np.diag(sigma2 * alpha**2 + rq)
    return _hpd_inverse(arg)


def estimate_channel(y, Psi, R, sigma_ad, p: float) -> np.ndarray:
    """``sqrt(p) R Sigma Psi y``; ``y`` may carry leading batch axes."""
    alpha = np.diag(sigma_ad) if np.ndim(sigma_ad) == 2 else np.asarray(sigma_ad)
    W = np.sqrt(p) * (R * alpha[None, :]) @ Psi
    return np.einsum("mn,...n->...m", W, y)


def estimate_channel_unaware(y, Psi_u, R, p: float) -> np.ndarray:
    """Baseline ``sqrt(p) R Psi_u y`` that ignores the quantizer."""
    W = np.sqrt(p) * R @ Psi_u
    return np.einsum("mn,...n->...m", W, y)


def nmse(C, R) -> float:
    """``tr(C) / tr(R)``."""
    trR = float(np.real(np.trace(R)))
    if trR <= 0:
        raise ValueError("tr(R) must be positive")
    return float(np.real(np.trace(C))) / trR


@dataclass
class EstimationStats:
    """Second-order statistics of one estimator at one drop.

    Arrays are indexed ``[j, i, k]`` (BS, cell, user); ``Psi`` is indexed
    ``[j, t]`` by pilot.  For the unaware estimator ``B`` and ``C`` are the
    covariances the receiver *believes* in; ``C_true`` is the actual error
    covariance.
    """

    R: np.ndarray
    alpha: np.ndarray  # (L, M)
    powers: np.ndarray  # (L, K)
    sigma2: float
    pilots: PilotBook
    rq_avg: np.ndarray  # (L, M), diagonal of the averaged quantization noise
    Psi: np.ndarray  # (L, tau_p, M, M)
    W: np.ndarray  # (L, L, K, M, M), h_hat = W @ y_pilot
    B: np.ndarray
    C: np.ndarray
    C_true: np.ndarray
    aware: bool = True

    @property
    def L(self) -> int:
        return self.R.shape[0]

    @property
    def K(self) -> int:
        return self.R.shape[2]

    @property
    def M(self) -> int:
        return self.R.shape[-1]

    @property
    def tau_p(self) -> int:
        return self.pilots.tau_p

    def quant_term(self) -> np.ndarray:
        """Diagonals of ``Sigma^-1 Rq_bar Sigma^-1`` per BS, shape ``(L, M)``."""
        return self.rq_avg / self.alpha**2

    def nmse(self) -> np.ndarray:
        """True NMSE per ``[j, i, k]``."""
        trC = np.real(np.trace(self.C_true, axis1=-2, axis2=-1))
        trR = np.real(np.trace(self.R, axis1=-2, axis2=-1))
        return trC / trR

    def cross_covariance(self, j: int, ik, ik2) -> np.ndarray:
        """``E{h_hat_{j,ik2} h_hat_{j,ik}^H}``; zero unless the users share a pilot."""
        return cross_covariance(self, j, ik, ik2)


def _pilot_cov(R, alpha, powers, sigma2, pilots, rq):
    """``Cov(y_t)/tau_p`` at every BS and pilot, shape ``(L, tau_p, M, M)``."""
    S = _pilot_sums(R, pilots, powers)
    a = alpha[:, None, :]
    M = R.shape[-1]
    eye = np.eye(M)
    noise = (sigma2 * alpha**2 + rq)[:, None, :, None] * eye
    return pilots.tau_p * a[..., :, None] * S * a[..., None, :] + noise


def estimation_statistics(correlation: CorrelationSet | np.ndarray, pilots: PilotBook, bits, powers,
                          sigma2: float, aware: bool = True) -> EstimationStats:
    """Filters and covariances for every channel of the network."""
    R = correlation.R if isinstance(correlation, CorrelationSet) else np.asarray(correlation)
    L, _, K, M, _ = R.shape
    powers = np.asarray(powers, dtype=float)
    if np.any(powers < 0):
        raise ValueError("powers must be non-negative")
    alpha = _as_alpha(bits, L, M)
    tau_p = pilots.tau_p
    rq = np.stack([quant_noise_diag_avg(alpha[j], R[j], powers, sigma2) for j in range(L)])
    cov_y = _pilot_cov(R, alpha, powers, sigma2, pilots, rq)  # true Cov(y_t) / tau_p
    used = np.zeros(tau_p, dtype=bool)
    used[pilots.used_pilots()] = True

    def inv_used(A):
        out = np.zeros_like(A)
        out[:, used] = _hpd_inverse(A[:, used])
        return out

    t_of = pilots.pilot_index  # (L, K)
    sqp = np.sqrt(powers)[None, :, :, None, None]
    if aware:
        Psi = inv_used(cov_y)
        Psi_u = Psi[:, t_of]  # (L, L, K, M, M)
        RS = R * alpha[:, None, None, None, :]  # R Sigma
        W = sqp * RS @ Psi_u
        B = _herm(tau_p * powers[None, :, :, None, None] * RS @ Psi_u @ np.swapaxes(RS.conj(), -1, -2))
        C = _herm(R - B)
        C_true = C
    else:
        S = _pilot_sums(R, pilots, powers)
        Psi = inv_used(tau_p * S + sigma2 * np.eye(M))
        Psi_u = Psi[:, t_of]
        W = sqp * R @ Psi_u
        B = _herm(tau_p * powers[None, :, :, None, None] * R @ Psi_u @ R)
        C = _herm(R - B)
        # actual error covariance of W y when y is quantized
        RSig = R * alpha[:, None, None, None, :]
        cross = sqp * tau_p * RSig @ np.swapaxes(W.conj(), -1, -2)
        C_true = _herm(R - cross - np.swapaxes(cross.conj(), -1, -2)
                       + tau_p * W @ cov_y[:, t_of] @ np.swapaxes(W.conj(), -1, -2))
    return EstimationStats(R=R, alpha=alpha, powers=powers, sigma2=float(sigma2), pilots=pilots,
                           rq_avg=rq, Psi=Psi, W=W, B=B, C=C, C_true=C_true, aware=aware)


def estimate_covariances(correlation, pilots: PilotBook, bits, powers, sigma2: float):
    """``(B, C)`` of the quantization-aware estimator, each ``(L, L, K, M, M)``."""
    st = estimation_statistics(correlation, pilots, bits, powers, sigma2, aware=True)
    return st.B, st.C


def cross_covariance(stats: EstimationStats, j: int, ik, ik2) -> np.ndarray:
    """``E{h_hat_{j,ik2} h_hat_{j,ik}^H}`` for the aware estimator.

    Evaluated without inverting ``R``::

        sqrt(p2 p) tau_p R_{j,ik2} Sigma Psi Sigma R_{j,ik}

    which equals ``sqrt(p2/p) R_{j,ik2} R_{j,ik}^-1 B_{j,ik}`` whenever
    ``R_{j,ik}`` is invertible.
    """
    i, k = ik
    i2, k2 = ik2
    t = stats.pilots.pilot_index[i, k]
    M = stats.M
    if stats.pilots.pilot_index[i2, k2] != t:
        return np.zeros((M, M), dtype=complex)
    a = stats.alpha[j]
    R1, R2 = stats.R[j, i, k], stats.R[j, i2, k2]
    p1, p2 = stats.powers[i, k], stats.powers[i2, k2]
    if stats.aware:
        core = a[:, None] * stats.Psi[j, t] * a[None, :]
        return np.sqrt(p1 * p2) * stats.tau_p * R2 @ core @ R1
    # unaware: W2 Cov(y) W1^H
    cov_y = _pilot_cov(stats.R[j:j + 1], stats.alpha[j:j + 1], stats.powers, stats.sigma2,
                       stats.pilots, stats.rq_avg[j:j + 1])[0, t]
    return stats.tau_p * stats.W[j, i2, k2] @ cov_y @ stats.W[j, i, k].conj().T


def synthesize_pilots(h: np.ndarray, stats: EstimationStats, rng: np.random.Generator,
                      quant_noise: str = "exact") -> np.ndarray:
    """Correlated, quantized pilot observations ``y[n, j, t]``.

    ``h`` has shape ``(N, L, L, K, M)``.  The quantization noise uses the
    instantaneous covariance (``quant_noise="exact"``) or the averaged one
    (``"avg"``).  Returns ``(N, L, tau_p, M)``.
    """
    N = h.shape[0]
    L, M, tau_p = stats.L, stats.M, stats.tau_p
    P = _pilot_matrix(stats.pilots)
    alpha = stats.alpha
    sig = np.einsum("tik,ik,njikm->njtm", P, np.sqrt(stats.powers), h)
    y = tau_p * alpha[None, :, None, :] * sig
    y += alpha[None, :, None, :] * complex_normal(rng, (N, L, tau_p, M), stats.sigma2 * tau_p)
    if quant_noise == "exact":
        var = quant_noise_diag_exact(alpha[None], h, stats.powers, stats.sigma2)  # (N, L, M)
    elif quant_noise == "avg":
        var = np.broadcast_to(stats.rq_avg, (N, L, M))
    else:
        raise ValueError(f"unknown quant_noise mode {quant_noise!r}")
    y += np.sqrt(tau_p * var / 2.0)[:, :, None, :] * (
        rng.standard_normal((N, L, tau_p, M)) + 1j * rng.standard_normal((N, L, tau_p, M)))
    return y


def estimate_all(y: np.ndarray, stats: EstimationStats) -> np.ndarray:
    """Estimates of every channel, ``(N, L, L, K, M)``, from ``y[n, j, t]``."""
    t_of = stats.pilots.pilot_index
    y_user = y[:, :, t_of, :]  # (N, L, L, K, M)
    return np.einsum("jikmx,njikx->njikm", stats.W, y_user)
