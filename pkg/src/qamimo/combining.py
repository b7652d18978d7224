"""Receive combiners built from channel estimates and their statistics.

MMSE-type combiners for user ``k`` at BS ``j`` have the form::

    v = p_jk (sum p h_hat h_hat^H + Z + sigma2 I)^-1 h_hat_{j,jk}

* multicell (M-MMSE): the sum runs over all ``L*K`` estimates and
  ``Z = sum p C + Sigma^-1 Rq_bar Sigma^-1``;
* single-cell (S-MMSE): only own-cell estimates enter the sum; other cells
  contribute through their full correlation matrices,
  ``Z = sum_{i != j} p R + sum_k' p C_jjk' + Sigma^-1 Rq_bar Sigma^-1``.

The quantization-unaware variants drop the ``Rq_bar`` term and consume the
unaware estimates (and the error covariances that estimator believes in).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import EstimationStats

MRC = "MRC"
QA_M_MMSE = "QA-M-MMSE"
QA_S_MMSE = "QA-S-MMSE"
U_M_MMSE = "U-M-MMSE"
U_S_MMSE = "U-S-MMSE"
SCHEMES = (MRC, QA_M_MMSE, QA_S_MMSE, U_M_MMSE, U_S_MMSE)

_ALIASES = {s.lower().replace("-", "_"): s for s in SCHEMES}


def canonical_scheme(name: str) -> str:
    """Accept ``"qa_m_mmse"``, ``"QA-M-MMSE"``, ``"mrc"`` and so on."""
    key = str(name).strip().lower().replace("-", "_")
    if key not in _ALIASES:
        raise ValueError(f"unknown combining scheme {name!r}; choose from {SCHEMES}")
    return _ALIASES[key]


def is_unaware(scheme: str) -> bool:
    return canonical_scheme(scheme).startswith("U-")


def mrc(h_hat: np.ndarray, j: int, k: int) -> np.ndarray:
    """``v = h_hat_{j,jk}``; ``h_hat`` is ``(..., L, L, K, M)``."""
    return h_hat[..., j, j, k, :]


def z_matrix(stats: EstimationStats, j: int, multicell: bool, quant_aware: bool) -> np.ndarray:
    """Statistical part ``Z`` of the MMSE resolvent at BS ``j``."""
    p = stats.powers
    if multicell:
        Z = np.einsum("ik,ikmn->mn", p, stats.C[j])
    else:
        others = np.ones(stats.L, dtype=bool)
        others[j] = False
        Z = np.einsum("ik,ikmn->mn", p[others], stats.R[j, others])
        Z = Z + np.einsum("k,kmn->mn", p[j], stats.C[j, j])
    if quant_aware:
        Z = Z + np.diag(stats.quant_term()[j])
    return 0.5 * (Z + Z.conj().T)


def resolvent_argument(h_hat: np.ndarray, stats: EstimationStats, j: int, multicell: bool,
                       quant_aware: bool, Z: np.ndarray | None = None) -> np.ndarray:
    """``sum p h_hat h_hat^H + Z + sigma2 I`` with leading batch axes kept."""
    if Z is None:
        Z = z_matrix(stats, j, multicell, quant_aware)
    M = stats.M
    if multicell:
        H = h_hat[..., j, :, :, :]  # (..., L, K, M)
        G = np.einsum("ik,...ikm,...ikn->...mn", stats.powers, H, H.conj())
    else:
        H = h_hat[..., j, j, :, :]  # (..., K, M)
        G = np.einsum("k,...km,...kn->...mn", stats.powers[j], H, H.conj())
    return G + Z + stats.sigma2 * np.eye(M)


def mmse_combiners(h_hat: np.ndarray, stats: EstimationStats, j: int, multicell: bool = True,
                   quant_aware: bool = True, Z: np.ndarray | None = None) -> np.ndarray:
    """Combiners of all K users of BS ``j``, shape ``(..., K, M)``."""
    A = resolvent_argument(h_hat, stats, j, multicell, quant_aware, Z)
    rhs = np.swapaxes(h_hat[..., j, j, :, :] * stats.powers[j][:, None], -1, -2)  # (..., M, K)
    V = np.linalg.solve(A, rhs)
    return np.swapaxes(V, -1, -2)


def qa_m_mmse(h_hat, stats: EstimationStats, j: int, k: int) -> np.ndarray:
    return mmse_combiners(h_hat, stats, j, multicell=True, quant_aware=True)[..., k, :]


def qa_s_mmse(h_hat, stats: EstimationStats, j: int, k: int) -> np.ndarray:
    return mmse_combiners(h_hat, stats, j, multicell=False, quant_aware=True)[..., k, :]


def u_m_mmse(h_hat_unaware, stats_unaware: EstimationStats, j: int, k: int) -> np.ndarray:
    return mmse_combiners(h_hat_unaware, stats_unaware, j, multicell=True, quant_aware=False)[..., k, :]


def u_s_mmse(h_hat_unaware, stats_unaware: EstimationStats, j: int, k: int) -> np.ndarray:
    return mmse_combiners(h_hat_unaware, stats_unaware, j, multicell=False, quant_aware=False)[..., k, :]


@dataclass
class CombinerSet:
    """Combiners of every user, ``v[..., j, k, :]``."""

    scheme: str
    v: np.ndarray


class CombinerBuilder:
    """Caches the per-BS ``Z`` matrices of one scheme at one drop."""

    def __init__(self, scheme: str, stats: EstimationStats):
        self.scheme = canonical_scheme(scheme)
        self.stats = stats
        if self.scheme == MRC:
            self._Z = None
        else:
            multicell = "-M-" in self.scheme
            aware = not is_unaware(self.scheme)
            self._multicell, self._aware = multicell, aware
            self._Z = [z_matrix(stats, j, multicell, aware) for j in range(stats.L)]

    def at_bs(self, h_hat: np.ndarray, j: int) -> np.ndarray:
        """``(..., K, M)`` combiners of BS ``j``."""
        if self.scheme == MRC:
            return h_hat[..., j, j, :, :]
        return mmse_combiners(h_hat, self.stats, j, self._multicell, self._aware, self._Z[j])

    def build(self, h_hat: np.ndarray) -> CombinerSet:
        v = np.stack([self.at_bs(h_hat, j) for j in range(self.stats.L)], axis=-3)
        return CombinerSet(self.scheme, v)


def combiner_set(scheme: str, h_hat: np.ndarray, stats: EstimationStats) -> CombinerSet:
    """All combiners of one scheme.  Pass unaware estimates/stats for ``U-*``."""
    return CombinerBuilder(scheme, stats).build(h_hat)
