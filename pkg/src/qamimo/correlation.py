"""Spatial correlation matrices from the local scattering model.

For a half-wavelength ULA and a Gaussian angular deviation ``delta ~ N(0, asd^2)``
around the nominal angle ``phi``::

    [R]_{mn} = beta * E[exp(j*pi*(m - n) * sin(phi + delta))]

The matrix is Hermitian Toeplitz, so only the first column is integrated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import toeplitz

from .scenario import NetworkConfig, UserDrop, large_scale_gain

# Composite Gauss-Legendre settings: truncation of the Gaussian (tail mass
# ~1e-15 at 8 sigma), nodes per panel.
_TRUNCATION = 8.0
_PANEL_NODES = 16


def _hermite_rule(asd: float, order: int):
    x, w = np.polynomial.hermite.hermgauss(order)
    return math.sqrt(2.0) * asd * x, w / math.sqrt(math.pi)


def _legendre_rule(asd: float, M: int):
    half = _TRUNCATION * asd
    # at most half an oscillation of exp(j*pi*(M-1)*sin(.)) per panel
    n_panels = max(8, math.ceil(2.0 * _TRUNCATION * (M - 1) * asd))
    x, w = np.polynomial.legendre.leggauss(_PANEL_NODES)
    edges = np.linspace(-half, half, n_panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    rad = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + rad[:, None] * x[None, :]).ravel()
    weights = (rad[:, None] * w[None, :]).ravel()
    weights = weights * np.exp(-0.5 * (nodes / asd) ** 2)
    return nodes, weights / weights.sum()


def quadrature_rule(asd: float, M: int, order: int = 50, method: str = "auto"):
    """Nodes and weights for ``E[g(delta)]`` with ``delta ~ N(0, asd^2)``.

    ``method="hermite"`` is Gauss-Hermite of the given order.  It stops
    resolving ``exp(j*pi*d*sin(phi+delta))`` once ``pi*(M-1)*asd`` grows past
    a few units, so ``"auto"`` switches to composite Gauss-Legendre on
    ``[-8 asd, 8 asd]`` in that regime.
    """
    if method == "auto":
        resolved = math.pi * (M - 1) * asd <= 0.75 * math.sqrt(order) and asd <= 0.35
        method = "hermite" if resolved else "legendre"
    if method == "hermite":
        return _hermite_rule(asd, order)
    if method == "legendre":
        return _legendre_rule(asd, M)
    raise ValueError(f"unknown quadrature method {method!r}")


def local_scattering_columns(phi, asd: float, M: int, order: int = 50, method: str = "auto"):
    """First columns ``E[exp(j*pi*d*sin(phi+delta))]``, ``d = 0..M-1``.

    ``phi`` may be an array; the result has shape ``phi.shape + (M,)``.
    """
    phi = np.asarray(phi, dtype=float)
    lags = np.arange(M)
    if asd == 0:
        return np.exp(1j * np.pi * lags * np.sin(phi)[..., None])
    nodes, weights = quadrature_rule(asd, M, order, method)
    sines = np.sin(phi[..., None] + nodes)  # (..., n)
    phase = np.exp(1j * np.pi * sines[..., None, :] * lags[:, None])  # (..., M, n)
    col = phase @ weights
    col[..., 0] = 1.0
    return col


def _toeplitz_hermitian(col: np.ndarray) -> np.ndarray:
    M = col.shape[-1]
    idx = np.arange(M)[:, None] - np.arange(M)[None, :]
    out = col[..., np.abs(idx)]
    return np.where(idx >= 0, out, np.conj(out))


def local_scattering_matrix(beta: float, phi: float, asd: float, M: int, order: int = 50,
                            method: str = "auto") -> np.ndarray:
    """Local scattering correlation matrix; ``asd`` and ``phi`` in radians."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if asd < 0:
        raise ValueError("asd must be non-negative")
    col = beta * local_scattering_columns(phi, asd, M, order, method)
    return toeplitz(col, np.conj(col))


@dataclass(frozen=True)
class CorrelationSet:
    """``R[j, i, k]`` is the ``M x M`` correlation of user k of cell i seen at BS j."""

    R: np.ndarray  # (L, L, K, M, M)
    beta: np.ndarray  # (L, L, K)
    angles: np.ndarray  # (L, L, K)
    asd: float  # radians

    @property
    def M(self) -> int:
        return self.R.shape[-1]


def build_correlation_set(config: NetworkConfig, drop: UserDrop, order: int = 50,
                          method: str = "auto") -> CorrelationSet:
    beta = large_scale_gain(drop.distances)
    asd = math.radians(config.asd_deg)
    cols = local_scattering_columns(drop.angles, asd, config.M, order, method)
    R = beta[..., None, None] * _toeplitz_hermitian(cols)
    return CorrelationSet(R=R, beta=np.asarray(beta), angles=drop.angles, asd=asd)


def regularized_inverse(R, beta: float | None = None, eps: float = 1e-10):
    """Return ``((R + eps*beta*I)^-1, eps)`` for Hermitian PSD ``R``.

    Computed from the eigendecomposition (round-off negatives clipped), so
    the range and null space of a rank-deficient ``R`` stay separated.
    ``eps`` is raised tenfold until the condition number is representable.
    ``beta`` defaults to ``tr(R)/M``.
    """
    R = np.asarray(R)
    M = R.shape[-1]
    if beta is None:
        beta = float(np.real(np.trace(R))) / M
    if beta <= 0:
        beta = 1.0
    w, V = np.linalg.eigh(0.5 * (R + R.conj().T))
    w = np.clip(w, 0.0, None)
    limit = 1.0 / np.finfo(float).eps
    while (w.max(initial=0.0) + eps * beta) / (eps * beta) >= limit:
        eps *= 10.0
    inv = (V / (w + eps * beta)) @ V.conj().T
    return 0.5 * (inv + inv.conj().T), eps


def dump_matrix_csv(path, R: np.ndarray) -> Path:
    """Row-major dump, each row ``re0, im0, re1, im1, ...``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.atleast_2d(R):
            inter = np.empty(2 * row.size)
            inter[0::2], inter[1::2] = row.real, row.imag
            writer.writerow([repr(float(v)) for v in inter])
    return path


def load_matrix_csv(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return data[:, 0::2] + 1j * data[:, 1::2]
