"""Correlated Rayleigh fading realizations ``h = R^{1/2} x``, ``x ~ CN(0, I)``."""

from __future__ import annotations

import numpy as np

from .correlation import CorrelationSet


def sqrt_psd(R) -> np.ndarray:
    """Hermitian PSD square root via eigendecomposition.

    Works on stacks ``(..., M, M)``.  Negative eigenvalues from round-off are
    clipped to zero, so rank-deficient correlation matrices are fine.
    """
    R = np.asarray(R)
    scale = np.max(np.abs(R), axis=(-2, -1), keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    if np.any(np.abs(R - np.swapaxes(R.conj(), -1, -2)) > 1e-10 * scale):
        raise ValueError("matrix is not Hermitian")
    w, V = np.linalg.eigh(R)
    w = np.sqrt(np.clip(w, 0.0, None))
    return (V * w[..., None, :]) @ np.swapaxes(V.conj(), -1, -2)


def complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly-symmetric ``CN(0, var)`` samples."""
    s = np.sqrt(var / 2.0)
    return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_channels(correlation: CorrelationSet | np.ndarray, rng: np.random.Generator,
                  n_trials: int = 1, sqrt_factors: np.ndarray | None = None) -> np.ndarray:
    """Channel realizations, shape ``(n_trials, L, L, K, M)``.

    ``h[n, j, i, k]`` is the channel from user k of cell i to BS j.  Pass
    ``sqrt_factors`` (from :func:`sqrt_psd`) to avoid recomputing them per
    batch.
    """
    if sqrt_factors is None:
        R = correlation.R if isinstance(correlation, CorrelationSet) else correlation
        sqrt_factors = sqrt_psd(R)
    lead = sqrt_factors.shape[:-2]
    M = sqrt_factors.shape[-1]
    x = complex_normal(rng, (n_trials, *lead, M))
    return np.einsum("...mn,t...n->t...m", sqrt_factors, x)
