"""Receiver power consumption and energy efficiency."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .quantization import BitAllocation


@dataclass(frozen=True)
class PowerModel:
    """Per-component power draw in watts; ADC constants in SI units."""

    P_mix: float = 30.3e-3
    P_filt: float = 2.5e-3
    P_filr: float = 2.5e-3
    P_LNA: float = 20e-3
    P_IFA: float = 3e-3
    P_syn: float = 50e-3
    P_AGC: float = 2e-3
    V_dd: float = 3.0
    L_min: float = 0.5e-6
    f_cor: float = 1e6
    W: float = 20e6

    def __post_init__(self):
        bad = [k for k, v in asdict(self).items() if v < 0]
        if bad:
            raise ValueError(f"negative power model entries: {bad}")


def p_adc(bits, model: PowerModel = PowerModel()):
    """ADC power ``3 V_dd^2 L_min (2W + f_cor) / 10^(-0.1525 b + 4.838)``."""
    b = np.asarray(bits, dtype=float)
    if np.any(~(b >= 1)) or np.any(~np.isfinite(b)):
        raise ValueError("ADC bits must be finite and >= 1")
    out = 3.0 * model.V_dd**2 * model.L_min * (2.0 * model.W + model.f_cor) / 10.0 ** (-0.1525 * b + 4.838)
    return float(out) if out.ndim == 0 else out


def p_total(bits: BitAllocation | np.ndarray, model: PowerModel = PowerModel()) -> float:
    """Total BS-side power for a per-antenna bit allocation ``(L, M)``.

    ``L M (2 P_mix + P_filt + P_filr + P_LNA + P_IFA) + 2 L P_syn
    + sum 2 (c P_AGC + P_ADC(b))`` with ``c = 0`` for one-bit ADCs.
    """
    b = bits.bits if isinstance(bits, BitAllocation) else np.asarray(bits, dtype=float)
    if b.ndim != 2:
        raise ValueError("bits must be an (L, M) array")
    L, M = b.shape
    rf = L * M * (2 * model.P_mix + model.P_filt + model.P_filr + model.P_LNA + model.P_IFA)
    agc = np.where(b == 1, 0.0, model.P_AGC)
    return float(rf + 2 * L * model.P_syn + np.sum(2.0 * (agc + p_adc(b, model))))


def energy_efficiency(sum_se: float, bits, model: PowerModel = PowerModel()) -> float:
    """``W * sum SE / P_total`` in bits per joule."""
    P = p_total(bits, model)
    if P <= 0:
        raise ValueError("total power must be positive")
    return model.W * float(sum_se) / P
