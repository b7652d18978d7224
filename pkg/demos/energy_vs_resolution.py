"""Where does the energy efficiency peak as the ADC resolution grows?

Every extra bit multiplies the ADC power by about 1.42 while the spectral
efficiency saturates after three or four bits, so bits per joule has an
interior maximum.  The sum SE here comes from the asymptotic evaluator so
that the sweep over ten resolutions runs in seconds.

    python3 demos/energy_vs_resolution.py
"""

import numpy as np

from qamimo import BitAllocation, NetworkConfig, asymptotic_terms, energy_efficiency, p_total
from qamimo.se_montecarlo import prepare_drop


def main():
    cfg = NetworkConfig(L=4, K=3, M=16, tx_power_dbm=20)
    print(f"{'bits':>4} {'sum SE':>8} {'P_total [W]':>12} {'EE [Mbit/J]':>12}")
    best = (0, -1.0)
    for b in range(1, 11):
        se = np.mean([asymptotic_terms(prepare_drop(cfg, b, seed=3, drop_id=d).stats, "QA-M-MMSE", cfg.prelog).sum_se()
                      for d in range(5)])
        alloc = BitAllocation.uniform(b, cfg.L, cfg.M)
        ee = energy_efficiency(se, alloc)
        best = max(best, (b, ee), key=lambda t: t[1])
        print(f"{b:4d} {se:8.2f} {p_total(alloc):12.3f} {ee / 1e6:12.2f}")
    print(f"\npeak at {best[0]} bits")


if __name__ == "__main__":
    main()
