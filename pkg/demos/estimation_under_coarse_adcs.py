"""How much does quantization awareness buy the channel estimator?

With coarse ADCs the received pilot carries additive quantization noise
whose power grows with the signal.  An estimator that ignores it keeps
trusting the pilot as the transmit power rises and its error stops
improving early; the aware estimator weighs the distortion and stays
closer to the unquantized curve.  This script prints the mean NMSE of both
on a 4-cell desk network.

    python3 demos/estimation_under_coarse_adcs.py
"""

import math

import numpy as np

from qamimo import NetworkConfig, build_pilot_book, estimation_statistics
from qamimo.se_montecarlo import make_drop


def mean_nmse(cfg, bits, aware, drops=5):
    out = []
    for d in range(drops):
        grid, _, corr = make_drop(cfg, seed=11, drop_id=d)
        st = estimation_statistics(corr, build_pilot_book(cfg, grid), bits, cfg.powers(), cfg.sigma2, aware=aware)
        n = st.nmse()
        out.append(np.mean([n[j, j] for j in range(cfg.L)]))
    return float(np.mean(out))


def main():
    powers = [0, 10, 20, 30, 40]
    print(f"{'bits':>5} {'estimator':>9} " + " ".join(f"{p:>7}dBm" for p in powers))
    for bits in (1, 2, 3, math.inf):
        for aware in (True, False):
            if math.isinf(bits) and not aware:
                continue  # identical when there is no quantization
            row = [mean_nmse(NetworkConfig(L=4, K=3, M=16, tx_power_dbm=p), bits, aware) for p in powers]
            name = "aware" if aware else "unaware"
            print(f"{'inf' if math.isinf(bits) else bits:>5} {name:>9} " + " ".join(f"{v:10.4f}" for v in row))
    print("\nAware one-bit NMSE flattens above ~20 dBm since the distortion scales with the pilot;"
          "\nthe unaware estimator gets worse as power grows.")


if __name__ == "__main__":
    main()
