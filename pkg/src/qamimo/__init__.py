"""Uplink massive MIMO with low-resolution ADCs: estimation, combining and spectral efficiency."""

from .channel import draw_channels, sqrt_psd
from .combining import SCHEMES, CombinerBuilder, combiner_set
from .correlation import CorrelationSet, build_correlation_set, local_scattering_matrix, regularized_inverse
from .energy import PowerModel, energy_efficiency, p_adc, p_total
from .estimation import (EstimationStats, build_psi, cross_covariance, estimate_channel, estimate_covariances,
                         estimation_statistics, nmse)
from .quantization import ALPHA_TABLE, BitAllocation, distortion_factor
from .rmt import ConvergenceError, DetEq, solve_gamma, solve_gamma_prime
from .runner import ExperimentSpec, load_spec, run
from .scenario import ConfigError, NetworkConfig, build_grid, build_pilot_book, drop_users
from .se_asymptotic import asymptotic_terms, mrc_closed_form
from .se_montecarlo import SeTerms, run_mc_experiment, se_from_terms, simulate_drop

__version__ = "0.1.0"
