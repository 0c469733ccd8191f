"""Approximate message passing detection for large MIMO systems with finite alphabets."""

from .constellation import (Constellation, ConstellationError, STANDARD_NAMES, load_constellation,
                            make_standard, moments, real_part_alphabet)
from .detector import (LamaConfig, LamaDivergence, LamaResult, LamaState, lama_init, lama_run,
                       lama_step, matched_filter)
from .quadrature import DEFAULT_QUAD, QuadratureError, QuadratureSpec
from .se_engine import (FixedPointReport, SEParams, SEState, SETrace, achievable_rate, awgn_ser,
                        fixed_points, g_function, n0_to_snr_db, phi, psi, required_snr_db,
                        se_run, se_step, snr_db_to_n0)
from .simulator import SimConfig, SweepResult, decoupling_report, gen_channel, mmse_detect, ser_sweep
from .thresholds import (ThresholdError, ThresholdReport, classify_regime, ert, mrt, n0_max, n0_min,
                         threshold_report)

__version__ = "0.1.0"
