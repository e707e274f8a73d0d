# src/config.py
"""
Centralized configuration and constants for LindbladQOC.

All physical quantities are SI internally: seconds for times and angular
frequencies (rad/s) for frequencies, rates, couplings and drive amplitudes.
"""

import math

# --- Application Info ---
APP_NAME = "LindbladQOC"
APP_VERSION = "1.0.0"

# --- Environment ---
THREADS_ENV = "LQOC_THREADS"
LOG_LEVEL_ENV = "LQOC_LOG_LEVEL"
SLOW_TESTS_ENV = "LQOC_SLOW_TESTS"
DEFAULT_THREADS = 1

# --- Units ---
TWO_PI = 2.0 * math.pi
GHZ = TWO_PI * 1e9   # ordinary GHz -> rad/s
MHZ = TWO_PI * 1e6   # ordinary MHz -> rad/s
KHZ = TWO_PI * 1e3
NS = 1e-9            # ns -> s
US = 1e-6
# Optimizer and amplitude penalties work in 2*pi*GHz units
FREQUENCY_UNIT = GHZ

# --- Device parameters (transmon + resonator + Purcell filter) ---
DEVICE_EC = 315.0 * MHZ
DEVICE_EJ_OVER_EC = 51.0
DEVICE_OMEGA_T = 6.0 * GHZ       # quoted bare transmon frequency
DEVICE_OMEGA_R = 7.2 * GHZ
DEVICE_OMEGA_F = 7.21 * GHZ
DEVICE_G = 150.0 * MHZ
DEVICE_J = 30.0 * MHZ
DEVICE_KAPPA = 30.0 * MHZ
DEVICE_GAMMA = 8.0 * KHZ
DEVICE_ETA = 0.6

# --- Hilbert space ---
N_CHARGE = 301
READOUT_DIMS = (5, 12, 4)
RESET_DIMS = (5, 4, 4)
VALIDATION_N_T = 6
VALIDATION_N_U = 8
VALIDATION_EXTRA_N_D = 4
HERMITICITY_TOL = 1e-12

# --- Solvers ---
ROUCHON_DT = 0.003 * NS
DP45_TOL = 1e-8
DT_MIN = 1e-16
DT_MAX = 0.05 * NS
DP45_SAFETY = 0.9
DP45_MIN_FACTOR = 0.2
DP45_MAX_FACTOR = 5.0
REVERSE_GROWTH_LIMIT = 1e3
CHECKPOINT_REPLAY_TOL = 1e-6

# --- Pulses ---
PIXEL_BIN = 1.0 * NS
FILTER_BANDWIDTH = 250.0 * MHZ
FILTER_OMEGA0 = 425.5 * MHZ
RECORD_BIN = 1.0 * NS
TWO_STEP_LENGTH = 4.0 * NS
READOUT_SEED_AMPLITUDE = 40.0 * MHZ
RESET_SEED_F0G1 = 350.0 * MHZ
RESET_SEED_EF = 30.0 * MHZ
RABI_PIXELS = 10
RABI_SEED_AMPLITUDE = 25.0 * MHZ

# --- Cost functions ---
READOUT_WEIGHTS = {
    "inverse_snr": 1.0,
    "amplitude_filter": 0.1,
    "amplitude_transmon": 0.1,
    "forbidden_transmon": 1.0,
    "forbidden_undriven": 5000.0,
    "photon_cap": 0.1,
}
READOUT_OMEGA_MAX = 200.0 * MHZ
READOUT_FORBIDDEN_TRANSMON_LEVEL = 3
READOUT_FORBIDDEN_UNDRIVEN_LEVEL = 2
RESET_WEIGHTS = {"g": 0.3, "e": 1.0, "f": 0.3, "amplitude_transmon": 0.1}
RESET_OMEGA_MAX = 600.0 * MHZ
RESET_INFIDELITY_FLOOR = 1e-12

# --- Optimizer ---
ADAM_LR = 1e-2
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# --- Gradient check ---
GRAD_CHECK_REL_STEP = 1e-5
GRAD_CHECK_TOL = 1e-4
GRAD_CHECK_MAX_DIM = 64
GRAD_CHECK_MIN_GRADIENT = 1e-8

# --- Reset calibration ---
CALIBRATION_DURATION = 100.0 * NS
CALIBRATION_PROBE_DURATION = 5.0 * NS
CALIBRATION_POINTS = 41
CALIBRATION_F0G1_SPAN = 100.0 * MHZ   # half-width of the f0-g1 frequency sweep
CALIBRATION_EF_SPAN = 40.0 * MHZ
CALIBRATION_EF_AMPLITUDE_RANGE = (0.25, 2.0)   # relative to the matched e-f amplitude

# --- Validation ---
MEMORY_CAP_BYTES = 4 * 1024 ** 3
WORKING_MATRICES = 24
VALIDATION_REPORT_THRESHOLD = 1e-3

# --- Exit codes ---
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ERROR = 3
EXIT_VALIDATION_CAP = 4

# --- Output files ---
TRAJECTORY_CSV = "trajectory.csv"
SUMMARY_JSON = "summary.json"
GRADIENT_JSON = "gradient.json"
GRAD_CHECK_JSON = "grad_check.json"
PULSE_JSON = "pulse.json"
EPOCH_CSV = "epochs.csv"
VALIDATION_JSON = "validation.json"
CALIBRATION_CSV = "calibration.csv"
MANIFEST_JSON = "manifest.json"
LOG_FILE = "run.log"
