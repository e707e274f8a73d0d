"""
Pixelized drive envelopes smoothed by a gaussian filter, and the analytic
parametric derivatives of the driven part of the Liouvillian.

A drive contributes c(t) A + c(t)* A^dagger to the rotating-frame Hamiltonian
with c(t) = (Omega(t) / 2) exp(i (offset + delta) t) and
Omega(t) = sum_j Omega_j zeta_j(t).
"""

from typing import Optional

import numpy as np
from scipy import special

from src import config
from src.models.pulse import DriveTerm, PixelPulse


def zeta_basis(j: int, t, tau0: float = config.PIXEL_BIN, omega0: float = config.FILTER_OMEGA0):
    """Gaussian-filtered rectangle of pixel j: (erf(w0 (t - j tau0)/2) - erf(w0 (t - (j+1) tau0)/2)) / 2."""
    if j < 0:
        raise ValueError("Pixel index must be non-negative.")
    t = np.asarray(t, dtype=float)
    value = 0.5 * (special.erf(0.5 * omega0 * (t - j * tau0)) - special.erf(0.5 * omega0 * (t - (j + 1) * tau0)))
    return float(value) if value.ndim == 0 else value


def zeta_matrix(n_pixels: int, times, tau0: float = config.PIXEL_BIN,
                omega0: float = config.FILTER_OMEGA0) -> np.ndarray:
    """zeta_j(t_i) for every time and pixel, shape (len(times), n_pixels)."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    edges = special.erf(0.5 * omega0 * (times[:, None] - np.arange(n_pixels + 1)[None, :] * tau0))
    return 0.5 * (edges[:, :-1] - edges[:, 1:])


def _zeta_row(pulse: PixelPulse, t: float) -> np.ndarray:
    return zeta_matrix(pulse.n_pixels, t, pulse.bin_width, pulse.filter_omega0)[0]


def evaluate_envelope(pulse: PixelPulse, t):
    """Omega(t) = sum_j Omega_j zeta_j(t); scalar for scalar t, array otherwise."""
    if np.ndim(t) == 0:
        return complex(_zeta_row(pulse, float(t)) @ pulse.amplitudes)
    return zeta_matrix(pulse.n_pixels, t, pulse.bin_width, pulse.filter_omega0) @ pulse.amplitudes


def flat_pulse(amplitude: complex, duration: float, bin_width: float = config.PIXEL_BIN,
               ramp: float = 0.0, carrier_detuning: float = 0.0) -> PixelPulse:
    """Constant pixels with optional linear ramps of length `ramp` at both ends."""
    n = _pixel_count(duration, bin_width)
    centers = (np.arange(n) + 0.5) * bin_width
    shape = np.ones(n)
    if ramp > 0:
        shape = np.minimum(shape, np.minimum(centers, n * bin_width - centers) / ramp)
    return PixelPulse(amplitudes=amplitude * shape, bin_width=bin_width, carrier_detuning=carrier_detuning)


def two_step_pulse(strong: complex, weak: complex, duration: float,
                   step_length: float = config.TWO_STEP_LENGTH, bin_width: float = config.PIXEL_BIN,
                   carrier_detuning: float = 0.0) -> PixelPulse:
    """A strong segment of `step_length` followed by a weaker plateau."""
    n = _pixel_count(duration, bin_width)
    n_strong = min(n, int(round(step_length / bin_width)))
    amplitudes = np.full(n, weak, dtype=complex)
    amplitudes[:n_strong] = strong
    return PixelPulse(amplitudes=amplitudes, bin_width=bin_width, carrier_detuning=carrier_detuning)


def _pixel_count(duration: float, bin_width: float) -> int:
    n = int(round(duration / bin_width))
    if n < 1 or abs(n * bin_width - duration) > 1e-9 * duration:
        raise ValueError(f"Duration {duration} is not a positive multiple of the pixel bin {bin_width}.")
    return n


def drive_coefficient(drive: DriveTerm, t: float, params: np.ndarray) -> complex:
    """c(t) = Omega(t)/2 exp(i (offset + delta) t)."""
    amplitudes, detuning = drive.unpack(params)
    envelope = complex(_zeta_row(drive.pulse, t) @ amplitudes)
    return 0.5 * envelope * np.exp(1j * (drive.frame_offset + detuning) * t)


def drive_hamiltonian(drive: DriveTerm, t: float, params: np.ndarray) -> np.ndarray:
    c = drive_coefficient(drive, t, params)
    return c * drive.operator + np.conj(c) * drive.operator_dag


def liouvillian_param_derivative(drive: DriveTerm, t: float, params: np.ndarray,
                                 phi: Optional[np.ndarray] = None, rho: Optional[np.ndarray] = None,
                                 pairing: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Real partials Re Tr[phi^dagger (d L / d theta_k) rho] for the drive's parameter slice.

    With K = rho phi^dagger - phi^dagger rho, a variation dc of the coefficient
    pairs to Re(-i (dc Tr[A K] + dc* Tr[A^dagger K])). A precomputed K, such as the
    step-integrated one of the backward pass, can be passed as `pairing`.
    """
    if pairing is None:
        if phi is None or rho is None:
            raise ValueError("Either phi and rho or a pairing matrix is required.")
        phi_dag = phi.conj().T
        pairing = rho @ phi_dag - phi_dag @ rho
    k_t = pairing.T
    a = np.sum(drive.operator * k_t)
    b = np.sum(drive.operator_dag * k_t)
    return _coefficient_partials(drive, t, params, a, b)


def _coefficient_partials(drive: DriveTerm, t: float, params: np.ndarray, a: complex, b: complex) -> np.ndarray:
    """Real partials of Re(-i (dc a + dc* b)) for every parameter of the drive."""
    amplitudes, detuning = drive.unpack(params)
    phase = np.exp(1j * (drive.frame_offset + detuning) * t)
    s = phase * a
    r = np.conj(phase) * b
    zeta = _zeta_row(drive.pulse, t)

    n = drive.pulse.n_pixels
    out = np.empty(drive.n_params)
    out[:n] = 0.5 * zeta * (s + r).imag
    out[n:2 * n] = 0.5 * zeta * (s - r).real
    if drive.optimize_detuning:
        envelope = complex(zeta @ amplitudes)
        out[2 * n] = 0.5 * t * (envelope * s - np.conj(envelope) * r).real
    return out
