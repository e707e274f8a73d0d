# tests/test_controls.py
import math
import unittest

import os
import sys

import numpy as np
from scipy import integrate, special

# Add the src directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../src')))

from src import config, controls, lindblad
from src.lindblad import LindbladGenerator
from src.models.pulse import DriveTerm, PixelPulse
from src.utils.operators import random_density_matrix, random_hermitian

TAU0 = config.PIXEL_BIN
OMEGA0 = config.FILTER_OMEGA0


def random_pulse(n_pixels: int, seed: int, scale: float = 50 * config.MHZ) -> PixelPulse:
    rng = np.random.default_rng(seed)
    return PixelPulse(amplitudes=scale * (rng.normal(size=n_pixels) + 1j * rng.normal(size=n_pixels)))


class TestBasis(unittest.TestCase):

    def test_pixel_center_value(self):
        """At a pixel center zeta_j = erf(omega0 tau0 / 4)."""
        for j in (0, 3):
            value = controls.zeta_basis(j, (j + 0.5) * TAU0)
            self.assertAlmostEqual(value, special.erf(OMEGA0 * TAU0 / 4.0), places=14)

    def test_partition_of_unity_inside_the_pulse(self):
        """The basis functions of a long pulse sum to one away from its edges."""
        times = np.linspace(8 * TAU0, 12 * TAU0, 17)
        total = controls.zeta_matrix(20, times).sum(axis=1)
        np.testing.assert_allclose(total, 1.0, atol=1e-10)

    def test_matrix_matches_scalar_basis(self):
        times = np.array([-0.3, 0.2, 1.7, 4.1]) * TAU0
        matrix = controls.zeta_matrix(5, times)
        for i, t in enumerate(times):
            for j in range(5):
                self.assertAlmostEqual(matrix[i, j], controls.zeta_basis(j, t), places=14)

    def test_negative_pixel_index(self):
        with self.assertRaises(ValueError):
            controls.zeta_basis(-1, 0.0)

    def test_gaussian_convolution_oracle(self):
        """Each basis function is its pixel's rectangle convolved with the filter kernel."""
        # Arrange
        pulse = random_pulse(10, 1)

        def kernel(s):
            return OMEGA0 / (2.0 * math.sqrt(math.pi)) * math.exp(-(OMEGA0 * s) ** 2 / 4.0)

        # Act / Assert
        for t in np.array([0.1, 2.5, 5.0, 9.9, 11.0]) * TAU0:
            expected = 0.0
            for j, amplitude in enumerate(pulse.amplitudes):
                weight, _ = integrate.quad(lambda s: kernel(t - s), j * TAU0, (j + 1) * TAU0,
                                           epsabs=1e-12, epsrel=1e-12)
                expected += amplitude * weight
            actual = controls.evaluate_envelope(pulse, t)
            self.assertLessEqual(abs(actual - expected), 1e-6 * np.max(np.abs(pulse.amplitudes)))


class TestEnvelope(unittest.TestCase):

    def setUp(self):
        """A random 10-pixel pulse."""
        self.pulse = random_pulse(10, 2)

    def test_envelope_vanishes_outside_the_pulse(self):
        peak = np.max(np.abs(self.pulse.amplitudes))
        for t in (-10.0 / OMEGA0, self.pulse.duration + 10.0 / OMEGA0):
            self.assertLessEqual(abs(controls.evaluate_envelope(self.pulse, t)), 1e-6 * peak)

    def test_envelope_is_linear(self):
        """Omega(a p + b q) = a Omega(p) + b Omega(q)"""
        other = random_pulse(10, 3)
        times = np.linspace(0.0, self.pulse.duration, 23)
        combined = self.pulse.copy(amplitudes=2.0 * self.pulse.amplitudes - 0.5j * other.amplitudes)
        expected = 2.0 * controls.evaluate_envelope(self.pulse, times) \
            - 0.5j * controls.evaluate_envelope(other, times)
        actual = controls.evaluate_envelope(combined, times)
        self.assertLessEqual(np.max(np.abs(actual - expected)), 1e-12 * np.max(np.abs(expected)))

    def test_scalar_and_array_evaluation_agree(self):
        times = np.array([0.5, 3.2]) * TAU0
        values = controls.evaluate_envelope(self.pulse, times)
        for t, value in zip(times, values):
            self.assertAlmostEqual(abs(controls.evaluate_envelope(self.pulse, t) - value), 0.0, places=6)


class TestPulseShapes(unittest.TestCase):

    def test_flat_pulse(self):
        pulse = controls.flat_pulse(30 * config.MHZ, 8 * config.NS, carrier_detuning=2 * config.MHZ)
        self.assertEqual(pulse.n_pixels, 8)
        np.testing.assert_array_equal(pulse.amplitudes, np.full(8, 30 * config.MHZ, dtype=complex))
        self.assertEqual(pulse.carrier_detuning, 2 * config.MHZ)
        self.assertAlmostEqual(pulse.duration, 8 * config.NS)

    def test_flat_pulse_with_ramp(self):
        """Linear ramps reach the plateau after the ramp length."""
        pulse = controls.flat_pulse(1.0, 10 * config.NS, ramp=2 * config.NS)
        np.testing.assert_allclose(pulse.amplitudes.real[:3], [0.25, 0.75, 1.0])
        np.testing.assert_allclose(pulse.amplitudes.real[-2:], [0.75, 0.25])

    def test_two_step_pulse(self):
        pulse = controls.two_step_pulse(100.0, 20.0, 10 * config.NS)
        np.testing.assert_array_equal(pulse.amplitudes.real, [100.0] * 4 + [20.0] * 6)

    def test_duration_must_fit_the_grid(self):
        with self.assertRaises(ValueError):
            controls.flat_pulse(1.0, 2.5 * config.NS)
        with self.assertRaises(ValueError):
            controls.flat_pulse(1.0, 0.0)


class TestDriveDerivatives(unittest.TestCase):

    def setUp(self):
        """A 3-level system with one detuned drive on a random operator."""
        rng = np.random.default_rng(9)
        operator = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        pulse = random_pulse(4, 10).copy(carrier_detuning=5 * config.MHZ)
        self.drive = DriveTerm("d", operator, pulse, frame_offset=20 * config.MHZ)
        self.gen = LindbladGenerator(random_hermitian(3, rng) * config.MHZ, [self.drive])
        self.theta = self.gen.initial_parameters()
        self.rho = random_density_matrix(3, rng)
        self.phi = random_hermitian(3, rng)
        self.t = 2.3 * config.NS

    def pairing(self, theta):
        out = lindblad.apply_liouvillian(self.gen, self.t, theta, self.rho)
        return float(np.trace(self.phi.conj().T @ out).real)

    def test_coefficient(self):
        """c(t) = Omega(t)/2 exp(i (offset + delta) t)"""
        coefficient = controls.drive_coefficient(self.drive, self.t, self.theta)
        envelope = controls.evaluate_envelope(self.drive.pulse, self.t)
        expected = 0.5 * envelope * np.exp(1j * (20 + 5) * config.MHZ * self.t)
        self.assertAlmostEqual(abs(coefficient - expected), 0.0, places=3)

    def test_drive_hamiltonian_is_hermitian(self):
        h = controls.drive_hamiltonian(self.drive, self.t, self.theta)
        self.assertLessEqual(np.max(np.abs(h - h.conj().T)), 1e-12 * np.max(np.abs(h)))

    def test_parametric_derivative_matches_finite_differences(self):
        # Arrange
        analytic = controls.liouvillian_param_derivative(self.drive, self.t, self.theta, self.phi, self.rho)

        # Act
        numeric = np.zeros_like(analytic)
        for k in range(self.theta.size):
            h = 1e-6 * max(abs(self.theta[k]), config.MHZ)
            plus, minus = self.theta.copy(), self.theta.copy()
            plus[k] += h
            minus[k] -= h
            numeric[k] = (self.pairing(plus) - self.pairing(minus)) / (2.0 * h)

        # Assert
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-9 * np.max(np.abs(numeric)))

    def test_precomputed_pairing_matches_the_state_form(self):
        phi_dag = self.phi.conj().T
        pairing = self.rho @ phi_dag - phi_dag @ self.rho
        np.testing.assert_allclose(
            controls.liouvillian_param_derivative(self.drive, self.t, self.theta, pairing=pairing),
            controls.liouvillian_param_derivative(self.drive, self.t, self.theta, self.phi, self.rho))
        with self.assertRaises(ValueError):
            controls.liouvillian_param_derivative(self.drive, self.t, self.theta, phi=self.phi)


if __name__ == '__main__':
    unittest.main()
