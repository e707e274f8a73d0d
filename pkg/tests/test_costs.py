# tests/test_costs.py
import math
import unittest

import os
import sys

import numpy as np
from scipy import optimize, special

# Add the src directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../src')))

from src import config, controls, costs, lindblad
from src.errors import ConfigError, CostError, SnrFitError
from src.lindblad import LindbladGenerator, SolverConfig
from src.models import cost_spec as cs
from src.models.cost_spec import CostSpec, CostTerm
from src.models.pulse import DriveTerm
from src.models.states import Trajectory

DT = config.RECORD_BIN
ETA = config.DEVICE_ETA
KAPPA = config.DEVICE_KAPPA


class TestSnr(unittest.TestCase):

    def setUp(self):
        """Two pointer-state records on a 1 ns grid."""
        rng = np.random.default_rng(0)
        self.beta_g = rng.normal(size=41) + 1j * rng.normal(size=41)
        self.beta_e = rng.normal(size=41) + 1j * rng.normal(size=41)
        self.tau_m = 40 * DT

    def test_constant_separation(self):
        """sqrt(2 eta kappa |b|^2 tau_m) for a constant separation b."""
        beta_g = np.zeros(41, dtype=complex)
        beta_e = np.full(41, 0.3 + 0.4j)
        expected = math.sqrt(2 * ETA * KAPPA * 0.25 * self.tau_m)
        self.assertAlmostEqual(costs.snr(beta_g, beta_e, ETA, KAPPA, self.tau_m) / expected, 1.0, places=12)

    def test_left_riemann_sum_ignores_last_sample(self):
        """The sample at tau_m itself does not contribute."""
        beta_e = self.beta_e.copy()
        beta_e[-1] += 100.0
        self.assertEqual(costs.snr(self.beta_g, beta_e, ETA, KAPPA, self.tau_m),
                         costs.snr(self.beta_g, self.beta_e, ETA, KAPPA, self.tau_m))

    def test_zero_pulse_gives_zero_snr(self):
        self.assertEqual(costs.snr(self.beta_g, self.beta_g, ETA, KAPPA, self.tau_m), 0.0)
        with self.assertRaises(CostError):
            costs.inverse_snr(self.beta_g, self.beta_g, ETA, KAPPA, self.tau_m)

    def test_grid_errors(self):
        with self.assertRaises(CostError):
            costs.snr(self.beta_g, self.beta_e[:-1], ETA, KAPPA, self.tau_m)
        with self.assertRaises(CostError):
            costs.snr(self.beta_g, self.beta_e, ETA, KAPPA, 40.5 * DT)
        with self.assertRaises(CostError):
            costs.snr(self.beta_g, self.beta_e, ETA, KAPPA, 50 * DT)
        with self.assertRaises(CostError):
            costs.snr(self.beta_g, self.beta_e, ETA, KAPPA, self.tau_m, times=np.linspace(0, 1, 41))

    def test_snr_curve(self):
        """Monotone partial sums that end at the full SNR."""
        taus, curve = costs.snr_curve(self.beta_g, self.beta_e, ETA, KAPPA)
        self.assertEqual(taus.size, 40)
        self.assertTrue(np.all(np.diff(curve) >= 0))
        self.assertAlmostEqual(curve[-1], costs.snr(self.beta_g, self.beta_e, ETA, KAPPA, self.tau_m), places=12)
        self.assertAlmostEqual(curve[9], costs.snr(self.beta_g, self.beta_e, ETA, KAPPA, 10 * DT), places=12)

    def test_inverse_snr_record_derivatives(self):
        """D = dC/dRe(beta) + i dC/dIm(beta) matches central differences."""
        # Arrange
        value, d_g, d_e = costs.inverse_snr(self.beta_g, self.beta_e, ETA, KAPPA, self.tau_m)
        h = 1e-4

        def cost(beta_e):
            return costs.inverse_snr(self.beta_g, beta_e, ETA, KAPPA, self.tau_m)[0]

        # Act / Assert
        self.assertAlmostEqual(value * costs.snr(self.beta_g, self.beta_e, ETA, KAPPA, self.tau_m), 1.0, places=12)
        for i in (0, 7, 39):
            numeric = 0.0j
            for unit in (1.0, 1j):
                plus, minus = self.beta_e.copy(), self.beta_e.copy()
                plus[i] += h * unit
                minus[i] -= h * unit
                numeric += unit * (cost(plus) - cost(minus)) / (2 * h)
            self.assertLessEqual(abs(d_e[i] - numeric), 1e-5 * abs(numeric))
        np.testing.assert_array_equal(d_g, -d_e)
        self.assertEqual(d_e[40], 0.0)


class TestPenalties(unittest.TestCase):

    def test_amplitude_penalty_inactive_below_cap(self):
        pulse = controls.flat_pulse(100 * config.MHZ, 10 * config.NS)
        value, grad = costs.amplitude_penalty(pulse, config.READOUT_OMEGA_MAX, 10 * config.NS)
        self.assertEqual(value, 0.0)
        self.assertFalse(np.any(grad))

    def test_amplitude_penalty_flat_excess(self):
        """A long flat pulse above the cap pays its excess over the interior samples."""
        # Arrange
        omega_max = config.READOUT_OMEGA_MAX
        pulse = controls.flat_pulse(300 * config.MHZ, 20 * config.NS)
        times = DT * np.arange(20)
        envelope = controls.evaluate_envelope(pulse, times)

        # Act
        value, _ = costs.amplitude_penalty(pulse, omega_max, 20 * config.NS)

        # Assert
        expected = costs.amplitude_penalty_samples(envelope, omega_max, 20 * config.NS, unit=config.FREQUENCY_UNIT)
        self.assertAlmostEqual(value, expected, places=12)
        self.assertGreater(value, 0.0)

    def test_amplitude_penalty_gradient(self):
        """Gradient with respect to [Re, Im] pixels matches finite differences away from the kink."""
        rng = np.random.default_rng(4)
        amplitudes = 250 * config.MHZ * np.exp(1j * rng.uniform(0, 2 * np.pi, 6)) * rng.uniform(0.5, 1.5, 6)
        pulse = controls.flat_pulse(1.0, 6 * config.NS).copy(amplitudes=amplitudes)
        _, grad = costs.amplitude_penalty(pulse, config.READOUT_OMEGA_MAX, 6 * config.NS)
        params = np.concatenate([amplitudes.real, amplitudes.imag])
        h = 1e-3 * config.MHZ
        for k in range(params.size):
            plus, minus = params.copy(), params.copy()
            plus[k] += h
            minus[k] -= h
            value_plus, _ = costs.amplitude_penalty(pulse.copy(amplitudes=plus[:6] + 1j * plus[6:]),
                                                    config.READOUT_OMEGA_MAX, 6 * config.NS)
            value_minus, _ = costs.amplitude_penalty(pulse.copy(amplitudes=minus[:6] + 1j * minus[6:]),
                                                     config.READOUT_OMEGA_MAX, 6 * config.NS)
            numeric = (value_plus - value_minus) / (2 * h)
            self.assertAlmostEqual(grad[k], numeric, delta=1e-5 * max(abs(numeric), np.max(np.abs(grad))))

    def test_amplitude_penalty_requires_positive_cap(self):
        with self.assertRaises(ValueError):
            costs.amplitude_penalty(controls.flat_pulse(1.0, 2 * config.NS), 0.0, 2 * config.NS)

    def test_photon_cap(self):
        """Zero below n_crit; one when the mean photon number sits one above it."""
        below = np.full(11, 10.0, dtype=complex)
        above = np.full(11, 17.0, dtype=complex)
        self.assertEqual(costs.critical_photon_cap(below, 16.0, 10 * DT)[0], 0.0)
        value, seed = costs.critical_photon_cap(above, 16.0, 10 * DT)
        self.assertAlmostEqual(value, 1.0, places=12)
        self.assertAlmostEqual(seed[0].real, 0.1, places=12)
        self.assertEqual(seed[10], 0.0)

    def test_photon_cap_hand_sum(self):
        record = np.array([15.0, 18.0, 16.0, 20.0, 30.0], dtype=complex)
        value, _ = costs.critical_photon_cap(record, 16.0, 4 * DT)
        self.assertAlmostEqual(value, (2.0 + 4.0) / 4.0, places=12)

    def test_forbidden_state_cost(self):
        """Time-average of the forbidden population, summed over prepared states."""
        # Arrange
        records = {"g": np.full(5, 0.2, dtype=complex), "e": np.array([0.0, 0.1, 0.2, 0.3, 0.9], dtype=complex)}

        # Act
        value, seeds = costs.forbidden_state_cost(records, 4 * DT)

        # Assert
        self.assertAlmostEqual(value, 0.2 + 0.15, places=12)
        np.testing.assert_allclose(seeds["e"].real, [0.25, 0.25, 0.25, 0.25, 0.0])

    def test_forbidden_all_population_in_forbidden_level(self):
        records = {"g": np.ones(11, dtype=complex), "e": np.ones(11, dtype=complex)}
        self.assertAlmostEqual(costs.forbidden_state_cost(records, 10 * DT)[0], 2.0, places=12)

    def test_forbidden_level_above_truncation(self):
        with self.assertRaises(ConfigError):
            costs.forbidden_state_cost({}, 10 * DT, level=3, truncation=3)


class TestResetAndAssignment(unittest.TestCase):

    def test_reset_infidelity_clamped_at_floor(self):
        value, slope = costs.reset_infidelity(1.0)
        self.assertAlmostEqual(value, -12.0, places=12)
        self.assertEqual(slope, 0.0)

    def test_reset_infidelity_value_and_slope(self):
        value, slope = costs.reset_infidelity(0.5)
        self.assertAlmostEqual(value, math.log10(0.75), places=14)
        self.assertAlmostEqual(slope, -1.0 / (0.75 * math.log(10.0)), places=14)
        value, slope = costs.reset_infidelity(0.5, squared=False)
        self.assertAlmostEqual(value, math.log10(0.5), places=14)

    def test_assignment_error_limits(self):
        tau_m, t1 = 100 * config.NS, 1.0 / config.DEVICE_GAMMA
        self.assertAlmostEqual(costs.assignment_error(0.0, tau_m, t1), 0.5 + tau_m / (2 * t1), places=15)
        self.assertAlmostEqual(costs.assignment_error(1e3, tau_m, t1), tau_m / (2 * t1), places=15)
        self.assertEqual(costs.assignment_error(0.0, tau_m, math.inf), 0.5)
        with self.assertRaises(ValueError):
            costs.assignment_error(-1.0, tau_m, t1)

    def test_assignment_error_root_oracle(self):
        """An SNR with erfc(SNR/2)/2 = 1e-3 gives 1e-3 plus the T1 part."""
        tau_m, t1 = 100 * config.NS, 1.0 / config.DEVICE_GAMMA
        snr = optimize.brentq(lambda s: 0.5 * special.erfc(s / 2) - 1e-3, 0.0, 20.0, xtol=1e-14)
        self.assertAlmostEqual(costs.assignment_error(snr, tau_m, t1), 1e-3 + tau_m / (2 * t1), places=12)

    def test_assignment_error_decreases_with_snr(self):
        values = [costs.assignment_error(s, 40 * config.NS, 1e-4) for s in np.linspace(0, 8, 33)]
        self.assertTrue(np.all(np.diff(values) < 0))


class TestSnrFit(unittest.TestCase):

    def setUp(self):
        """Model parameters of a flat readout."""
        self.chi = 3.8 * config.MHZ
        self.omega_f = 40 * config.MHZ

    def test_recovers_tau_m0_from_exact_samples(self):
        # Arrange
        phi = math.atan(2 * self.chi / KAPPA)
        alpha = 2 * abs(self.omega_f * math.sin(2 * phi)) / KAPPA
        tau0 = 19 * config.NS
        taus = np.linspace(100, 400, 7) * config.NS
        values = math.sqrt(2 * ETA * KAPPA) * alpha * (np.sqrt(taus) - math.sqrt(tau0))

        # Act
        model = costs.snr_fit(KAPPA, self.chi, self.omega_f, ETA, list(zip(taus, values)))

        # Assert
        self.assertAlmostEqual(model.tau_m0 / tau0, 1.0, places=9)
        self.assertAlmostEqual(model.alpha, alpha, places=12)
        self.assertLess(model.residual, 1e-9)
        self.assertAlmostEqual(model.to_dict()["tau_m0_ns"], 19.0, places=6)

    def test_fits_a_simulated_dispersive_readout(self):
        """
        A flat drive on a damped mode pulled by -chi / +chi. The integrated pointer
        separation lags its steady state by (11 - x^2) / (2 kappa (1 + x^2)), x = 2 chi / kappa.
        """
        # Arrange
        n = 6
        a = np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1).astype(complex)
        field = np.kron(np.eye(2), a)
        drive = 2 * config.MHZ
        h = self.chi * np.kron(np.diag([-1.0, 1.0]), a.conj().T @ a) + drive * (field + field.conj().T)
        gen = LindbladGenerator(h, jump_ops=[math.sqrt(KAPPA) * field])
        times = DT * np.arange(401)
        beta = {}
        for level, label in enumerate(("g", "e")):
            rho0 = np.zeros((2 * n, 2 * n), dtype=complex)
            rho0[level * n, level * n] = 1.0
            trajectory = lindblad.integrate(gen, np.zeros(0), rho0, 0.0, times[-1], save_times=times,
                                            solver=SolverConfig(dt=0.05 * config.NS),
                                            records={"beta": field}, keep_states=False)
            beta[label] = trajectory.record("beta")
        taus, curve = costs.snr_curve(beta["g"], beta["e"], ETA, KAPPA)
        late = taus >= 100 * config.NS
        x = 2 * self.chi / KAPPA
        lag = (11 - x ** 2) / (2 * KAPPA * (1 + x ** 2))

        # Act
        model = costs.snr_fit(KAPPA, self.chi, drive, ETA, list(zip(taus[late], curve[late])))

        # Assert
        slope = math.sqrt(2 * ETA * KAPPA) * model.alpha
        self.assertAlmostEqual(model.alpha, 2 * drive * 2 * x / (1 + x ** 2) / KAPPA, places=12)
        self.assertAlmostEqual(curve[-1] / (slope * math.sqrt(taus[-1] - lag)), 1.0, delta=0.01)
        self.assertLess(model.residual, 0.05)
        self.assertGreater(model.tau_m0, 0.0)
        self.assertLess(model.tau_m0, lag)

    def test_needs_three_samples(self):
        with self.assertRaises(SnrFitError):
            costs.snr_fit(KAPPA, self.chi, self.omega_f, ETA, [(1e-7, 1.0), (2e-7, 2.0)])
        with self.assertRaises(SnrFitError):
            costs.snr_fit(KAPPA, self.chi, self.omega_f, ETA, [(1e-7, 1.0), (2e-7, np.nan), (3e-7, 2.0)])

    def test_zero_dispersive_shift(self):
        """Without chi the model carries no signal and tau_m0 is not identifiable."""
        with self.assertLogs('src.costs', level='WARNING'):
            model = costs.snr_fit(KAPPA, 0.0, self.omega_f, ETA, [(1e-7, 1.0), (2e-7, 2.0), (3e-7, 3.0)])
        self.assertEqual(model.tau_m0, 0.0)


class TestCompositeCost(unittest.TestCase):

    def setUp(self):
        """A two-level generator with one drive and hand-made trajectories."""
        lowering = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
        pulse = controls.flat_pulse(300 * config.MHZ, 4 * config.NS)
        self.gen = LindbladGenerator(np.zeros((2, 2)), [DriveTerm("x", lowering, pulse)])
        self.theta = self.gen.initial_parameters()
        times = DT * np.arange(5)
        self.trajectories = {
            "g": Trajectory(times, scalar_records={"p_e": np.array([0.0, 0.1, 0.3, 0.6, 0.8], dtype=complex)},
                            label="g"),
            "e": Trajectory(times, scalar_records={"p_e": np.array([1.0, 0.9, 0.8, 0.7, 0.6], dtype=complex)},
                            label="e"),
        }
        self.spec = CostSpec([
            CostTerm(cs.FORBIDDEN_STATES, 2.0, {"record": "p_e", "labels": ("g", "e"), "tau_m": 4 * DT},
                     name="forbidden"),
            CostTerm(cs.EXPECTATION, 0.5, {"label": "g", "record": "p_e"}, name="final"),
            CostTerm(cs.AMPLITUDE_PENALTY, 0.1, {"drive": "x", "omega_max": 200 * config.MHZ, "tau_m": 4 * DT},
                     name="amplitude"),
            CostTerm(cs.PHOTON_CAP, 0.0, {"record": "p_e", "n_crit": 0.5, "tau_m": 4 * DT}, name="unused"),
        ])

    def test_total_is_weighted_sum(self):
        evaluation = costs.cost_value_and_seeds(self.spec, self.trajectories, self.theta, self.gen)
        weights = {term.name: term.weight for term in self.spec.terms}
        expected = sum(weights[name] * value for name, value in evaluation.terms.items())
        self.assertAlmostEqual(evaluation.total, expected, places=12)
        self.assertAlmostEqual(evaluation.terms["final"], 0.8, places=14)
        self.assertAlmostEqual(evaluation.terms["forbidden"], 0.25 + 0.85, places=12)
        self.assertEqual(evaluation.terms["unused"], 0.0)

    def test_kicks_and_direct_gradient(self):
        """Kicks accumulate per record; only the amplitude term has a direct gradient."""
        evaluation = costs.cost_value_and_seeds(self.spec, self.trajectories, self.theta, self.gen)
        kick = evaluation.kicks["g"]["p_e"]
        self.assertAlmostEqual(kick[-1].real, 0.5, places=14)
        self.assertAlmostEqual(kick[0].real, 2.0 * 0.25, places=14)
        self.assertGreater(np.max(np.abs(evaluation.direct_gradient)), 0.0)
        self.assertEqual(evaluation.direct_gradient[-1], 0.0)

    def test_missing_trajectory(self):
        spec = CostSpec([CostTerm(cs.EXPECTATION, 1.0, {"label": "f", "record": "p_e"})])
        with self.assertRaises(CostError):
            costs.cost_value_and_seeds(spec, self.trajectories, self.theta, self.gen)

    def test_missing_record(self):
        spec = CostSpec([CostTerm(cs.EXPECTATION, 1.0, {"label": "g", "record": "n_res"})])
        with self.assertRaises(CostError):
            costs.cost_value_and_seeds(spec, self.trajectories, self.theta, self.gen)


class TestCostSpec(unittest.TestCase):

    def test_term_validation(self):
        with self.assertRaises(ConfigError):
            CostTerm("fidelity", 1.0)
        with self.assertRaises(ConfigError):
            CostTerm(cs.EXPECTATION, -1.0)
        with self.assertRaises(ConfigError):
            CostTerm(cs.INVERSE_SNR, 1.0, {"eta": 1.5, "kappa": KAPPA, "tau_m": 10 * DT})
        with self.assertRaises(ConfigError):
            CostTerm(cs.FORBIDDEN_STATES, 1.0, {"tau_m": 10 * DT, "level": 3, "truncation": 3})

    def test_defaults(self):
        term = CostTerm(cs.RESET_INFIDELITY, 0.3, {"label": "g", "record": "p_g00"})
        self.assertEqual(term.name, cs.RESET_INFIDELITY)
        self.assertTrue(term.params["squared"])
        self.assertEqual(term.params["floor"], config.RESET_INFIDELITY_FLOOR)

    def test_unique_names(self):
        with self.assertRaises(ConfigError):
            CostSpec([CostTerm(cs.EXPECTATION, 1.0, {"label": "g", "record": "a"}),
                      CostTerm(cs.EXPECTATION, 1.0, {"label": "e", "record": "a"})])


if __name__ == '__main__':
    unittest.main()
