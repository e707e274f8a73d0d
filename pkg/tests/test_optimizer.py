# tests/test_optimizer.py
import math
import unittest
from types import SimpleNamespace
from unittest.mock import MagicMock

import os
import sys

import numpy as np

# Add the src directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../src')))

from src import config, optimizer
from src.errors import OptimizationError, StiffnessError
from src.lindblad import SolverConfig
from src.models.system_spec import SystemSpec
from src.optimizer import OptimizerState
from src.services import problem_service


class QuadraticProblem:
    """C = sum theta^2 / 2 with unit scales; records every evaluated point."""

    def __init__(self, n: int = 1, scale: float = 1.0, totals=None, gradient=None):
        self.scale = scale
        self.n = n
        self.totals = totals
        self.gradient = gradient
        self.calls = []

    def parameter_scales(self):
        return np.full(self.n, self.scale)

    def evaluate(self, theta, with_gradient=True):
        self.calls.append((np.array(theta), with_gradient))
        if self.totals is not None:
            total = self.totals[len(self.calls) - 1]
        else:
            total = 0.5 * float(np.sum(theta ** 2))
        grad = np.array(theta) if self.gradient is None else self.gradient(theta)
        evaluation = SimpleNamespace(total=total, terms={"quadratic": total})
        gradient = SimpleNamespace(values=grad, diagnostics={"peak_live_matrices": 9}) if with_gradient else None
        return SimpleNamespace(evaluation=evaluation, gradient=gradient)


class TestAdamStep(unittest.TestCase):

    def test_first_step_moves_by_the_learning_rate(self):
        """With fresh moments the bias-corrected step is lr * sign(g)."""
        # Arrange
        theta = np.array([1.0, 2.0])
        grad = np.array([0.5, -4.0])
        state = OptimizerState.initial(2)

        # Act
        new_theta, new_state = optimizer.adam_step(theta, grad, state)

        # Assert
        np.testing.assert_allclose(new_theta, [1.0 - config.ADAM_LR, 2.0 + config.ADAM_LR], rtol=1e-7)
        self.assertEqual(new_state.step, 1)
        np.testing.assert_allclose(new_state.first_moment, 0.1 * grad)
        np.testing.assert_allclose(new_state.second_moment, 0.001 * grad ** 2)
        np.testing.assert_array_equal(theta, [1.0, 2.0])
        self.assertEqual(state.step, 0)

    def test_second_step_uses_the_moments(self):
        theta = np.array([0.0])
        state = OptimizerState.initial(1, lr=0.1)
        theta, state = optimizer.adam_step(theta, np.array([1.0]), state)
        theta, state = optimizer.adam_step(theta, np.array([3.0]), state)
        m = 0.9 * 0.1 + 0.1 * 3.0
        v = 0.999 * 0.001 + 0.001 * 9.0
        m_hat = m / (1 - 0.9 ** 2)
        v_hat = v / (1 - 0.999 ** 2)
        self.assertAlmostEqual(theta[0], -0.1 / (1 + 1e-8) - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8), places=12)

    def test_non_finite_gradient(self):
        state = OptimizerState.initial(3)
        with self.assertRaises(OptimizationError) as ctx:
            optimizer.adam_step(np.zeros(3), np.array([0.0, np.nan, np.inf]), state)
        self.assertIn("[1, 2]", str(ctx.exception))

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            optimizer.adam_step(np.zeros(3), np.zeros(2), OptimizerState.initial(3))

    def test_invalid_hyperparameters(self):
        with self.assertRaises(ValueError):
            OptimizerState.initial(2, lr=0.0)
        with self.assertRaises(ValueError):
            OptimizerState.initial(2, beta1=1.0)
        with self.assertRaises(ValueError):
            OptimizerState(first_moment=np.zeros(2), second_moment=np.zeros(3))


class TestRunOptimization(unittest.TestCase):

    def test_quadratic_converges(self):
        """Adam with lr 0.1 drives 1/2 theta^2 to its minimum within 500 epochs."""
        problem = QuadraticProblem()
        result = optimizer.run_optimization(problem, 500, np.array([1.0]), lr=0.1)
        self.assertLess(abs(result.best_theta[0]), 1e-3)
        self.assertEqual(len(result.log), 501)
        self.assertEqual(result.state.step, 500)

    def test_zero_epochs_echoes_the_seed(self):
        """Only the seed is evaluated, without a gradient."""
        # Arrange
        problem = QuadraticProblem(n=2)
        theta0 = np.array([0.3, -0.2])

        # Act
        result = optimizer.run_optimization(problem, 0, theta0)

        # Assert
        np.testing.assert_array_equal(result.best_theta, theta0)
        self.assertEqual(result.best_epoch, 0)
        self.assertEqual(len(result.log), 1)
        self.assertEqual(len(problem.calls), 1)
        self.assertFalse(problem.calls[0][1])
        self.assertTrue(math.isnan(result.log[0].gradient_norm))

    def test_last_evaluation_has_no_gradient(self):
        problem = QuadraticProblem()
        optimizer.run_optimization(problem, 3, np.array([1.0]))
        self.assertEqual([call[1] for call in problem.calls], [True, True, True, False])

    def test_steps_taken_in_normalized_units(self):
        """The first update moves theta by lr * scale."""
        problem = QuadraticProblem(scale=10.0)
        optimizer.run_optimization(problem, 1, np.array([5.0]), lr=0.01)
        self.assertAlmostEqual(problem.calls[1][0][0], 5.0 - 0.01 * 10.0, places=9)

    def test_best_so_far_tracking(self):
        """The best parameters are those of the lowest cost, not the last epoch."""
        problem = QuadraticProblem(totals=[5.0, 3.0, 4.0, 1.0, 2.0], gradient=lambda theta: np.ones(1))
        result = optimizer.run_optimization(problem, 4, np.array([0.0]))
        self.assertEqual(result.best_epoch, 3)
        self.assertEqual(result.best_cost, 1.0)
        np.testing.assert_array_equal(result.best_theta, problem.calls[3][0])
        self.assertEqual([entry.total for entry in result.log], [5.0, 3.0, 4.0, 1.0, 2.0])

    def test_callbacks(self):
        problem = QuadraticProblem()
        on_epoch = MagicMock()
        on_checkpoint = MagicMock()
        optimizer.run_optimization(problem, 4, np.array([1.0]), on_epoch=on_epoch, checkpoint_every=2,
                                   checkpoint_callback=on_checkpoint)
        self.assertEqual(on_epoch.call_count, 5)
        self.assertEqual([c.args[0] for c in on_checkpoint.call_args_list], [2, 4])
        self.assertEqual(on_epoch.call_args_list[0].args[0].peak_live_matrices, 9)

    def test_nan_gradient_reports_the_epoch(self):
        problem = QuadraticProblem(gradient=lambda theta: np.array([np.nan]))
        with self.assertRaises(OptimizationError) as ctx:
            optimizer.run_optimization(problem, 5, np.array([1.0]))
        self.assertEqual(ctx.exception.epoch, 0)

    def test_numerical_failure_becomes_optimization_error(self):
        problem = QuadraticProblem()
        problem.evaluate = MagicMock(side_effect=StiffnessError("step underflow"))
        with self.assertRaises(OptimizationError) as ctx:
            optimizer.run_optimization(problem, 2, np.array([1.0]))
        self.assertEqual(ctx.exception.epoch, 0)
        self.assertIn("step underflow", str(ctx.exception))

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            optimizer.run_optimization(QuadraticProblem(), -1, np.array([1.0]))
        with self.assertRaises(ValueError):
            optimizer.run_optimization(QuadraticProblem(n=2), 1, np.array([1.0]))


class TestControlProblems(unittest.TestCase):

    def setUp(self):
        """A coarse step keeps the two-level runs short."""
        self.solver = SolverConfig(dt=0.02 * config.NS)

    def test_rabi_pi_pulse(self):
        """A half-area flat seed is shaped into a pi pulse within 200 epochs."""
        # Arrange
        problem = problem_service.build_rabi_problem(solver=self.solver)

        # Act
        result = optimizer.run_optimization(problem, 200, problem.initial_parameters())

        # Assert
        self.assertAlmostEqual(result.log[0].total, 0.5, delta=0.02)
        self.assertLess(result.best_cost, 1e-3)

    @unittest.skipUnless(os.environ.get(config.SLOW_TESTS_ENV), f"set {config.SLOW_TESTS_ENV}=1 to run")
    def test_readout_improves_on_the_flat_seed(self):
        """A few epochs lower 1/SNR by at least ten percent against the flat filter drive."""
        with self.assertLogs('src.services.problem_service', level='WARNING'):
            problem = problem_service.build_readout_problem(SystemSpec(dims=(4, 6, 2)), 40.0 * config.NS,
                                                            solver=SolverConfig(dt=0.01 * config.NS))
        result = optimizer.run_optimization(problem, 5, problem.initial_parameters())
        seed = result.log[0].terms["inverse_snr"]
        best = result.log[result.best_epoch].terms["inverse_snr"]
        self.assertLessEqual(best, 0.9 * seed)



if __name__ == '__main__':
    unittest.main()
