# src/services/calibration_service.py
"""
Flat-pulse calibration of the f0-g1 reset.

For each f0-g1 amplitude three one-dimensional sweeps are run in sequence:
the f0-g1 frequency (minimizing the |f> population left after the pulse,
starting from |f00>), the e-f frequency with both drives on (minimizing the
residual excitation of |e00>), and finally the e-f amplitude. The e-f
amplitude is seeded so that its coupling matches the Raman rate measured in
a short probe simulation.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from src import adjoint, config, controls
from src.errors import CalibrationError, ConfigError
from src.hilbert import CompositeSpace
from src.lindblad import SolverConfig
from src.models.problem import DriveConfig, ResetProblem
from src.models.system_spec import SystemSpec
from src.services.problem_service import build_reset_problem

logger = logging.getLogger(__name__)


@dataclass
class SweepResult:
    """One 1-D sweep: grid values, objective per point and the refined minimum."""
    name: str
    grid: np.ndarray
    objective: np.ndarray
    best_value: float
    best_objective: float

    def to_rows(self, amplitude: float, unit: float) -> list:
        return [[self.name, amplitude / config.MHZ, x / unit, float(y)] for x, y in zip(self.grid, self.objective)]


@dataclass
class ResetCalibration:
    """Calibrated flat-pulse settings for one f0-g1 amplitude (angular units)."""
    f0g1_amplitude: float
    f0g1_detuning: float
    ef_detuning: float
    ef_amplitude: float
    raman_rate: float
    references: Dict[str, float]
    duration: float
    residuals: Dict[str, float] = field(default_factory=dict)
    sweeps: List[SweepResult] = field(default_factory=list)

    @property
    def f0g1_frequency(self) -> float:
        return self.references["f0g1"] + self.f0g1_detuning

    @property
    def ef_frequency(self) -> float:
        return self.references["ef"] + self.ef_detuning

    def pulses(self, duration: Optional[float] = None) -> dict:
        duration = duration or self.duration
        return {
            "f0g1": controls.flat_pulse(self.f0g1_amplitude, duration, carrier_detuning=self.f0g1_detuning),
            "ef": controls.flat_pulse(self.ef_amplitude, duration, carrier_detuning=self.ef_detuning),
        }

    def to_dict(self) -> dict:
        return {
            "f0g1_amplitude_MHz": self.f0g1_amplitude / config.MHZ,
            "f0g1_frequency_GHz": self.f0g1_frequency / config.GHZ,
            "f0g1_detuning_MHz": self.f0g1_detuning / config.MHZ,
            "ef_frequency_GHz": self.ef_frequency / config.GHZ,
            "ef_detuning_MHz": self.ef_detuning / config.MHZ,
            "ef_amplitude_MHz": self.ef_amplitude / config.MHZ,
            "raman_rate_MHz": self.raman_rate / config.MHZ,
            "duration_ns": self.duration / config.NS,
            "residual_excitation": dict(self.residuals),
        }


@dataclass
class ResetCurve:
    """Residual excitation 1 - <g00|rho(t)|g00> along a calibrated flat pulse."""
    times: np.ndarray
    residuals: Dict[str, np.ndarray]


def refine_minimum(grid: np.ndarray, values: np.ndarray, name: str = "sweep"):
    """
    Grid minimum refined by a parabola through its neighbours. The minimum
    must be interior, otherwise the resonance lies outside the sweep range.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if grid.size < 3:
        raise ConfigError(f"{name}: a sweep needs at least 3 grid points.")
    if not np.all(np.isfinite(values)):
        raise CalibrationError(f"{name}: non-finite objective values in the sweep.")
    i = int(np.argmin(values))
    if i == 0 or i == grid.size - 1:
        raise CalibrationError(
            f"{name}: minimum at the sweep edge ({grid[i]:.6e}); widen the sweep range.")
    y0, y1, y2 = values[i - 1:i + 2]
    curvature = y0 - 2.0 * y1 + y2
    if curvature <= 0:
        return float(grid[i]), float(y1)
    x0, x2 = grid[i - 1], grid[i + 1]
    shift = 0.5 * (y0 - y2) / curvature
    best = float(np.clip(grid[i] + shift * 0.5 * (x2 - x0), x0, x2))
    return best, float(y1 - 0.125 * (y0 - y2) ** 2 / curvature)


def run_sweep(name: str, grid: Sequence[float], objective: Callable[[float], float],
              threads: Optional[int] = None) -> SweepResult:
    """Evaluates the objective on the grid (in parallel, ordered) and refines the minimum."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ConfigError(f"{name}: empty sweep grid.")
    values = np.array(adjoint.parallel_map(objective, list(grid), threads), dtype=float)
    best, best_value = refine_minimum(grid, values, name)
    logger.info("Sweep %s: minimum %.4e at %.6e", name, best_value, best)
    return SweepResult(name=name, grid=grid, objective=values, best_value=best, best_objective=best_value)


class ResetCalibrator:
    """Holds the reset problem of one duration and runs the calibration sweeps on it."""

    def __init__(self, spec: SystemSpec, duration: float = config.CALIBRATION_DURATION,
                 points: int = config.CALIBRATION_POINTS, solver: Optional[SolverConfig] = None,
                 f0g1_span: float = config.CALIBRATION_F0G1_SPAN, ef_span: float = config.CALIBRATION_EF_SPAN,
                 ef_amplitude_range=config.CALIBRATION_EF_AMPLITUDE_RANGE, threads: Optional[int] = None):
        if points < 3:
            raise ConfigError("calibration.points must be at least 3.")
        self.spec = spec
        self.duration = duration
        self.points = points
        self.f0g1_span = f0g1_span
        self.ef_span = ef_span
        self.ef_amplitude_range = ef_amplitude_range
        self.threads = threads
        self.problem: ResetProblem = build_reset_problem(spec, duration, DriveConfig(optimize_detuning=True),
                                                         solver=solver)
        self.references = dict(self.problem.metadata["references"])
        self.probe: ResetProblem = build_reset_problem(
            spec, config.CALIBRATION_PROBE_DURATION, DriveConfig(optimize_detuning=True), solver=solver,
            frame=self.problem.metadata["frame"], references=self.references)

    def _theta(self, problem: ResetProblem, settings: Dict[str, tuple]) -> np.ndarray:
        """Flat pulses {drive: (amplitude, detuning)}; missing drives are off."""
        pulses = {}
        for name in ("f0g1", "ef"):
            amplitude, detuning = settings.get(name, (0.0, 0.0))
            pulses[name] = controls.flat_pulse(amplitude, problem.tau_m, carrier_detuning=detuning)
        return problem.parameters_from_pulses(pulses)

    def _final(self, problem: ResetProblem, settings: Dict[str, tuple], label: str, record: str) -> float:
        trajectory = problem.simulate(self._theta(problem, settings), labels=[label])[label]
        return float(trajectory.record(record)[-1].real)

    def _residual(self, settings: Dict[str, tuple], label: str) -> float:
        return 1.0 - self._final(self.problem, settings, label, "p_g00")

    def raman_rate(self, amplitude: float, detuning: float) -> float:
        """Effective f0-g1 coupling from p_f(tau) = cos^2(g tau) on the short probe."""
        p_f = self._final(self.probe, {"f0g1": (amplitude, detuning)}, "f", "p_t2")
        rate = math.acos(math.sqrt(min(max(p_f, 0.0), 1.0))) / self.probe.tau_m
        if rate <= 0.0:
            raise CalibrationError("Probe shows no f0-g1 transfer; the Raman rate is zero.")
        return rate

    def _ef_matrix_element(self) -> float:
        space = CompositeSpace(self.spec.dims)
        op = self.problem.generator.drives[1].operator
        return float(abs(op[space.basis_index(1, 0, 0), space.basis_index(2, 0, 0)]))

    def calibrate(self, amplitude: float) -> ResetCalibration:
        if amplitude == 0:
            raise CalibrationError("Calibration is degenerate at zero f0-g1 amplitude.")
        logger.info("Calibrating flat reset at Omega_f0g1/2pi = %.1f MHz", amplitude / config.MHZ)

        f0g1_grid = np.linspace(-self.f0g1_span, self.f0g1_span, self.points)
        f0g1 = run_sweep("f0g1_frequency", f0g1_grid,
                         lambda d: self._final(self.problem, {"f0g1": (amplitude, d)}, "f", "p_t2"), self.threads)

        rate = self.raman_rate(amplitude, f0g1.best_value)
        ef_amplitude = 2.0 * rate / self._ef_matrix_element()

        ef_grid = np.linspace(-self.ef_span, self.ef_span, self.points)
        ef = run_sweep("ef_frequency", ef_grid,
                       lambda d: self._residual({"f0g1": (amplitude, f0g1.best_value), "ef": (ef_amplitude, d)}, "e"),
                       self.threads)

        low, high = self.ef_amplitude_range
        amplitude_grid = ef_amplitude * np.linspace(low, high, self.points)
        ef_amp = run_sweep("ef_amplitude", amplitude_grid,
                           lambda a: self._residual({"f0g1": (amplitude, f0g1.best_value), "ef": (a, ef.best_value)},
                                                    "e"), self.threads)

        settings = {"f0g1": (amplitude, f0g1.best_value), "ef": (ef_amp.best_value, ef.best_value)}
        trajectories = self.problem.simulate(self._theta(self.problem, settings))
        residuals = self.problem.residual_excitation(trajectories)
        return ResetCalibration(f0g1_amplitude=amplitude, f0g1_detuning=f0g1.best_value,
                                ef_detuning=ef.best_value, ef_amplitude=ef_amp.best_value, raman_rate=rate,
                                references=self.references, duration=self.duration, residuals=residuals,
                                sweeps=[f0g1, ef, ef_amp])


def calibrate_reset_flat(spec: SystemSpec, amplitudes: Sequence[float], **options) -> List[ResetCalibration]:
    """Calibrated flat reset settings for each f0-g1 amplitude of the grid."""
    amplitudes = list(amplitudes)
    if not amplitudes:
        raise ConfigError("calibration.amplitudes_MHz must not be empty.")
    calibrator = ResetCalibrator(spec, **options)
    return [calibrator.calibrate(amplitude) for amplitude in amplitudes]


def reset_curve(spec: SystemSpec, calibration: ResetCalibration, duration: Optional[float] = None,
                solver: Optional[SolverConfig] = None) -> ResetCurve:
    """Residual excitation of every prepared state along the calibrated flat pulses."""
    duration = duration or calibration.duration
    problem = build_reset_problem(spec, duration, DriveConfig(optimize_detuning=True), solver=solver,
                                  references=calibration.references)
    theta = problem.parameters_from_pulses(calibration.pulses(duration))
    trajectories = problem.simulate(theta)
    residuals = {label: 1.0 - traj.record("p_g00").real for label, traj in trajectories.items()}
    return ResetCurve(times=problem.save_times, residuals=residuals)
