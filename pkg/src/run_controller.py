# src/run_controller.py
"""
Bridges the command line and the numerical services: builds the problem a
RunConfig describes, runs one command and writes its artifacts and manifest.
"""

import logging
import os
from typing import Dict, Optional

import numpy as np

from src import adjoint, config, costs
from src.errors import ConfigError, NumericalError, OutputError, QocError, SnrFitError, ValidationCapError
from src.models.problem import ControlProblem, DriveConfig, ReadoutProblem, ResetProblem
from src.models.run_config import RunConfig
from src.optimizer import run_optimization
from src.results_manager import EpochLogWriter, save_csv, save_json, save_pulses, save_trajectories
from src.run_manifest import RunManifest, config_digest
from src.services import calibration_service, problem_service

logger = logging.getLogger(__name__)

RESET_CURVE_CSV = "reset_curve.csv"
PRIMARY_DRIVE = {"readout": "filter", "reset": "f0g1", "rabi": "x"}


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, ValidationCapError):
        return config.EXIT_VALIDATION_CAP
    if isinstance(error, (ConfigError, OutputError)):
        return config.EXIT_CONFIG_ERROR
    if isinstance(error, NumericalError):
        return config.EXIT_NUMERICAL_ERROR
    return config.EXIT_NUMERICAL_ERROR


class RunController:
    """Runs one command of a RunConfig; every run leaves a manifest in the output directory."""

    def __init__(self, run_config: RunConfig):
        self.config = run_config
        self.output_dir = run_config.output_dir
        self.manifest = RunManifest(command=run_config.command, config_digest=config_digest(run_config.raw),
                                    seed=run_config.seed, threads=adjoint.worker_count())
        self.handlers = {
            "simulate": self.simulate,
            "grad-check": self.grad_check,
            "optimize-readout": self.optimize,
            "optimize-reset": self.optimize,
            "calibrate-reset": self.calibrate_reset,
            "validate": self.validate,
        }

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def run(self) -> int:
        """Runs the configured command. Errors propagate after the manifest is written."""
        logger.info("Starting '%s' (output: %s)", self.config.command, self.output_dir)
        exit_code = config.EXIT_NUMERICAL_ERROR
        try:
            exit_code = self.handlers[self.config.command]()
            return exit_code
        except QocError as e:
            exit_code = exit_code_for(e)
            raise
        finally:
            self.manifest.finish(exit_code, self.output_dir)
            try:
                save_json(self.path(config.MANIFEST_JSON), self.manifest.to_dict())
            except OutputError as e:
                logger.error("Could not write the run manifest: %s", e)

    # --- Problem assembly ---

    def seed_pulses(self, tau_m: Optional[float] = None) -> Dict:
        pulses = self.config.pulse_seeds(tau_m)
        if "" in pulses:
            pulses[PRIMARY_DRIVE[self.config.problem]] = pulses.pop("")
        return pulses

    def build_problem(self, tau_m: Optional[float] = None) -> ControlProblem:
        cfg = self.config
        tau_m = tau_m or cfg.tau_m
        if cfg.problem == "rabi":
            rabi = cfg.rabi
            return problem_service.build_rabi_problem(
                n_pixels=rabi.pixels, amplitude=rabi.amplitude, target=rabi.target, gamma=rabi.gamma,
                qubit_detuning=rabi.qubit_detuning, optimize_detuning=rabi.optimize_detuning, solver=cfg.solver)
        drive_config = DriveConfig(pulses=self.seed_pulses(tau_m), transmon_drive=cfg.drive.transmon_drive,
                                   optimize_detuning=cfg.drive.optimize_detuning, weights=dict(cfg.weights),
                                   squared_reset_population=cfg.squared_reset_population)
        builder = problem_service.build_readout_problem if cfg.problem == "readout" \
            else problem_service.build_reset_problem
        return builder(cfg.system, tau_m, drive_config, solver=cfg.solver)

    def initial_theta(self, problem: ControlProblem) -> np.ndarray:
        """Seed parameters; pulse files override the builder defaults of the drives they name."""
        pulses = self.seed_pulses(problem.tau_m)
        known = {name: pulse for name, pulse in pulses.items() if name in problem.layout.slices}
        return problem.parameters_from_pulses(known)

    def _jittered(self, problem: ControlProblem, theta: np.ndarray) -> np.ndarray:
        """Seed parameters plus seeded gaussian noise on the pixels (never on detunings)."""
        jitter = self.config.optimizer.jitter
        if jitter <= 0:
            return theta
        rng = np.random.default_rng(self.config.seed)
        mask = np.array([not name.endswith(".detuning") for name in problem.parameter_names()])
        return theta + mask * rng.normal(0.0, jitter, theta.size)

    # --- Commands ---

    def simulate(self) -> int:
        problem = self.build_problem()
        theta = self.initial_theta(problem)
        trajectories = problem.simulate(theta)
        save_trajectories(self.path(config.TRAJECTORY_CSV), trajectories)
        evaluation = costs.cost_value_and_seeds(problem.cost, trajectories, theta, problem.generator)
        summary = problem.summary()
        summary["cost"] = {"total": evaluation.total, "terms": evaluation.terms}
        summary["steps"] = {label: t.step_count for label, t in trajectories.items()}
        summary.update(self._analysis(problem, trajectories, theta))
        save_json(self.path(config.SUMMARY_JSON), summary)
        logger.info("Simulation done: cost %.6e", evaluation.total)
        return config.EXIT_OK

    def _analysis(self, problem: ControlProblem, trajectories, theta: np.ndarray) -> dict:
        if isinstance(problem, ReadoutProblem):
            snr_value = problem.snr_value(trajectories)
            taus, curve = problem.snr_curve(trajectories)
            data = {
                "snr": snr_value,
                "snr_curve": {"tau_m_ns": (taus / config.NS).tolist(), "snr": curve.tolist()},
                "assignment_error": problem.assignment_error(trajectories),
            }
            try:
                data["snr_fit"] = problem.snr_model(trajectories, theta).to_dict()
            except SnrFitError as e:
                logger.warning("SNR fit skipped: %s", e)
            return data
        if isinstance(problem, ResetProblem):
            return {"residual_excitation": problem.residual_excitation(trajectories)}
        return {"final_records": {label: {name: float(np.real(series[-1]))
                                          for name, series in t.scalar_records.items()}
                                  for label, t in trajectories.items()}}

    def grad_check(self) -> int:
        cfg = self.config.grad_check
        problem = self.build_problem()
        if problem.generator.dim > cfg.max_dim:
            raise ConfigError(f"grad-check: Hilbert dimension {problem.generator.dim} exceeds the cap of "
                              f"{cfg.max_dim}; use a smaller truncation.")
        theta = self._jittered(problem, self.initial_theta(problem))
        report = {"dimension": problem.generator.dim, "tolerance": cfg.tol, "rel_step": cfg.rel_step}
        try:
            result = problem.evaluate(theta, with_gradient=True)
            reference = adjoint.finite_difference_gradient(problem.cost_function(), theta, cfg.rel_step,
                                                           scales=problem.parameter_scales())
        except NumericalError as e:
            report.update({"passed": False, "error": str(e)})
            save_json(self.path(config.GRAD_CHECK_JSON), report)
            logger.error("Gradient check failed: %s", e)
            return config.EXIT_NUMERICAL_ERROR

        self.manifest.note_peak(result.gradient.diagnostics.get("peak_live_matrices", 0))
        save_json(self.path(config.GRADIENT_JSON), result.gradient.to_dict())
        # compared per 2 pi GHz, the optimizer's units
        scales = problem.parameter_scales()
        comparison = compare_gradients(problem.parameter_names(), result.gradient.values * scales,
                                       reference * scales, cfg.tol)
        report["gradient_unit"] = "per 2pi GHz"
        report.update(comparison)
        report["cost"] = result.evaluation.total
        if result.gradient.time_derivative is not None:
            report["dC_dT"] = result.gradient.time_derivative
        save_json(self.path(config.GRAD_CHECK_JSON), report)
        logger.info("Gradient check %s: max relative error %.3e over %d components",
                    "passed" if report["passed"] else "FAILED", report["max_relative_error"], report["checked"])
        return config.EXIT_OK if report["passed"] else config.EXIT_NUMERICAL_ERROR

    def optimize(self) -> int:
        cfg = self.config
        settings = cfg.optimizer
        problem = self.build_problem()
        theta0 = self._jittered(problem, self.initial_theta(problem))
        term_names = problem.cost.term_names()
        save_json(self.path(config.SUMMARY_JSON), problem.summary())

        def checkpoint(epoch, theta):
            save_pulses(self.path(f"pulse_epoch{epoch:05d}.json"), problem.pulses_from_parameters(theta),
                        {"epoch": epoch})

        with EpochLogWriter(self.path(config.EPOCH_CSV), term_names) as writer:
            def on_epoch(entry):
                writer.append(entry)
                self.manifest.note_peak(entry.peak_live_matrices)

            result = run_optimization(problem, settings.epochs, theta0, lr=settings.lr, beta1=settings.beta1,
                                      beta2=settings.beta2, eps=settings.eps, on_epoch=on_epoch,
                                      checkpoint_every=settings.checkpoint_every, checkpoint_callback=checkpoint)

        best = result.log[result.best_epoch]
        save_pulses(self.path(config.PULSE_JSON), problem.pulses_from_parameters(result.best_theta),
                    {"epoch": result.best_epoch, "cost": result.best_cost, "terms": best.terms})
        summary = problem.summary()
        summary.update({"best_epoch": result.best_epoch, "best_cost": result.best_cost, "best_terms": best.terms,
                        "seed_cost": result.log[0].total, "epochs": settings.epochs})
        save_json(self.path(config.SUMMARY_JSON), summary)

        if cfg.validation.enabled and problem.spec is not None:
            self._validate(problem, result.best_theta)
        return config.EXIT_OK

    def _validate(self, problem: ControlProblem, theta: np.ndarray):
        report = problem_service.validate_truncation(problem, theta, self.config.validation.dims,
                                                     self.config.validation.memory_cap)
        save_json(self.path(config.VALIDATION_JSON), report.to_dict())
        return report

    def validate(self) -> int:
        problem = self.build_problem()
        self._validate(problem, self.initial_theta(problem))
        return config.EXIT_OK

    def calibrate_reset(self) -> int:
        cfg = self.config
        settings = cfg.calibration
        calibrations = calibration_service.calibrate_reset_flat(
            cfg.system, settings.amplitudes, duration=settings.duration, points=settings.points,
            solver=cfg.solver, f0g1_span=settings.f0g1_span, ef_span=settings.ef_span)

        rows = [row for cal in calibrations for sweep in cal.sweeps
                for row in sweep.to_rows(cal.f0g1_amplitude, config.MHZ)]
        save_csv(self.path(config.CALIBRATION_CSV), ["sweep", "f0g1_amplitude_MHz", "value_MHz", "objective"], rows)

        curve_rows = []
        for cal in calibrations:
            curve = calibration_service.reset_curve(cfg.system, cal, solver=cfg.solver)
            labels = sorted(curve.residuals)
            for i, t in enumerate(curve.times):
                curve_rows.append([cal.f0g1_amplitude / config.MHZ, t / config.NS]
                                  + [float(curve.residuals[label][i]) for label in labels])
        save_csv(self.path(RESET_CURVE_CSV), ["f0g1_amplitude_MHz", "time_ns", "residual_e", "residual_f",
                                              "residual_g"], curve_rows)

        best = min(calibrations, key=lambda cal: sum(cal.residuals.values()))
        save_pulses(self.path(config.PULSE_JSON), best.pulses(), {"calibration": best.to_dict()})
        save_json(self.path(config.SUMMARY_JSON), {"calibrations": [cal.to_dict() for cal in calibrations],
                                                   "best_f0g1_amplitude_MHz": best.f0g1_amplitude / config.MHZ})
        return config.EXIT_OK


def compare_gradients(names, adjoint_values, reference, tol: float,
                      min_gradient: float = config.GRAD_CHECK_MIN_GRADIENT) -> dict:
    """Per-component relative errors; components below min_gradient in both are not checked."""
    adjoint_values = np.asarray(adjoint_values, dtype=float)
    reference = np.asarray(reference, dtype=float)
    components = {}
    worst = 0.0
    checked = 0
    finite = bool(np.all(np.isfinite(adjoint_values)) and np.all(np.isfinite(reference)))
    for name, a, r in zip(names, adjoint_values, reference):
        entry = {"adjoint": float(a), "finite_difference": float(r)}
        scale = max(abs(a), abs(r))
        if not (np.isfinite(a) and np.isfinite(r)):
            entry["status"] = "non-finite"
        elif scale <= min_gradient:
            entry["status"] = "exact zero" if a == 0.0 else "skipped"
        else:
            error = abs(a - r) / scale
            entry["relative_error"] = float(error)
            entry["status"] = "ok" if error <= tol else "fail"
            worst = max(worst, error)
            checked += 1
        components[name] = entry
    return {
        "passed": bool(finite and worst <= tol),
        "max_relative_error": float(worst),
        "checked": checked,
        "components": components,
    }


def cmd_simulate(run_config: RunConfig) -> int:
    return RunController(run_config).run() if run_config.command == "simulate" else _mismatch(run_config, "simulate")


def cmd_grad_check(run_config: RunConfig) -> int:
    return RunController(run_config).run() if run_config.command == "grad-check" \
        else _mismatch(run_config, "grad-check")


def cmd_optimize(run_config: RunConfig) -> int:
    if run_config.command not in ("optimize-readout", "optimize-reset"):
        return _mismatch(run_config, "optimize-readout/optimize-reset")
    return RunController(run_config).run()


def cmd_calibrate_reset(run_config: RunConfig) -> int:
    return RunController(run_config).run() if run_config.command == "calibrate-reset" \
        else _mismatch(run_config, "calibrate-reset")


def cmd_validate(run_config: RunConfig) -> int:
    return RunController(run_config).run() if run_config.command == "validate" else _mismatch(run_config, "validate")


def _mismatch(run_config: RunConfig, expected: str):
    raise ConfigError(f"config.command: expected '{expected}', got '{run_config.command}'.")


COMMAND_HANDLERS = {
    "simulate": cmd_simulate,
    "grad-check": cmd_grad_check,
    "optimize-readout": cmd_optimize,
    "optimize-reset": cmd_optimize,
    "calibrate-reset": cmd_calibrate_reset,
    "validate": cmd_validate,
}
