# src/models/run_config.py
"""
The JSON run configuration. Field names carry their units (GHz for
frequencies, MHz for rates and amplitudes, ns for times); every value is
converted to angular SI units here, once. Errors name the offending path.
"""

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from src import config, controls
from src.errors import ConfigError, ConfigFileNotFoundError
from src.lindblad import ROUCHON2, SOLVER_METHODS, SolverConfig
from src.models.problem import TRANSMON_DRIVES
from src.models.pulse import PixelPulse
from src.models.system_spec import SystemSpec
from src.results_manager import load_pulse, load_pulse_set

COMMANDS = ("simulate", "grad-check", "optimize-readout", "optimize-reset", "calibrate-reset", "validate")
OPTIMIZE_COMMANDS = ("optimize-readout", "optimize-reset")
PROBLEMS = ("readout", "reset", "rabi")
RESET_POPULATIONS = ("squared", "plain")
SEED_SHAPES = ("flat", "two_step")

TOP_LEVEL_FIELDS = {"command", "problem", "output_dir", "seed", "system", "tau_m_ns", "drive", "weights",
                    "solver", "optimizer", "validation", "calibration", "grad_check", "rabi", "reset_population"}


def _check_fields(data, allowed, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object.")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {unknown}.")


def _number(data: dict, key: str, path: str, default=None, positive: bool = False, minimum=None):
    if key not in data:
        if default is None:
            raise ConfigError(f"{path}.{key}: required field is missing.")
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {value!r}.")
    value = float(value)
    if positive and not value > 0:
        raise ConfigError(f"{path}.{key}: must be positive, got {value:g}.")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}.{key}: must be at least {minimum:g}, got {value:g}.")
    return value


def _integer(data: dict, key: str, path: str, default=None, minimum: int = 0) -> int:
    if key not in data:
        if default is None:
            raise ConfigError(f"{path}.{key}: required field is missing.")
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}.{key}: expected an integer, got {value!r}.")
    if value < minimum:
        raise ConfigError(f"{path}.{key}: must be at least {minimum}, got {value}.")
    return value


def _complex_amplitude(value, path: str) -> complex:
    """A number or a [re, im] pair, in MHz."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value) * config.MHZ
    if isinstance(value, list) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value):
        return complex(value[0], value[1]) * config.MHZ
    raise ConfigError(f"{path}: expected a number or a [re, im] pair, got {value!r}.")


def _resolve(path: str, base_dir: str, where: str) -> str:
    if not isinstance(path, str) or not path:
        raise ConfigError(f"{where}: expected a file path.")
    resolved = path if os.path.isabs(path) else os.path.join(base_dir, path)
    if not os.path.isfile(resolved):
        raise ConfigFileNotFoundError(f"{where}: referenced file not found: {resolved}")
    return resolved


def solver_from_dict(data: dict, path: str = "solver") -> SolverConfig:
    _check_fields(data, {"method", "dt_ns", "tol", "dt_max_ns", "diagnostics"}, path)
    method = data.get("method", ROUCHON2)
    if method not in SOLVER_METHODS:
        raise ConfigError(f"{path}.method: must be one of {SOLVER_METHODS}, got {method!r}.")
    return SolverConfig(
        method=method,
        dt=_number(data, "dt_ns", path, config.ROUCHON_DT / config.NS, positive=True) * config.NS,
        tol=_number(data, "tol", path, config.DP45_TOL, positive=True),
        dt_max=_number(data, "dt_max_ns", path, config.DT_MAX / config.NS, positive=True) * config.NS,
        diagnostics=bool(data.get("diagnostics", False)),
    )


@dataclass
class PulseSeed:
    """Seed of one drive: a reference shape or a pulse file."""
    shape: str = "flat"
    amplitude: complex = 0.0
    weak_amplitude: complex = 0.0
    step_length: float = config.TWO_STEP_LENGTH
    ramp: float = 0.0
    detuning: float = 0.0
    file: Optional[str] = None

    def build(self, tau_m: float, bin_width: float = config.PIXEL_BIN) -> PixelPulse:
        if self.file is not None:
            return load_pulse(self.file)
        if self.shape == "two_step":
            return controls.two_step_pulse(self.amplitude, self.weak_amplitude, tau_m, self.step_length,
                                           bin_width, carrier_detuning=self.detuning)
        return controls.flat_pulse(self.amplitude, tau_m, bin_width, ramp=self.ramp, carrier_detuning=self.detuning)

    @classmethod
    def from_dict(cls, data: dict, path: str, base_dir: str) -> 'PulseSeed':
        _check_fields(data, {"shape", "amplitude_MHz", "strong_MHz", "weak_MHz", "step_ns", "ramp_ns",
                             "detuning_MHz", "file"}, path)
        if "file" in data:
            return cls(file=_resolve(data["file"], base_dir, f"{path}.file"))
        shape = data.get("shape", "flat")
        if shape not in SEED_SHAPES:
            raise ConfigError(f"{path}.shape: must be one of {SEED_SHAPES}, got {shape!r}.")
        if shape == "two_step":
            if "strong_MHz" not in data or "weak_MHz" not in data:
                raise ConfigError(f"{path}: a two_step seed needs strong_MHz and weak_MHz.")
            amplitude = _complex_amplitude(data["strong_MHz"], f"{path}.strong_MHz")
            weak = _complex_amplitude(data["weak_MHz"], f"{path}.weak_MHz")
        else:
            if "amplitude_MHz" not in data:
                raise ConfigError(f"{path}.amplitude_MHz: required field is missing.")
            amplitude = _complex_amplitude(data["amplitude_MHz"], f"{path}.amplitude_MHz")
            weak = 0.0
        return cls(shape=shape, amplitude=amplitude, weak_amplitude=weak,
                   step_length=_number(data, "step_ns", path, config.TWO_STEP_LENGTH / config.NS,
                                       positive=True) * config.NS,
                   ramp=_number(data, "ramp_ns", path, 0.0, minimum=0.0) * config.NS,
                   detuning=_number(data, "detuning_MHz", path, 0.0) * config.MHZ)


@dataclass
class DriveSettings:
    transmon_drive: Optional[str] = None
    optimize_detuning: bool = True
    seeds: Dict[str, PulseSeed] = field(default_factory=dict)
    pulse_file: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict, base_dir: str, path: str = "drive") -> 'DriveSettings':
        _check_fields(data, {"transmon_drive", "optimize_detuning", "seeds", "pulse_file"}, path)
        seeds = data.get("seeds", {})
        if not isinstance(seeds, dict):
            raise ConfigError(f"{path}.seeds: expected an object mapping drive names to seeds.")
        optimize_detuning = data.get("optimize_detuning", True)
        if not isinstance(optimize_detuning, bool):
            raise ConfigError(f"{path}.optimize_detuning: expected true or false.")
        transmon_drive = data.get("transmon_drive")
        if transmon_drive not in TRANSMON_DRIVES:
            raise ConfigError(f"{path}.transmon_drive: must be one of {TRANSMON_DRIVES}, got {transmon_drive!r}.")
        return cls(
            transmon_drive=transmon_drive,
            optimize_detuning=optimize_detuning,
            seeds={name: PulseSeed.from_dict(seed, f"{path}.seeds.{name}", base_dir) for name, seed in seeds.items()},
            pulse_file=(_resolve(data["pulse_file"], base_dir, f"{path}.pulse_file")
                        if data.get("pulse_file") is not None else None),
        )


@dataclass
class OptimizerSettings:
    epochs: int = 100
    lr: float = config.ADAM_LR
    beta1: float = config.ADAM_BETA1
    beta2: float = config.ADAM_BETA2
    eps: float = config.ADAM_EPS
    checkpoint_every: int = 0
    jitter: float = 0.0

    @classmethod
    def from_dict(cls, data: dict, path: str = "optimizer") -> 'OptimizerSettings':
        _check_fields(data, {"epochs", "lr", "beta1", "beta2", "eps", "checkpoint_every", "jitter_MHz"}, path)
        beta1 = _number(data, "beta1", path, config.ADAM_BETA1, minimum=0.0)
        beta2 = _number(data, "beta2", path, config.ADAM_BETA2, minimum=0.0)
        if beta1 >= 1 or beta2 >= 1:
            raise ConfigError(f"{path}: beta1 and beta2 must lie in [0, 1).")
        return cls(
            epochs=_integer(data, "epochs", path, 100),
            lr=_number(data, "lr", path, config.ADAM_LR, positive=True),
            beta1=beta1,
            beta2=beta2,
            eps=_number(data, "eps", path, config.ADAM_EPS, positive=True),
            checkpoint_every=_integer(data, "checkpoint_every", path, 0),
            jitter=_number(data, "jitter_MHz", path, 0.0, minimum=0.0) * config.MHZ,
        )


@dataclass
class ValidationSettings:
    enabled: bool = True
    dims: Optional[Tuple[int, int, int]] = None
    memory_cap: int = config.MEMORY_CAP_BYTES

    @classmethod
    def from_dict(cls, data: dict, path: str = "validation") -> 'ValidationSettings':
        _check_fields(data, {"enabled", "dims", "memory_cap_MiB"}, path)
        dims = data.get("dims")
        if dims is not None:
            if (not isinstance(dims, list) or len(dims) != 3
                    or not all(isinstance(d, int) and not isinstance(d, bool) and d >= 1 for d in dims)):
                raise ConfigError(f"{path}.dims: expected [N_t, N_d, N_u] positive integers, got {dims!r}.")
            dims = tuple(dims)
        cap = _number(data, "memory_cap_MiB", path, config.MEMORY_CAP_BYTES / 1024 ** 2, positive=True)
        return cls(enabled=bool(data.get("enabled", True)), dims=dims, memory_cap=int(cap * 1024 ** 2))


@dataclass
class CalibrationSettings:
    amplitudes: List[float] = field(default_factory=lambda: [config.RESET_SEED_F0G1])
    duration: float = config.CALIBRATION_DURATION
    points: int = config.CALIBRATION_POINTS
    f0g1_span: float = config.CALIBRATION_F0G1_SPAN
    ef_span: float = config.CALIBRATION_EF_SPAN

    @classmethod
    def from_dict(cls, data: dict, path: str = "calibration") -> 'CalibrationSettings':
        _check_fields(data, {"amplitudes_MHz", "duration_ns", "points", "f0g1_span_MHz", "ef_span_MHz"}, path)
        amplitudes = data.get("amplitudes_MHz", [config.RESET_SEED_F0G1 / config.MHZ])
        if not isinstance(amplitudes, list) or not amplitudes:
            raise ConfigError(f"{path}.amplitudes_MHz: expected a non-empty list of amplitudes.")
        if not all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in amplitudes):
            raise ConfigError(f"{path}.amplitudes_MHz: amplitudes must be numbers.")
        return cls(
            amplitudes=[float(a) * config.MHZ for a in amplitudes],
            duration=_number(data, "duration_ns", path, config.CALIBRATION_DURATION / config.NS,
                             positive=True) * config.NS,
            points=_integer(data, "points", path, config.CALIBRATION_POINTS, minimum=3),
            f0g1_span=_number(data, "f0g1_span_MHz", path, config.CALIBRATION_F0G1_SPAN / config.MHZ,
                              positive=True) * config.MHZ,
            ef_span=_number(data, "ef_span_MHz", path, config.CALIBRATION_EF_SPAN / config.MHZ,
                            positive=True) * config.MHZ,
        )


@dataclass
class GradCheckSettings:
    rel_step: float = config.GRAD_CHECK_REL_STEP
    tol: float = config.GRAD_CHECK_TOL
    max_dim: int = config.GRAD_CHECK_MAX_DIM

    @classmethod
    def from_dict(cls, data: dict, path: str = "grad_check") -> 'GradCheckSettings':
        _check_fields(data, {"rel_step", "tol"}, path)
        return cls(rel_step=_number(data, "rel_step", path, config.GRAD_CHECK_REL_STEP, positive=True),
                   tol=_number(data, "tol", path, config.GRAD_CHECK_TOL, positive=True))


@dataclass
class RabiSettings:
    pixels: int = config.RABI_PIXELS
    amplitude: float = config.RABI_SEED_AMPLITUDE
    gamma: float = 0.0
    qubit_detuning: float = 0.0
    target: str = "e"
    optimize_detuning: bool = False

    @classmethod
    def from_dict(cls, data: dict, path: str = "rabi") -> 'RabiSettings':
        _check_fields(data, {"pixels", "amplitude_MHz", "gamma_MHz", "detuning_MHz", "target",
                             "optimize_detuning"}, path)
        target = data.get("target", "e")
        if target not in ("g", "e"):
            raise ConfigError(f"{path}.target: must be 'g' or 'e'.")
        return cls(
            pixels=_integer(data, "pixels", path, config.RABI_PIXELS, minimum=1),
            amplitude=_number(data, "amplitude_MHz", path, config.RABI_SEED_AMPLITUDE / config.MHZ) * config.MHZ,
            gamma=_number(data, "gamma_MHz", path, 0.0, minimum=0.0) * config.MHZ,
            qubit_detuning=_number(data, "detuning_MHz", path, 0.0) * config.MHZ,
            target=target,
            optimize_detuning=bool(data.get("optimize_detuning", False)),
        )


@dataclass
class RunConfig:
    """One CLI run: the command, the device, seeds, solver and optimizer settings."""
    command: str
    output_dir: str
    problem: str = "readout"
    system: SystemSpec = field(default_factory=SystemSpec)
    tau_m: float = 40.0 * config.NS
    drive: DriveSettings = field(default_factory=DriveSettings)
    weights: Dict[str, float] = field(default_factory=dict)
    solver: SolverConfig = field(default_factory=SolverConfig)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    validation: ValidationSettings = field(default_factory=ValidationSettings)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    grad_check: GradCheckSettings = field(default_factory=GradCheckSettings)
    rabi: RabiSettings = field(default_factory=RabiSettings)
    squared_reset_population: bool = True
    seed: Optional[int] = None
    raw: dict = field(default_factory=dict, repr=False)

    def pulse_seeds(self, tau_m: Optional[float] = None) -> Dict[str, PixelPulse]:
        """Seed pulses per drive name: the pulse file first, then per-drive seeds."""
        tau_m = tau_m or self.tau_m
        pulses = {}
        if self.drive.pulse_file is not None:
            pulses.update(load_pulse_set(self.drive.pulse_file))
        for name, seed in self.drive.seeds.items():
            pulses[name] = seed.build(tau_m)
        return pulses

    @classmethod
    def from_dict(cls, data: dict, base_dir: str = ".") -> 'RunConfig':
        _check_fields(data, TOP_LEVEL_FIELDS, "config")
        command = data.get("command")
        if command not in COMMANDS:
            raise ConfigError(f"config.command: must be one of {COMMANDS}, got {command!r}.")
        problem = data.get("problem")
        if command == "optimize-readout":
            problem = problem or "readout"
        elif command in ("optimize-reset", "calibrate-reset"):
            problem = problem or "reset"
        elif command == "grad-check":
            problem = problem or "rabi"
        problem = problem or "readout"
        if problem not in PROBLEMS:
            raise ConfigError(f"config.problem: must be one of {PROBLEMS}, got {problem!r}.")
        if (command, problem) in (("optimize-readout", "reset"), ("optimize-readout", "rabi"),
                                  ("optimize-reset", "readout"), ("optimize-reset", "rabi")):
            raise ConfigError(f"config.problem: '{problem}' does not match command '{command}'.")

        seed = data.get("seed")
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
            raise ConfigError(f"config.seed: expected a non-negative integer, got {seed!r}.")
        if command in OPTIMIZE_COMMANDS and seed is None:
            raise ConfigError("config.seed: an RNG seed is mandatory for optimize commands.")

        output_dir = data.get("output_dir", "results")
        if not isinstance(output_dir, str) or not output_dir:
            raise ConfigError("config.output_dir: expected a directory path.")
        if not os.path.isabs(output_dir):
            output_dir = os.path.join(base_dir, output_dir)

        weights = data.get("weights", {})
        _check_fields(weights, set(config.READOUT_WEIGHTS) | set(config.RESET_WEIGHTS), "config.weights")
        for name in weights:
            _number(weights, name, "config.weights", minimum=0.0)

        reset_population = data.get("reset_population", "squared")
        if reset_population not in RESET_POPULATIONS:
            raise ConfigError(f"config.reset_population: must be one of {RESET_POPULATIONS}, "
                              f"got {reset_population!r}.")

        default_dims = config.RESET_DIMS if problem == "reset" else config.READOUT_DIMS
        if not isinstance(data.get("system", {}), dict):
            raise ConfigError("config.system: expected a JSON object.")
        system_data = dict(data.get("system", {}))
        for key, value in zip(("N_t", "N_d", "N_u"), default_dims):
            system_data.setdefault(key, value)

        return cls(
            command=command,
            output_dir=output_dir,
            problem=problem,
            system=SystemSpec.from_dict(system_data),
            tau_m=_number(data, "tau_m_ns", "config", 40.0, positive=True) * config.NS,
            drive=DriveSettings.from_dict(data.get("drive", {}), base_dir),
            weights={name: float(w) for name, w in weights.items()},
            solver=solver_from_dict(data.get("solver", {})),
            optimizer=OptimizerSettings.from_dict(data.get("optimizer", {})),
            validation=ValidationSettings.from_dict(data.get("validation", {})),
            calibration=CalibrationSettings.from_dict(data.get("calibration", {})),
            grad_check=GradCheckSettings.from_dict(data.get("grad_check", {})),
            rabi=RabiSettings.from_dict(data.get("rabi", {})),
            squared_reset_population=reset_population == "squared",
            seed=seed,
            raw=dict(data),
        )
