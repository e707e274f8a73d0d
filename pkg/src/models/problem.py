# src/models/problem.py
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from src import adjoint, config, controls, costs, lindblad
from src.lindblad import LindbladGenerator, SolverConfig
from src.models.cost_spec import CostSpec, SnrFitModel
from src.models.pulse import PixelPulse
from src.models.states import Trajectory
from src.models.system_spec import SystemSpec

logger = logging.getLogger(__name__)

TRANSMON_DRIVES = (None, "ge", "ef", "resonator")


@dataclass
class ParameterLayout:
    """Where each drive's parameters live in the flat parameter vector."""
    names: List[str]
    slices: Dict[str, slice]

    def __post_init__(self):
        covered = np.zeros(len(self.names), dtype=int)
        for sl in self.slices.values():
            covered[sl] += 1
        if np.any(covered != 1):
            raise ValueError("Parameter layout must cover every optimizable slot exactly once.")
        if len(set(self.names)) != len(self.names):
            raise ValueError("Parameter names must be unique.")

    @classmethod
    def from_generator(cls, gen: LindbladGenerator) -> 'ParameterLayout':
        return cls(names=gen.parameter_names(),
                   slices={drive.name: sl for drive, sl in zip(gen.drives, gen.slices)})

    def to_dict(self) -> dict:
        return {name: [sl.start, sl.stop] for name, sl in self.slices.items()}


@dataclass
class DriveConfig:
    """Seed pulses and options for the drives of a problem.

    `pulses` maps drive names to seed pulses (missing ones fall back to the
    builder's flat-top defaults). `transmon_drive` selects the readout strategy:
    None (filter drive only), "ge", "ef" or "resonator".
    `squared_reset_population` selects log10(1 - p^2) over log10(1 - p) for the
    reset infidelity terms.
    """
    pulses: Dict[str, PixelPulse] = field(default_factory=dict)
    transmon_drive: Optional[str] = None
    optimize_detuning: bool = True
    weights: Dict[str, float] = field(default_factory=dict)
    squared_reset_population: bool = True


@dataclass
class ProblemRecipe:
    """How to rebuild a problem, e.g. at a larger truncation."""
    builder: str
    kwargs: Dict = field(default_factory=dict)


@dataclass
class ControlProblem:
    """Generator, prepared states, cost and records of one optimal-control problem."""
    generator: LindbladGenerator
    initial_states: Dict[str, np.ndarray]
    cost: CostSpec
    records: Dict[str, np.ndarray]
    tau_m: float
    record_bin: float = config.RECORD_BIN
    solver: SolverConfig = field(default_factory=SolverConfig)
    checkpoint_spacing: Optional[float] = None
    spec: Optional[SystemSpec] = None
    metadata: Dict = field(default_factory=dict)
    recipe: Optional[ProblemRecipe] = None

    def __post_init__(self):
        n = self.generator.dim
        for label, rho in self.initial_states.items():
            rho = np.asarray(rho, dtype=complex)
            if rho.shape != (n, n):
                raise ValueError(f"Initial state '{label}' has shape {rho.shape}, expected ({n}, {n}).")
            if np.max(np.abs(rho - rho.conj().T)) > 1e-12 or abs(np.trace(rho) - 1.0) > 1e-10:
                raise ValueError(f"Initial state '{label}' is not a unit-trace Hermitian matrix.")
            if np.linalg.eigvalsh(rho)[0] < -1e-10:
                raise ValueError(f"Initial state '{label}' is not positive semidefinite.")
            self.initial_states[label] = rho
        n_bins = int(round(self.tau_m / self.record_bin))
        if n_bins < 1 or abs(n_bins * self.record_bin - self.tau_m) > 1e-6 * self.record_bin:
            raise ValueError(f"tau_m={self.tau_m:.3e} s is not a multiple of the record bin.")
        if self.checkpoint_spacing is None:
            self.checkpoint_spacing = self.tau_m
        self.layout = ParameterLayout.from_generator(self.generator)

    @property
    def save_times(self) -> np.ndarray:
        n_bins = int(round(self.tau_m / self.record_bin))
        return self.record_bin * np.arange(n_bins + 1)

    @property
    def dims(self):
        return None if self.spec is None else self.spec.dims

    def parameter_names(self) -> List[str]:
        return self.generator.parameter_names()

    def initial_parameters(self) -> np.ndarray:
        return self.generator.initial_parameters()

    def parameter_scales(self) -> np.ndarray:
        """Amplitudes and detunings are all angular frequencies; normalize by 2 pi GHz."""
        return np.full(self.generator.n_params, config.FREQUENCY_UNIT)

    def pulses_from_parameters(self, theta: np.ndarray) -> Dict[str, PixelPulse]:
        theta = self.generator.check_parameters(theta)
        return {drive.name: drive.pulse_from_parameters(theta[sl])
                for drive, sl in zip(self.generator.drives, self.generator.slices)}

    def parameters_from_pulses(self, pulses: Dict[str, PixelPulse]) -> np.ndarray:
        """Flat parameters for the given pulses; drives without an entry keep their seed."""
        unknown = sorted(set(pulses) - set(self.layout.slices))
        if unknown:
            raise KeyError(f"No drive named {unknown}.")
        parts = []
        for drive in self.generator.drives:
            pulse = pulses.get(drive.name, drive.pulse)
            if pulse.n_pixels != drive.pulse.n_pixels:
                raise ValueError(f"Pulse for '{drive.name}' has {pulse.n_pixels} pixels, "
                                 f"expected {drive.pulse.n_pixels}.")
            parts.append(drive.parameters_from_pulse(pulse))
        return np.concatenate(parts) if parts else np.zeros(0)

    def evaluate(self, theta: np.ndarray, with_gradient: bool = True,
                 threads: Optional[int] = None) -> adjoint.AdjointResult:
        return adjoint.evaluate(self.generator, theta, self.initial_states, self.cost, self.records,
                                self.save_times, self.checkpoint_spacing, self.solver,
                                with_gradient=with_gradient, threads=threads)

    def cost_function(self) -> Callable[[np.ndarray], float]:
        """theta -> total cost, for finite differences."""
        return lambda theta: self.evaluate(theta, with_gradient=False).evaluation.total

    def simulate(self, theta: np.ndarray, keep_states: bool = False, solver: Optional[SolverConfig] = None,
                 labels: Optional[List[str]] = None) -> Dict[str, Trajectory]:
        """Forward trajectories of the prepared states on the record grid."""
        theta = self.generator.check_parameters(theta)
        labels = sorted(self.initial_states) if labels is None else labels
        times = self.save_times

        def run(label):
            return lindblad.integrate(self.generator, theta, self.initial_states[label], times[0], times[-1],
                                      save_times=times, solver=solver or self.solver, records=self.records,
                                      keep_states=keep_states, label=label)

        return dict(zip(labels, adjoint.parallel_map(run, labels)))

    def summary(self) -> dict:
        data = {
            "kind": type(self).__name__,
            "dimension": self.generator.dim,
            "tau_m_ns": self.tau_m / config.NS,
            "parameters": self.generator.n_params,
            "layout": self.layout.to_dict(),
            "states": sorted(self.initial_states),
            "cost": self.cost.term_names(),
        }
        if self.spec is not None:
            data["system"] = self.spec.to_dict()
        data.update(self.metadata.get("report", {}))
        return data


class ReadoutProblem(ControlProblem):
    """Dispersive readout: pointer states of |g> and |e> separated through the filter field."""

    def snr_value(self, trajectories: Dict[str, Trajectory]) -> float:
        return costs.snr(trajectories["g"].record("beta"), trajectories["e"].record("beta"),
                         self.spec.eta, self.spec.kappa, self.tau_m, self.record_bin)

    def snr_curve(self, trajectories: Dict[str, Trajectory]):
        return costs.snr_curve(trajectories["g"].record("beta"), trajectories["e"].record("beta"),
                               self.spec.eta, self.spec.kappa, self.record_bin)

    def assignment_error(self, trajectories: Dict[str, Trajectory]) -> float:
        return costs.assignment_error(self.snr_value(trajectories), self.tau_m, self.spec.t1)

    def snr_model(self, trajectories: Dict[str, Trajectory], theta: np.ndarray,
                  min_tau: Optional[float] = None) -> SnrFitModel:
        """
        Saturation-model fit of the SNR curve over tau >= min_tau (tau_m / 2 by default).
        chi is half the dressed pull of the driven mode; Omega_f is the mean filter
        coefficient |Omega| / 2 over the integration window.
        """
        taus, curve = self.snr_curve(trajectories)
        min_tau = 0.5 * self.tau_m if min_tau is None else min_tau
        keep = taus >= min_tau - 1e-6 * self.record_bin
        pulse = self.pulses_from_parameters(theta)["filter"]
        omega_f = 0.5 * float(np.mean(np.abs(controls.evaluate_envelope(pulse, self.save_times[:-1]))))
        chi = 0.5 * self.metadata["spectrum"].chi_driven
        return costs.snr_fit(self.spec.kappa, chi, omega_f, self.spec.eta, list(zip(taus[keep], curve[keep])))


class ResetProblem(ControlProblem):
    """f0-g1 reset: |g>, |e> and |f> all driven to the ground state."""

    def residual_excitation(self, trajectories: Dict[str, Trajectory]) -> Dict[str, float]:
        """1 - <g00|rho(tau_m)|g00> per prepared state."""
        return {label: float(1.0 - traj.record("p_g00")[-1].real) for label, traj in trajectories.items()}
