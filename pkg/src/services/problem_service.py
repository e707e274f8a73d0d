# src/services/problem_service.py
"""
Builds the transmon / resonator / Purcell-filter control problems.

The Hamiltonian is assembled in the rotating-wave approximation from the
transmon eigenbasis and the two normal modes of the resonator-filter pair,
then moved to a single frame rotating at the dressed driven-mode frequency
times the total excitation number. Every drive is a lowering-type operator
with a fixed frame offset (dressed reference frequency minus frame
frequency) plus the optimizable detuning.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import linalg, optimize

from src import config, controls, hilbert
from src.errors import ConfigError, DiagonalizationError, ValidationCapError
from src.hilbert import DRIVEN, TRANSMON, UNDRIVEN, CompositeSpace, NormalModeBasis, TransmonEigenbasis
from src.lindblad import LindbladGenerator, SolverConfig
from src.models import cost_spec as cs
from src.models.cost_spec import CostSpec, CostTerm
from src.models.problem import (TRANSMON_DRIVES, ControlProblem, DriveConfig, ProblemRecipe, ReadoutProblem,
                                ResetProblem)
from src.models.pulse import DriveTerm
from src.models.system_spec import SystemSpec
from src.utils.operators import ket_density, projector

logger = logging.getLogger(__name__)


@dataclass
class AssembledSystem:
    """Lab-frame RWA Hamiltonian and the embedded operators of one truncation."""
    spec: SystemSpec
    space: CompositeSpace
    transmon: TransmonEigenbasis
    modes: NormalModeBasis
    hamiltonian: np.ndarray
    excitations: np.ndarray
    ops: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.space.dim


@dataclass(frozen=True)
class DressedSpectrum:
    """Dressed energies and eigenvectors, indexed by the bare label they overlap most with."""
    energies: np.ndarray
    vectors: np.ndarray
    space: CompositeSpace
    driven_index: int
    n_crit: float

    def energy(self, k: int, n_d: int = 0, n_u: int = 0) -> float:
        return float(self.energies[self.space.basis_index(k, n_d, n_u)])

    def state(self, k: int, n_d: int = 0, n_u: int = 0) -> np.ndarray:
        return self.vectors[:, self.space.basis_index(k, n_d, n_u)]

    @property
    def omega_ge(self) -> float:
        return self.energy(1) - self.energy(0)

    @property
    def omega_ef(self) -> Optional[float]:
        return self.energy(2) - self.energy(1) if self.space.dims[0] > 2 else None

    @property
    def f0g1_frequency(self) -> Optional[float]:
        """|f00> -> |g10> Raman transition, the photon going to the driven mode."""
        return self.energy(2) - self.energy(0, 1) if self.space.dims[0] > 2 else None

    def driven_frequency(self, k: int = 0) -> float:
        return self.energy(k, 1, 0) - self.energy(k, 0, 0)

    def undriven_frequency(self, k: int = 0) -> Optional[float]:
        if self.space.dims[2] < 2:
            return None
        return self.energy(k, 0, 1) - self.energy(k, 0, 0)

    @property
    def chi_driven(self) -> float:
        return self.driven_frequency(1) - self.driven_frequency(0)

    @property
    def chi_undriven(self) -> Optional[float]:
        if self.space.dims[2] < 2:
            return None
        return self.undriven_frequency(1) - self.undriven_frequency(0)

    def chi(self) -> Tuple[Optional[float], Optional[float]]:
        """Dispersive pulls (lower mode, higher mode)."""
        pulls = [None, None]
        pulls[self.driven_index] = self.chi_driven
        pulls[1 - self.driven_index] = self.chi_undriven
        return tuple(pulls)

    def to_dict(self) -> dict:
        def mhz(x):
            return None if x is None else x / config.MHZ

        def ghz(x):
            return None if x is None else x / config.GHZ

        lower, higher = self.chi()
        return {
            "omega_ge_GHz": ghz(self.omega_ge),
            "omega_ef_GHz": ghz(self.omega_ef),
            "f0g1_GHz": ghz(self.f0g1_frequency),
            "driven_mode_GHz": ghz(self.driven_frequency(0)),
            "undriven_mode_GHz": ghz(self.undriven_frequency(0)),
            "chi_lower_MHz": mhz(lower),
            "chi_higher_MHz": mhz(higher),
            "n_crit": self.n_crit,
        }


def critical_photon_number(spec: SystemSpec, transmon: Optional[TransmonEigenbasis] = None) -> float:
    """(Delta / 2g)^2 with Delta = omega_r - omega_t (the nominal transmon frequency when given)."""
    if spec.g == 0:
        return math.inf
    omega_t = spec.omega_t
    if omega_t is None:
        transmon = transmon or hilbert.diagonalize_transmon(spec.ec, spec.ej, spec.n_charge, 2)
        omega_t = transmon.omega_01
    return ((spec.omega_r - omega_t) / (2.0 * spec.g)) ** 2


def assemble_system(spec: SystemSpec) -> AssembledSystem:
    n_t, n_d, n_u = spec.dims
    space = CompositeSpace(spec.dims)
    transmon = hilbert.diagonalize_transmon(spec.ec, spec.ej, spec.n_charge, n_t)
    modes = hilbert.diagonalize_filter_chain(spec.omega_r, spec.omega_f, spec.j, spec.kappa, spec.g)

    b = space.embed(TRANSMON, transmon.lowering_op)
    n_up = space.embed(TRANSMON, transmon.charge_raising())
    n_down = space.embed(TRANSMON, transmon.charge_lowering())
    c_driven = space.embed(DRIVEN, hilbert.bosonic_ops(n_d).lowering)
    if n_u >= 2:
        c_undriven = space.embed(UNDRIVEN, hilbert.bosonic_ops(n_u).lowering)
    else:
        # undriven mode dropped
        c_undriven = np.zeros((space.dim, space.dim), dtype=complex)
    # normal-mode index (0 = lower) -> operator
    mode_ops = {spec.driven_index: c_driven, 1 - spec.driven_index: c_undriven}

    h = space.embed(TRANSMON, np.diag(transmon.energies).astype(complex))
    for m in (0, 1):
        c = mode_ops[m]
        c_dag = c.conj().T
        h += modes.mode_freqs[m] * (c_dag @ c)
        h += -1j * modes.transmon_couplings[m] * (n_up @ c - n_down @ c_dag)
    h = 0.5 * (h + h.conj().T)

    filter_op = modes.drive_weights[0] * mode_ops[0] + modes.drive_weights[1] * mode_ops[1]
    resonator_op = modes.resonator_weights[0] * mode_ops[0] + modes.resonator_weights[1] * mode_ops[1]
    levels = np.arange(n_t)[:, None, None] + np.arange(n_d)[None, :, None] + np.arange(n_u)[None, None, :]
    ops = {
        "b": b, "n_up": n_up, "n_down": n_down,
        "c_d": c_driven, "c_u": c_undriven,
        "f": filter_op, "a": resonator_op,
    }
    return AssembledSystem(spec=spec, space=space, transmon=transmon, modes=modes, hamiltonian=h,
                           excitations=levels.ravel().astype(float), ops=ops)


def dressed_spectrum(spec: SystemSpec, dims=None, system: Optional[AssembledSystem] = None) -> DressedSpectrum:
    """
    Exact diagonalization of the assembled RWA Hamiltonian. The excitation
    number is conserved, so each excitation block is diagonalized separately
    and dressed states are matched to bare labels by maximum overlap.
    """
    if system is None:
        system = assemble_system(spec if dims is None else spec.with_dims(dims))
    h = system.hamiltonian
    n = system.dim
    energies = np.zeros(n)
    vectors = np.zeros((n, n), dtype=complex)
    for level in np.unique(system.excitations):
        idx = np.flatnonzero(system.excitations == level)
        try:
            values, block = linalg.eigh(h[np.ix_(idx, idx)])
        except linalg.LinAlgError as e:
            raise DiagonalizationError(f"Dressed-state eigensolve failed in excitation block {level:g}: {e}") from e
        rows, cols = optimize.linear_sum_assignment(-np.abs(block) ** 2)
        energies[idx[rows]] = values[cols]
        for r, c in zip(rows, cols):
            vector = block[:, c]
            # phase: largest component on its bare label real positive
            vector = vector * np.exp(-1j * np.angle(vector[r]))
            vectors[idx, idx[r]] = vector
    spectrum = DressedSpectrum(energies=energies, vectors=vectors, space=system.space,
                               driven_index=system.spec.driven_index,
                               n_crit=critical_photon_number(system.spec, system.transmon))
    logger.debug("Dressed spectrum: %s", spectrum.to_dict())
    return spectrum


def _dressed_density(spectrum: DressedSpectrum, k: int) -> np.ndarray:
    psi = spectrum.state(k)
    rho = np.outer(psi, psi.conj())
    return 0.5 * (rho + rho.conj().T) / np.trace(rho).real


def _records(system: AssembledSystem, spectrum: DressedSpectrum) -> Dict[str, np.ndarray]:
    space = system.space
    n_t, n_d, n_u = space.dims
    ops = system.ops
    records = {
        "beta": ops["f"],
        "n_res": ops["a"].conj().T @ ops["a"],
        "n_d": ops["c_d"].conj().T @ ops["c_d"],
        "n_u": ops["c_u"].conj().T @ ops["c_u"],
    }
    for k in range(n_t):
        records[f"p_t{k}"] = space.embed(TRANSMON, projector(n_t, k))
    level_t = config.READOUT_FORBIDDEN_TRANSMON_LEVEL
    if level_t < n_t:
        records["forbidden_t"] = space.embed(TRANSMON, np.diag((np.arange(n_t) >= level_t).astype(complex)))
    level_u = config.READOUT_FORBIDDEN_UNDRIVEN_LEVEL
    if level_u < n_u:
        records["forbidden_u"] = space.embed(UNDRIVEN, np.diag((np.arange(n_u) >= level_u).astype(complex)))
    records["p_g00"] = _dressed_density(spectrum, 0)
    return records


def _jump_operators(system: AssembledSystem):
    spec = system.spec
    jumps = [math.sqrt(spec.kappa) * system.ops["f"]]
    if spec.gamma > 0:
        jumps.append(math.sqrt(spec.gamma) * system.ops["b"])
    return jumps


def _forbidden_terms(weights, tau_m, dims, labels):
    """Forbidden-level penalties; a level at or above its truncation has nothing to penalize and is skipped."""
    terms = []
    n_t, _, n_u = dims
    candidates = (
        ("forbidden_transmon", "forbidden_t", config.READOUT_FORBIDDEN_TRANSMON_LEVEL, n_t, "N_t"),
        ("forbidden_undriven", "forbidden_u", config.READOUT_FORBIDDEN_UNDRIVEN_LEVEL, n_u, "N_u"),
    )
    for name, record, level, truncation, dim_name in candidates:
        if weights.get(name, 0.0) <= 0:
            continue
        if level >= truncation:
            logger.warning("%s skipped: forbidden level %d is not below %s=%d.", name, level, dim_name, truncation)
            continue
        terms.append(CostTerm(cs.FORBIDDEN_STATES, weights[name], {
            "record": record, "labels": labels, "tau_m": tau_m, "level": level, "truncation": truncation},
            name=name))
    return terms


def _seed_pulse(drive_config: DriveConfig, name: str, amplitude: float, tau_m: float):
    pulse = drive_config.pulses.get(name)
    if pulse is None:
        return controls.flat_pulse(amplitude, tau_m)
    if abs(pulse.duration - tau_m) > 1e-6 * pulse.bin_width:
        raise ConfigError(f"Seed pulse '{name}' lasts {pulse.duration / config.NS:g} ns, "
                          f"expected tau_m = {tau_m / config.NS:g} ns.")
    return pulse


def _frame_hamiltonian(system: AssembledSystem, frame: float) -> np.ndarray:
    return system.hamiltonian - frame * np.diag(system.excitations).astype(complex)


def build_readout_problem(spec: SystemSpec, tau_m: float, drive_config: Optional[DriveConfig] = None,
                          solver: Optional[SolverConfig] = None, checkpoint_spacing: Optional[float] = None,
                          frame: Optional[float] = None,
                          references: Optional[Dict[str, float]] = None) -> ReadoutProblem:
    """
    Dispersive readout through the Purcell filter. The filter drive acts on
    -f; the optional transmon drive acts on -i n_down at the dressed g-e, e-f
    or readout frequency. `frame` and `references` pin the frame and drive
    reference frequencies (used when rebuilding at another truncation).
    """
    drive_config = drive_config or DriveConfig()
    if drive_config.transmon_drive not in TRANSMON_DRIVES:
        raise ConfigError(f"drive.transmon_drive must be one of {TRANSMON_DRIVES}, "
                          f"got '{drive_config.transmon_drive}'.")
    system = assemble_system(spec)
    spectrum = dressed_spectrum(spec, system=system)
    frame = spectrum.driven_frequency(0) if frame is None else frame
    refs = dict(references or {})
    readout_frequency = 0.5 * (spectrum.driven_frequency(0) + spectrum.driven_frequency(1))
    refs.setdefault("filter", readout_frequency)
    strategy = drive_config.transmon_drive
    if strategy is not None and "transmon" not in refs:
        if strategy == "ef" and spectrum.omega_ef is None:
            raise ConfigError("An e-f transmon drive needs N_t >= 3.")
        refs["transmon"] = {"ge": spectrum.omega_ge, "ef": spectrum.omega_ef,
                            "resonator": readout_frequency}[strategy]

    drives = [DriveTerm("filter", -system.ops["f"],
                        _seed_pulse(drive_config, "filter", config.READOUT_SEED_AMPLITUDE, tau_m),
                        frame_offset=refs["filter"] - frame, optimize_detuning=drive_config.optimize_detuning,
                        reference_frequency=refs["filter"])]
    if strategy is not None:
        drives.append(DriveTerm("transmon", -1j * system.ops["n_down"],
                                _seed_pulse(drive_config, "transmon", 0.0, tau_m),
                                frame_offset=refs["transmon"] - frame,
                                optimize_detuning=drive_config.optimize_detuning,
                                reference_frequency=refs["transmon"]))

    weights = {**config.READOUT_WEIGHTS, **drive_config.weights}
    labels = ("g", "e")
    terms = [
        CostTerm(cs.INVERSE_SNR, weights["inverse_snr"], {
            "record": "beta", "labels": labels, "eta": spec.eta, "kappa": spec.kappa, "tau_m": tau_m},
            name="inverse_snr"),
        CostTerm(cs.AMPLITUDE_PENALTY, weights["amplitude_filter"], {
            "drive": "filter", "omega_max": config.READOUT_OMEGA_MAX, "tau_m": tau_m}, name="amplitude_filter"),
    ]
    if strategy is not None:
        terms.append(CostTerm(cs.AMPLITUDE_PENALTY, weights["amplitude_transmon"], {
            "drive": "transmon", "omega_max": config.READOUT_OMEGA_MAX, "tau_m": tau_m},
            name="amplitude_transmon"))
    terms.extend(_forbidden_terms(weights, tau_m, spec.dims, labels))
    terms.append(CostTerm(cs.PHOTON_CAP, weights["photon_cap"], {
        "record": "n_res", "labels": labels, "n_crit": spectrum.n_crit, "tau_m": tau_m}, name="photon_cap"))

    generator = LindbladGenerator(_frame_hamiltonian(system, frame), drives, _jump_operators(system))
    problem = ReadoutProblem(
        generator=generator,
        initial_states={"g": _dressed_density(spectrum, 0), "e": _dressed_density(spectrum, 1)},
        cost=CostSpec(terms),
        records=_records(system, spectrum),
        tau_m=tau_m,
        solver=solver or SolverConfig(),
        checkpoint_spacing=checkpoint_spacing or 1.0 / spec.kappa,
        spec=spec,
        metadata={"frame": frame, "references": refs, "spectrum": spectrum,
                  "report": {"strategy": strategy, "spectrum": spectrum.to_dict()}},
    )
    problem.recipe = ProblemRecipe("readout", {
        "tau_m": tau_m, "drive_config": drive_config, "solver": problem.solver,
        "checkpoint_spacing": problem.checkpoint_spacing, "frame": frame, "references": refs})
    logger.info("Readout problem: dims=%s, N=%d, %d parameters, strategy=%s",
                spec.dims, generator.dim, generator.n_params, strategy)
    return problem


def build_reset_problem(spec: SystemSpec, tau_m: float, drive_config: Optional[DriveConfig] = None,
                        solver: Optional[SolverConfig] = None, checkpoint_spacing: Optional[float] = None,
                        frame: Optional[float] = None,
                        references: Optional[Dict[str, float]] = None) -> ResetProblem:
    """
    f0-g1 reset: a charge drive at the dressed |f00> -> |g10> Raman frequency
    and a second one at the e-f transition, both on -i n_down.
    """
    drive_config = drive_config or DriveConfig()
    if spec.dims[0] < 3:
        raise ConfigError(f"The reset problem needs the |f> level (N_t >= 3), got N_t={spec.dims[0]}.")
    if spec.dims[0] < 4:
        logger.warning("N_t=%d leaves no guard level above |f>; N_t >= 4 is recommended.", spec.dims[0])
    system = assemble_system(spec)
    spectrum = dressed_spectrum(spec, system=system)
    frame = spectrum.driven_frequency(0) if frame is None else frame
    refs = dict(references or {})
    refs.setdefault("f0g1", spectrum.f0g1_frequency)
    refs.setdefault("ef", spectrum.omega_ef)

    charge = -1j * system.ops["n_down"]
    seeds = {"f0g1": config.RESET_SEED_F0G1, "ef": config.RESET_SEED_EF}
    drives = [DriveTerm(name, charge, _seed_pulse(drive_config, name, seeds[name], tau_m),
                        frame_offset=refs[name] - frame, optimize_detuning=drive_config.optimize_detuning,
                        reference_frequency=refs[name])
              for name in ("f0g1", "ef")]

    weights = {**config.RESET_WEIGHTS, **drive_config.weights}
    terms = [CostTerm(cs.RESET_INFIDELITY, weights[label], {"label": label, "record": "p_g00",
                                                       "squared": drive_config.squared_reset_population},
                      name=f"reset_{label}")
             for label in ("g", "e", "f")]
    for name in ("f0g1", "ef"):
        terms.append(CostTerm(cs.AMPLITUDE_PENALTY, weights["amplitude_transmon"], {
            "drive": name, "omega_max": config.RESET_OMEGA_MAX, "tau_m": tau_m}, name=f"amplitude_{name}"))

    generator = LindbladGenerator(_frame_hamiltonian(system, frame), drives, _jump_operators(system))
    problem = ResetProblem(
        generator=generator,
        initial_states={label: _dressed_density(spectrum, k) for k, label in enumerate(("g", "e", "f"))},
        cost=CostSpec(terms),
        records=_records(system, spectrum),
        tau_m=tau_m,
        solver=solver or SolverConfig(),
        checkpoint_spacing=checkpoint_spacing or 1.0 / spec.kappa,
        spec=spec,
        metadata={"frame": frame, "references": refs, "spectrum": spectrum,
                  "report": {"spectrum": spectrum.to_dict()}},
    )
    problem.recipe = ProblemRecipe("reset", {
        "tau_m": tau_m, "drive_config": drive_config, "solver": problem.solver,
        "checkpoint_spacing": problem.checkpoint_spacing, "frame": frame, "references": refs})
    logger.info("Reset problem: dims=%s, N=%d, %d parameters", spec.dims, generator.dim, generator.n_params)
    return problem


def build_rabi_problem(n_pixels: int = config.RABI_PIXELS, bin_width: float = config.PIXEL_BIN,
                       amplitude: float = config.RABI_SEED_AMPLITUDE, target: str = "e",
                       gamma: float = 0.0, qubit_detuning: float = 0.0, optimize_detuning: bool = False,
                       solver: Optional[SolverConfig] = None) -> ControlProblem:
    """
    Two-level toy: H = qubit_detuning |e><e| + (Omega/2)(sigma_- e^{i delta t} + h.c.),
    optional decay sqrt(gamma) sigma_-. The cost is the final population of the
    level opposite to `target`, prepared from |g>.
    """
    if target not in ("g", "e"):
        raise ValueError("target must be 'g' or 'e'.")
    tau_m = n_pixels * bin_width
    lowering = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
    pulse = controls.flat_pulse(amplitude, tau_m, bin_width)
    drive = DriveTerm("x", lowering, pulse, optimize_detuning=optimize_detuning)
    jumps = [math.sqrt(gamma) * lowering] if gamma > 0 else []
    generator = LindbladGenerator(np.diag([0.0, qubit_detuning]).astype(complex), [drive], jumps)
    records = {"p_g": projector(2, 0), "p_e": projector(2, 1), "sigma_minus": lowering}
    wrong = "p_g" if target == "e" else "p_e"
    cost = CostSpec([CostTerm(cs.EXPECTATION, 1.0, {"label": "g", "record": wrong, "index": -1},
                              name="infidelity")])
    problem = ControlProblem(generator=generator, initial_states={"g": ket_density(2, 0)}, cost=cost,
                             records=records, tau_m=tau_m, record_bin=bin_width,
                             solver=solver or SolverConfig(), checkpoint_spacing=tau_m / 4.0)
    problem.recipe = ProblemRecipe("rabi", {
        "n_pixels": n_pixels, "bin_width": bin_width, "amplitude": amplitude, "target": target,
        "gamma": gamma, "qubit_detuning": qubit_detuning, "optimize_detuning": optimize_detuning,
        "solver": problem.solver})
    return problem


BUILDERS = {"readout": build_readout_problem, "reset": build_reset_problem}


# --- Truncation validation ---

@dataclass
class TruncationReport:
    original_dims: Tuple[int, int, int]
    enlarged_dims: Tuple[int, int, int]
    cost_original: float
    cost_enlarged: float
    term_deltas: Dict[str, float]
    record_deltas: Dict[str, Dict[str, float]]
    memory_estimate_bytes: int

    @property
    def cost_delta(self) -> float:
        return abs(self.cost_enlarged - self.cost_original)

    @property
    def max_record_delta(self) -> float:
        return max((d for per_label in self.record_deltas.values() for d in per_label.values()), default=0.0)

    def to_dict(self) -> dict:
        return {
            "original_dims": list(self.original_dims),
            "enlarged_dims": list(self.enlarged_dims),
            "cost_original": self.cost_original,
            "cost_enlarged": self.cost_enlarged,
            "cost_delta": self.cost_delta,
            "term_deltas": self.term_deltas,
            "record_deltas": self.record_deltas,
            "max_record_delta": self.max_record_delta,
            "memory_estimate_MiB": self.memory_estimate_bytes / 1024 ** 2,
        }


def default_validation_dims(dims) -> Tuple[int, int, int]:
    n_t, n_d, n_u = dims
    return (max(n_t, config.VALIDATION_N_T), n_d + config.VALIDATION_EXTRA_N_D, max(n_u, config.VALIDATION_N_U))


def memory_estimate(dims) -> int:
    n = int(np.prod(dims))
    return 16 * n * n * config.WORKING_MATRICES


def rebuild_problem(problem: ControlProblem, dims) -> ControlProblem:
    """Same problem at another truncation, with the original frame and reference frequencies."""
    if problem.recipe is None or problem.recipe.builder not in BUILDERS or problem.spec is None:
        raise ConfigError("Only readout and reset problems can be rebuilt at another truncation.")
    return BUILDERS[problem.recipe.builder](problem.spec.with_dims(dims), **problem.recipe.kwargs)


def validate_truncation(problem: ControlProblem, theta: np.ndarray, enlarged_dims=None,
                        cap_bytes: int = config.MEMORY_CAP_BYTES) -> TruncationReport:
    """
    Re-simulates the given parameters in a larger Hilbert space and reports
    the cost and record deltas against the original truncation.
    """
    if problem.spec is None:
        raise ConfigError("Truncation validation needs a problem built from a SystemSpec.")
    original = problem.spec.dims
    enlarged = tuple(int(d) for d in (enlarged_dims or default_validation_dims(original)))
    if len(enlarged) != 3 or any(e < o for e, o in zip(enlarged, original)):
        raise ConfigError(f"Enlarged dims {enlarged} must be at least the original {original}.")
    estimate = memory_estimate(enlarged)
    if estimate > cap_bytes:
        raise ValidationCapError(estimate, cap_bytes)

    larger = problem if enlarged == original else rebuild_problem(problem, enlarged)
    before = problem.evaluate(theta, with_gradient=False)
    after = larger.evaluate(theta, with_gradient=False)

    term_deltas = {name: abs(after.evaluation.terms.get(name, 0.0) - value)
                   for name, value in before.evaluation.terms.items()}
    record_deltas = {}
    for label, trajectory in before.trajectories.items():
        other = after.trajectories[label]
        record_deltas[label] = {
            name: float(np.max(np.abs(other.record(name) - series)))
            for name, series in trajectory.scalar_records.items() if name in other.scalar_records
        }
    report = TruncationReport(original_dims=original, enlarged_dims=enlarged,
                              cost_original=before.evaluation.total, cost_enlarged=after.evaluation.total,
                              term_deltas=term_deltas, record_deltas=record_deltas,
                              memory_estimate_bytes=estimate)
    logger.info("Truncation validation %s -> %s: cost delta %.3e, max record delta %.3e",
                original, enlarged, report.cost_delta, report.max_record_delta)
    if report.max_record_delta > config.VALIDATION_REPORT_THRESHOLD:
        logger.warning("Truncation deltas above %.1e; the original truncation may be too small.",
                       config.VALIDATION_REPORT_THRESHOLD)
    return report
