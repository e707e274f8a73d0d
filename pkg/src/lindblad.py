"""
Lindblad generator, its adjoint, and the master-equation integrators.

Superoperators act on N x N matrices directly; the N^2 x N^2 Liouvillian is
never formed. Two steppers are provided: a fixed-step, trace-renormalized
second-order Rouchon (Kraus) map and an adaptive Dormand-Prince 4/5 pair.

The Rouchon map splits each step symmetrically: half a step of exact no-jump
evolution exp(h G / 2), a second-order jump update, and the other half. The
split makes the map time-symmetric, so replaying it with -h retraces a
trajectory to fourth order per step.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from src import config, controls
from src.errors import DimensionError, StiffnessError
from src.models.pulse import DriveTerm
from src.models.states import DensityMatrix, Trajectory
from src.utils.operators import check_square, is_hermitian

logger = logging.getLogger(__name__)

ROUCHON2 = "rouchon2"
DP45 = "dp45"
SOLVER_METHODS = (ROUCHON2, DP45)


@dataclass
class SolverConfig:
    method: str = ROUCHON2
    dt: float = config.ROUCHON_DT
    tol: float = config.DP45_TOL
    dt_min: float = config.DT_MIN
    dt_max: float = config.DT_MAX
    diagnostics: bool = False

    def __post_init__(self):
        if self.method not in SOLVER_METHODS:
            raise ValueError(f"Unknown solver '{self.method}', expected one of {SOLVER_METHODS}.")
        if self.dt <= 0 or self.tol <= 0 or self.dt_min <= 0 or self.dt_max <= 0:
            raise ValueError("Solver steps and tolerance must be positive.")

    def to_dict(self) -> dict:
        return {"method": self.method, "dt_ns": self.dt / config.NS, "tol": self.tol,
                "dt_max_ns": self.dt_max / config.NS, "diagnostics": self.diagnostics}


@dataclass
class LindbladGenerator:
    """H(t, theta) = h_static + sum of drive terms; dissipators D[L_k] for each jump operator."""
    h_static: np.ndarray
    drives: List[DriveTerm] = field(default_factory=list)
    jump_ops: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.h_static = np.asarray(self.h_static, dtype=complex)
        n = self.h_static.shape[0]
        check_square(self.h_static, n, "h_static")
        if not is_hermitian(self.h_static, config.HERMITICITY_TOL):
            raise ValueError("h_static is not Hermitian.")
        for drive in self.drives:
            check_square(drive.operator, n, f"drive '{drive.name}' operator")
        self.jump_ops = [np.asarray(op, dtype=complex) for op in self.jump_ops]
        for i, op in enumerate(self.jump_ops):
            check_square(op, n, f"jump operator {i}")
        self._jump_dags = [op.conj().T.copy() for op in self.jump_ops]
        self._jump_sum = np.zeros((n, n), dtype=complex)
        for op, dag in zip(self.jump_ops, self._jump_dags):
            self._jump_sum += dag @ op
        self._jump_pairs = [a @ b for a in self.jump_ops for b in self.jump_ops]
        self._jump_pair_dags = [p.conj().T.copy() for p in self._jump_pairs]
        self._slices = []
        offset = 0
        for drive in self.drives:
            self._slices.append(slice(offset, offset + drive.n_params))
            offset += drive.n_params
        self._n_params = offset

    @property
    def dim(self) -> int:
        return self.h_static.shape[0]

    @property
    def n_params(self) -> int:
        return self._n_params

    @property
    def slices(self) -> List[slice]:
        return list(self._slices)

    @property
    def jump_sum(self) -> np.ndarray:
        """sum_k L_k^dagger L_k"""
        return self._jump_sum

    def parameter_names(self) -> List[str]:
        return [name for drive in self.drives for name in drive.parameter_names()]

    def initial_parameters(self) -> np.ndarray:
        if not self.drives:
            return np.zeros(0)
        return np.concatenate([drive.parameters_from_pulse() for drive in self.drives])

    def check_parameters(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self._n_params,):
            raise DimensionError(f"Parameter vector has shape {theta.shape}, expected ({self._n_params},).")
        return theta

    def hamiltonian(self, t: float, theta: np.ndarray) -> np.ndarray:
        h = self.h_static.copy()
        for drive, sl in zip(self.drives, self._slices):
            h += controls.drive_hamiltonian(drive, t, theta[sl])
        return h

    def effective_generator(self, t: float, theta: np.ndarray) -> np.ndarray:
        """G = -i H - (1/2) sum_k L_k^dagger L_k"""
        return -1j * self.hamiltonian(t, theta) - 0.5 * self._jump_sum


def apply_liouvillian(gen: LindbladGenerator, t: float, theta: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """-i[H, rho] + sum_k (L_k rho L_k^dagger - {L_k^dagger L_k, rho}/2)"""
    check_square(rho, gen.dim, "rho")
    h = gen.hamiltonian(t, theta)
    out = -1j * (h @ rho - rho @ h)
    if gen.jump_ops:
        for op, dag in zip(gen.jump_ops, gen._jump_dags):
            out += op @ rho @ dag
        out -= 0.5 * (gen.jump_sum @ rho + rho @ gen.jump_sum)
    return out


def apply_adjoint_liouvillian(gen: LindbladGenerator, t: float, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """
    Right-hand side of the adjoint equation, d phi / dt = -L^dagger phi:
    -i[H, phi] - sum_k (L_k^dagger phi L_k - {L_k^dagger L_k, phi}/2).
    """
    check_square(phi, gen.dim, "phi")
    h = gen.hamiltonian(t, theta)
    out = -1j * (h @ phi - phi @ h)
    if gen.jump_ops:
        for op, dag in zip(gen.jump_ops, gen._jump_dags):
            out -= dag @ phi @ op
        out += 0.5 * (gen.jump_sum @ phi + phi @ gen.jump_sum)
    return out


# --- Rouchon-2 ---

def no_jump_propagator(gen: LindbladGenerator, t_mid: float, theta: np.ndarray, h: float,
                       g: Optional[np.ndarray] = None) -> np.ndarray:
    """exp(h G / 2) with G frozen at the step midpoint."""
    if g is None:
        g = gen.effective_generator(t_mid, theta)
    return linalg.expm(0.5 * h * g)


def apply_jumps(gen: LindbladGenerator, rho: np.ndarray, h: float) -> np.ndarray:
    """rho + h sum_k L_k rho L_k^dagger + (h^2 / 2) sum_kl (L_k L_l) rho (L_k L_l)^dagger"""
    out = rho.copy()
    for op, dag in zip(gen.jump_ops, gen._jump_dags):
        out += h * (op @ rho @ dag)
    for pair, pair_dag in zip(gen._jump_pairs, gen._jump_pair_dags):
        out += (0.5 * h * h) * (pair @ rho @ pair_dag)
    return out


def apply_jumps_dual(gen: LindbladGenerator, phi: np.ndarray, h: float) -> np.ndarray:
    out = phi.copy()
    for op, dag in zip(gen.jump_ops, gen._jump_dags):
        out += h * (dag @ phi @ op)
    for pair, pair_dag in zip(gen._jump_pairs, gen._jump_pair_dags):
        out += (0.5 * h * h) * (pair_dag @ phi @ pair)
    return out


def rouchon2_apply(gen: LindbladGenerator, propagator: np.ndarray, rho: np.ndarray, h: float) -> np.ndarray:
    """
    Unnormalized Kraus map E J_h(E rho E^dagger) E^dagger. The Kraus operators are
    E E, sqrt(h) E L_k E and h E L_k L_l E / sqrt(2), so the map is completely
    positive for h > 0 and symmetric under h -> -h.
    """
    prop_dag = propagator.conj().T
    return propagator @ apply_jumps(gen, propagator @ rho @ prop_dag, h) @ prop_dag


def rouchon2_apply_dual(gen: LindbladGenerator, propagator: np.ndarray, phi: np.ndarray, h: float) -> np.ndarray:
    """Heisenberg-picture dual of rouchon2_apply."""
    prop_dag = propagator.conj().T
    return prop_dag @ apply_jumps_dual(gen, prop_dag @ phi @ propagator, h) @ propagator


def normalize_density(rho: np.ndarray) -> np.ndarray:
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def rouchon2_map(gen: LindbladGenerator, t: float, theta: np.ndarray, rho: np.ndarray, dt: float) -> np.ndarray:
    """One Rouchon-2 step on a bare matrix. A negative dt replays the evolution backwards."""
    propagator = no_jump_propagator(gen, t + 0.5 * dt, theta, dt)
    return normalize_density(rouchon2_apply(gen, propagator, rho, dt))


def rouchon2_step(gen: LindbladGenerator, t: float, theta: np.ndarray, rho: np.ndarray, dt: float) -> DensityMatrix:
    if dt == 0:
        raise ValueError("Rouchon step must be non-zero.")
    rho = rho.matrix if isinstance(rho, DensityMatrix) else rho
    check_square(rho, gen.dim, "rho")
    return DensityMatrix(matrix=rouchon2_map(gen, t, theta, rho, dt), time=t + dt)


# --- Dormand-Prince 4/5 ---

_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# 5th order weights minus embedded 4th order weights
_DP_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


@dataclass
class StepController:
    """PI step-size controller state for the Dormand-Prince stepper."""
    previous_error: float = 1e-4
    rejections: int = 0


def _dp45_attempt(gen, t, theta, rho, h):
    stages = []
    for i in range(7):
        y = rho
        if i:
            y = rho + h * sum(a * k for a, k in zip(_DP_A[i], stages) if a != 0.0)
        stages.append(apply_liouvillian(gen, t + _DP_C[i] * h, theta, y))
        if i == 6:
            y_new = y
    # row 7 of A equals the 5th-order weights, so y at stage 7 is the solution
    error = h * sum(e * k for e, k in zip(_DP_E, stages) if e != 0.0)
    return y_new, error


def dp45_step(gen: LindbladGenerator, t: float, theta: np.ndarray, rho, dt: float, tol: float,
              dt_min: float = config.DT_MIN, dt_max: float = config.DT_MAX,
              controller: Optional[StepController] = None) -> Tuple[DensityMatrix, float, float]:
    """
    Adaptive step: retries with smaller steps until the max-abs mixed error
    |err| / (tol + tol * max(|y|, |y_new|)) is at most one.
    Returns (state, accepted dt, proposed next dt).
    """
    if tol <= 0:
        raise ValueError("Tolerance must be positive.")
    rho = rho.matrix if isinstance(rho, DensityMatrix) else rho
    check_square(rho, gen.dim, "rho")
    controller = controller or StepController()
    h = min(dt, dt_max)
    while True:
        if h < dt_min:
            raise StiffnessError(f"Step size {h:.3e} s fell below dt_min={dt_min:.1e} s at t={t:.6e} s.")
        y_new, error = _dp45_attempt(gen, t, theta, rho, h)
        scale = tol + tol * np.maximum(np.abs(rho), np.abs(y_new))
        err = float(np.max(np.abs(error) / scale))
        if not math.isfinite(err):
            err = float("inf")
        if err <= 1.0:
            if err == 0.0:
                factor = config.DP45_MAX_FACTOR
            else:
                factor = config.DP45_SAFETY * err ** (-0.7 / 5) * controller.previous_error ** (0.4 / 5)
                factor = min(config.DP45_MAX_FACTOR, max(config.DP45_MIN_FACTOR, factor))
            controller.previous_error = max(err, 1e-4)
            next_dt = min(h * factor, dt_max)
            return DensityMatrix(matrix=y_new, time=t + h), h, next_dt
        controller.rejections += 1
        factor = 1.0 if not math.isfinite(err) else config.DP45_SAFETY * err ** (-1 / 5)
        h *= max(config.DP45_MIN_FACTOR, min(1.0, factor))
        logger.debug("DP45 step rejected at t=%.6e s (err=%.3e), retrying with dt=%.3e s", t, err, h)


# --- Time grids ---

def merge_knots(t0: float, tn: float, *time_sets: Sequence[float], tol: float = 0.0) -> np.ndarray:
    """Sorted union of t0, tn and the given times within [t0, tn]; times closer than tol are merged."""
    values = [t0, tn]
    for times in time_sets:
        values.extend(float(t) for t in times)
    values = sorted(v for v in values if t0 - tol <= v <= tn + tol)
    knots = [t0]
    for v in values:
        if v - knots[-1] > tol:
            knots.append(v)
    if tn - knots[-1] > tol:
        knots.append(tn)
    knots[-1] = tn
    return np.array(knots)


def segment_steps(a: float, b: float, dt: float) -> int:
    """Number of equal Rouchon steps covering [a, b] with steps no longer than dt."""
    return max(1, int(math.ceil((b - a) / dt - 1e-9)))


def record_values(records: Dict[str, np.ndarray], rho: np.ndarray) -> Dict[str, complex]:
    """Tr[A rho] for every named record operator."""
    return {name: complex(np.sum(op * rho.T)) for name, op in records.items()}


def integrate(gen: LindbladGenerator, theta: np.ndarray, rho0, t0: float, tn: float,
              save_times: Optional[Sequence[float]] = None, solver: Optional[SolverConfig] = None,
              records: Optional[Dict[str, np.ndarray]] = None, keep_states: bool = True,
              label: str = "") -> Trajectory:
    """
    Integrates the master equation from t0 to tn, saving states and/or the
    requested records Tr[A rho(t)] at the save times (tn always included).
    """
    if not tn > t0:
        raise ValueError(f"Integration interval must satisfy t0 < tn (got {t0}, {tn}).")
    solver = solver or SolverConfig()
    theta = gen.check_parameters(theta)
    rho = np.array(rho0.matrix if isinstance(rho0, DensityMatrix) else rho0, dtype=complex)
    check_square(rho, gen.dim, "rho0")
    records = records or {}
    save_times = [] if save_times is None else list(save_times)
    if any(s < t0 - 1e-15 or s > tn + 1e-15 for s in save_times):
        raise ValueError("Save times must lie within [t0, tn].")
    tol = 1e-6 * solver.dt
    saves = merge_knots(t0, tn, save_times, tol=tol)
    if save_times and min(save_times) > t0 + tol:
        saves = saves[1:]

    states = [] if keep_states else None
    series = {name: np.zeros(len(saves), dtype=complex) for name in records}
    steps = 0
    t = t0
    controller = StepController()
    next_dt = solver.dt if solver.method == DP45 else None
    for i, target in enumerate(saves):
        if target > t:
            if solver.method == ROUCHON2:
                n = segment_steps(t, target, solver.dt)
                h = (target - t) / n
                for k in range(n):
                    rho = rouchon2_map(gen, t + k * h, theta, rho, h)
                steps += n
            else:
                while target - t > tol:
                    h = min(next_dt, target - t)
                    state, accepted, next_dt = dp45_step(gen, t, theta, rho, h, solver.tol,
                                                         solver.dt_min, solver.dt_max, controller)
                    rho = state.matrix
                    t = target if accepted == target - t else t + accepted
                    steps += 1
            t = target
        _save(i, target, rho, states, series, records, solver)

    logger.debug("Integrated '%s' over [%.3e, %.3e] s in %d steps", label, t0, tn, steps)
    return Trajectory(save_times=saves, states=states, scalar_records=series, label=label, step_count=steps)


def _save(i, t, rho, states, series, records, solver):
    if states is not None:
        states.append(DensityMatrix(matrix=rho.copy(), time=float(t)))
    for name, value in record_values(records, rho).items():
        series[name][i] = value
    if solver.diagnostics:
        report = DensityMatrix(matrix=rho, time=float(t)).diagnostics(positivity=True)
        if report["hermiticity"] > 1e-10 or report["trace_error"] > 1e-10 or report["min_eigenvalue"] < -1e-8:
            logger.warning("Density-matrix diagnostics out of bounds at t=%.6e s: %s", t, report)
