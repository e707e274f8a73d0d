"""
Adjoint-state gradients with reverse-time replay and checkpointing.

The forward pass stores only sparse checkpoints of rho. The backward pass
replays rho in reverse time with the same Rouchon-2 stepper, propagates the
adjoint phi with the dual of each forward Kraus step, and accumulates the
parameter gradient from the exact derivative of that step. Memory is
constant in the number of integration steps.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from src import config, controls, costs
from src.errors import ConfigError, CostError, ReverseDivergenceError
from src.lindblad import (ROUCHON2, LindbladGenerator, SolverConfig, apply_jumps, apply_jumps_dual,
                          apply_liouvillian, merge_knots, no_jump_propagator, normalize_density, record_values,
                          rouchon2_apply, rouchon2_map, segment_steps)
from src.models.cost_spec import CostEvaluation, CostSpec
from src.models.states import AdjointState, CheckpointStore, DensityMatrix, GradientVector, Trajectory
from src.utils.operators import check_square, hermiticity_error

logger = logging.getLogger(__name__)

@dataclass
class AdjointKicks:
    """Lazily assembled adjoint kicks: kick(i) = sum_r (conj(D_ri) A_r + D_ri A_r^dagger) / 2."""
    operators: Dict[str, np.ndarray]
    coefficients: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        missing = sorted(set(self.coefficients) - set(self.operators))
        if missing:
            raise CostError(f"Kicks reference unknown record operator(s) {missing}.")

    def is_empty(self) -> bool:
        return not any(np.any(c != 0) for c in self.coefficients.values())

    def nonzero_indices(self) -> List[int]:
        indices = set()
        for coeff in self.coefficients.values():
            indices.update(int(i) for i in np.flatnonzero(coeff))
        return sorted(indices)

    def matrix(self, index: int) -> Optional[np.ndarray]:
        kick = None
        for name, coeff in self.coefficients.items():
            d = coeff[index]
            if d == 0:
                continue
            op = self.operators[name]
            term = 0.5 * (np.conj(d) * op + d * op.conj().T)
            kick = term if kick is None else kick + term
        if kick is not None and hermiticity_error(kick) > 1e-12 * max(float(np.max(np.abs(kick))), 1e-300):
            raise CostError(f"Adjoint kick at save index {index} is not Hermitian.")
        return kick


@dataclass
class AdjointResult:
    evaluation: CostEvaluation
    gradient: Optional[GradientVector]
    trajectories: Dict[str, Trajectory]


def worker_count() -> int:
    """Thread count from the environment (LQOC_THREADS), default 1."""
    raw = os.environ.get(config.THREADS_ENV)
    if raw is None or raw == "":
        return config.DEFAULT_THREADS
    try:
        count = int(raw)
    except ValueError as e:
        raise ConfigError(f"{config.THREADS_ENV} must be a positive integer, got '{raw}'.") from e
    if count < 1:
        raise ConfigError(f"{config.THREADS_ENV} must be a positive integer, got '{raw}'.")
    return count


def parallel_map(fn: Callable, items: Sequence, threads: Optional[int] = None) -> list:
    """Ordered map over items; runs on a thread pool when more than one worker is allowed."""
    threads = worker_count() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def checkpoint_times(t0: float, tn: float, spacing: float, tol: float = 0.0) -> List[float]:
    """t0, t0 + spacing, ... strictly before tn, then tn."""
    if not spacing > 0:
        raise ValueError("Checkpoint spacing must be positive.")
    times = []
    k = 0
    while t0 + k * spacing < tn - tol:
        times.append(t0 + k * spacing)
        k += 1
    times.append(tn)
    return times


def _unique_times(times: Sequence[float], tol: float) -> np.ndarray:
    values = sorted(float(t) for t in times)
    unique = []
    for v in values:
        if not unique or v - unique[-1] > tol:
            unique.append(v)
    return np.array(unique)


def _match(times: np.ndarray, value: float, tol: float) -> Optional[int]:
    if times.size == 0:
        return None
    idx = int(np.argmin(np.abs(times - value)))
    return idx if abs(times[idx] - value) <= tol else None


def _require_rouchon(solver: SolverConfig):
    if solver.method != ROUCHON2:
        raise ConfigError("Gradients need the fixed-step rouchon2 solver; dp45 is available for simulation only.")


def forward_pass(gen: LindbladGenerator, theta: np.ndarray, rho0, save_times: Sequence[float],
                 checkpoint_spacing: float, solver: Optional[SolverConfig] = None,
                 records: Optional[Dict[str, np.ndarray]] = None, keep_states: bool = False,
                 label: str = "", t0: Optional[float] = None,
                 tn: Optional[float] = None) -> Tuple[Trajectory, CheckpointStore]:
    """
    Integrates forward on the union grid of save and checkpoint times, recording
    the requested observables and storing rho at every checkpoint (and at tn).
    """
    solver = solver or SolverConfig()
    _require_rouchon(solver)
    if not checkpoint_spacing > 0:
        raise ValueError("Checkpoint spacing must be positive.")
    theta = gen.check_parameters(theta)
    rho = np.array(rho0.matrix if isinstance(rho0, DensityMatrix) else rho0, dtype=complex)
    check_square(rho, gen.dim, "rho0")
    records = records or {}

    tol = 1e-6 * solver.dt
    saves = _unique_times(save_times, tol)
    if saves.size == 0:
        raise ValueError("At least one save time is required.")
    t0 = float(saves[0]) if t0 is None else float(t0)
    tn = float(saves[-1]) if tn is None else float(tn)
    if tn < t0 or saves[0] < t0 - tol or saves[-1] > tn + tol:
        raise ValueError("Save times must lie within [t0, tn].")
    cps = np.array(checkpoint_times(t0, tn, checkpoint_spacing, tol))
    knots = merge_knots(t0, tn, saves, cps, tol=tol)

    store = CheckpointStore(spacing=checkpoint_spacing)
    states = [] if keep_states else None
    series = {name: np.zeros(saves.size, dtype=complex) for name in records}
    steps = 0
    for m, knot in enumerate(knots):
        if m > 0:
            a = knots[m - 1]
            n = segment_steps(a, knot, solver.dt)
            h = (knot - a) / n
            for k in range(n):
                rho = rouchon2_map(gen, a + k * h, theta, rho, h)
            steps += n
        if _match(cps, knot, tol) is not None:
            store.store(knot, rho)
        i = _match(saves, knot, tol)
        if i is not None:
            if states is not None:
                states.append(DensityMatrix(matrix=rho.copy(), time=float(knot)))
            for name, value in record_values(records, rho).items():
                series[name][i] = value
        store.observe(rho, *(s.matrix for s in states or ()))

    logger.debug("Forward pass '%s': %d steps, %d checkpoints", label, steps, len(store))
    trajectory = Trajectory(save_times=saves, states=states, scalar_records=series, label=label, step_count=steps)
    return trajectory, store


def seed_adjoint(cost: CostSpec, trajectories: Dict[str, Trajectory], theta: np.ndarray,
                 gen: LindbladGenerator, records: Dict[str, np.ndarray]):
    """
    Evaluates the cost and turns its record derivatives into adjoint seeds.
    Returns (evaluation, terminal adjoint states per label, kicks per label).
    """
    evaluation = costs.cost_value_and_seeds(cost, trajectories, theta, gen)
    kicks = {}
    terminal = {}
    for label, trajectory in trajectories.items():
        coefficients = evaluation.kicks.get(label, {})
        for name, coeff in coefficients.items():
            if len(coeff) != trajectory.save_times.size:
                raise CostError(f"Kick for '{label}.{name}' does not match the trajectory save grid.")
        kicks[label] = AdjointKicks(operators=records, coefficients=coefficients)
        final = kicks[label].matrix(trajectory.save_times.size - 1)
        if final is None:
            final = np.zeros((gen.dim, gen.dim), dtype=complex)
        terminal[label] = AdjointState(matrix=final, time=float(trajectory.save_times[-1]))
    return evaluation, terminal, kicks


def _step_pairing(gen: LindbladGenerator, t_mid: float, theta: np.ndarray, quarter: np.ndarray,
                  propagator: np.ndarray, h: float, rho: np.ndarray, phi: np.ndarray,
                  psi: np.ndarray, observe: Callable) -> np.ndarray:
    """
    Parameter derivative of Tr[phi E J_h(E rho E^dagger) E^dagger] for one forward step,
    with E = exp(h G / 2) and psi = J_h^dagger(E^dagger phi E).

    Every parameter enters through G = -i H - sum L^dagger L / 2, so the derivative
    is 2 Re Tr[dG S]. The Frechet derivative of the exponential is integrated with
    Simpson's rule on exp(s h G / 2), which needs the quarter-step propagator.
    `observe` receives the scratch matrices at their peak.
    """
    prop_dag = propagator.conj().T
    x = apply_jumps(gen, propagator @ rho @ prop_dag, h)
    w = x @ prop_dag @ phi + rho @ prop_dag @ psi
    observe(x, w)
    del x
    # 2 S, the commutator pairing of -i dH
    pairing = (h / 6.0) * (propagator @ w + 4.0 * (quarter @ w @ quarter) + w @ propagator)
    observe(w, pairing)
    del w
    out = np.zeros(gen.n_params)
    for drive, sl in zip(gen.drives, gen.slices):
        out[sl] = controls.liouvillian_param_derivative(drive, t_mid, theta[sl], pairing=pairing)
    return out


def backward_pass(gen: LindbladGenerator, theta: np.ndarray, kicks: AdjointKicks, trajectory: Trajectory,
                  checkpoints: CheckpointStore, solver: Optional[SolverConfig] = None,
                  direct_gradient: Optional[np.ndarray] = None) -> GradientVector:
    """
    Co-integrates rho (reverse time) and phi from tn to t0, restoring rho at
    every checkpoint and adding the adjoint kick at every save time.
    Returns dC/dtheta = direct part + accumulated step derivatives.

    Besides the checkpoints, at most eight N x N matrices are held at once:
    rho, phi, the next phi, psi, two propagators and two pairing scratches.
    """
    solver = solver or SolverConfig()
    _require_rouchon(solver)
    theta = gen.check_parameters(theta)
    if len(checkpoints) == 0:
        raise ValueError("The backward pass needs the forward checkpoints.")
    tol = 1e-6 * solver.dt
    t0, tn = checkpoints.times[0], checkpoints.times[-1]
    saves = trajectory.save_times
    cps = np.array(checkpoints.times)
    knots = merge_knots(t0, tn, saves, cps, tol=tol)

    rho = checkpoints.states[-1].copy()
    phi = np.zeros((gen.dim, gen.dim), dtype=complex)
    last = _match(saves, tn, tol)
    if last is not None:
        kick = kicks.matrix(last)
        if kick is not None:
            checkpoints.observe(rho, phi, kick)
            phi = phi + kick
    grad = np.zeros(gen.n_params)
    diagonal = np.diag_indices(gen.dim)
    reference_norm = float(np.linalg.norm(rho))
    steps = 0

    for m in range(len(knots) - 1, 0, -1):
        a, b = knots[m - 1], knots[m]
        n = segment_steps(a, b, solver.dt)
        h = (b - a) / n
        for k in range(n - 1, -1, -1):
            t_mid = a + k * h + 0.5 * h
            shift = float(np.sum(phi * rho.T).real)
            g_eff = gen.effective_generator(t_mid, theta)
            quarter = linalg.expm(0.25 * h * g_eff)
            reverse = no_jump_propagator(gen, t_mid, theta, -h, g=g_eff)
            checkpoints.observe(rho, phi, g_eff, quarter, reverse)
            del g_eff
            rho_prev = normalize_density(rouchon2_apply(gen, reverse, rho, -h))
            checkpoints.observe(rho, phi, quarter, reverse, rho_prev)
            del reverse
            rho = rho_prev
            del rho_prev
            propagator = quarter @ quarter
            psi = apply_jumps_dual(gen, propagator.conj().T @ phi @ propagator, h)
            phi_next = propagator.conj().T @ psi @ propagator
            if gen.drives:
                # shifting phi by its expectation differentiates the trace renormalization
                unit = apply_jumps_dual(gen, propagator.conj().T @ propagator, h)
                checkpoints.observe(rho, phi, quarter, propagator, psi, phi_next, unit)
                psi -= shift * unit
                del unit
                phi[diagonal] -= shift

                def observe(*scratch):
                    checkpoints.observe(rho, phi, quarter, propagator, psi, phi_next, *scratch)

                grad += _step_pairing(gen, t_mid, theta, quarter, propagator, h, rho, phi, psi, observe)
            del quarter, propagator, psi
            phi = phi_next
            del phi_next
            norm = float(np.linalg.norm(rho))
            if not math.isfinite(norm) or norm > config.REVERSE_GROWTH_LIMIT * reference_norm:
                raise ReverseDivergenceError(
                    f"Reverse-time replay diverged near t={t_mid:.6e} s (norm growth > "
                    f"{config.REVERSE_GROWTH_LIMIT:g}); reduce the checkpoint spacing."
                )
        steps += n

        c = _match(cps, a, tol)
        if c is not None:
            stored = checkpoints.states[c]
            deviation = float(np.linalg.norm(rho - stored))
            checkpoints.replay_deviations.append(deviation)
            if deviation > config.CHECKPOINT_REPLAY_TOL:
                logger.warning("Checkpoint replay deviation %.3e at t=%.6e s", deviation, a)
            rho = stored.copy()
            reference_norm = float(np.linalg.norm(rho))
        i = _match(saves, a, tol)
        if i is not None:
            kick = kicks.matrix(i)
            if kick is not None:
                checkpoints.observe(rho, phi, kick)
                phi = phi + kick

    if direct_gradient is not None:
        grad = grad + direct_gradient
    diagnostics = {
        "checkpoints": len(checkpoints),
        "steps": steps,
        "peak_live_matrices": checkpoints.peak_live,
        "max_replay_deviation": max(checkpoints.replay_deviations, default=0.0),
    }
    logger.debug("Backward pass: %s", diagnostics)
    return GradientVector(names=gen.parameter_names(), values=grad, diagnostics=diagnostics,
                          initial_adjoint=AdjointState(matrix=phi, time=t0))


def time_gradient(gen: LindbladGenerator, theta: np.ndarray, phi_t, rho_t) -> float:
    """dC/dT = Re Tr[phi(T)^dagger L(T, theta) rho(T)] for a cost on the final state."""
    phi = phi_t.matrix if isinstance(phi_t, AdjointState) else phi_t
    rho = rho_t.matrix if isinstance(rho_t, DensityMatrix) else rho_t
    time = phi_t.time if isinstance(phi_t, AdjointState) else (rho_t.time if isinstance(rho_t, DensityMatrix) else 0.0)
    return float(np.sum(phi.conj() * apply_liouvillian(gen, time, theta, rho)).real)


def evaluate(gen: LindbladGenerator, theta: np.ndarray, initial_states: Dict[str, np.ndarray], cost: CostSpec,
             records: Dict[str, np.ndarray], save_times: Sequence[float], checkpoint_spacing: float,
             solver: Optional[SolverConfig] = None, with_gradient: bool = True,
             threads: Optional[int] = None) -> AdjointResult:
    """
    Cost and (optionally) gradient over every prepared initial state.

    Trajectories run concurrently; per-state gradients are reduced in sorted
    label order so the result does not depend on scheduling.
    """
    solver = solver or SolverConfig()
    theta = gen.check_parameters(theta)
    labels = sorted(initial_states)

    def run_forward(label):
        return forward_pass(gen, theta, initial_states[label], save_times, checkpoint_spacing, solver,
                            records=records, label=label)

    forward = dict(zip(labels, parallel_map(run_forward, labels, threads)))
    trajectories = {label: forward[label][0] for label in labels}
    evaluation, terminal, kicks = seed_adjoint(cost, trajectories, theta, gen, records)
    if not with_gradient:
        return AdjointResult(evaluation=evaluation, gradient=None, trajectories=trajectories)

    active = [label for label in labels if not kicks[label].is_empty()]

    def run_backward(label):
        trajectory, store = forward[label]
        return backward_pass(gen, theta, kicks[label], trajectory, store, solver)

    partials = dict(zip(active, parallel_map(run_backward, active, threads)))
    values = np.array(evaluation.direct_gradient, dtype=float)
    for label in active:
        values = values + partials[label].values

    diagnostics = {
        "checkpoints": max((len(forward[label][1]) for label in labels), default=0),
        "steps": sum(trajectories[label].step_count for label in labels),
        "peak_live_matrices": max((forward[label][1].peak_live for label in labels), default=0),
        "max_replay_deviation": max((partials[label].diagnostics["max_replay_deviation"] for label in active),
                                    default=0.0),
    }
    time_derivative = None
    final_index = len(save_times) - 1
    if all(kicks[label].nonzero_indices() in ([], [final_index]) for label in labels):
        time_derivative = sum(
            time_gradient(gen, theta, terminal[label], DensityMatrix(forward[label][1].states[-1],
                                                                    float(forward[label][1].times[-1])))
            for label in labels
        )
    gradient = GradientVector(names=gen.parameter_names(), values=values, time_derivative=time_derivative,
                              diagnostics=diagnostics)
    if not gradient.is_finite():
        logger.warning("Non-finite gradient components encountered.")
    return AdjointResult(evaluation=evaluation, gradient=gradient, trajectories=trajectories)


def finite_difference_gradient(fn: Callable[[np.ndarray], float], theta: np.ndarray,
                               rel_step: float = config.GRAD_CHECK_REL_STEP,
                               indices: Optional[Sequence[int]] = None,
                               scales: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Central differences of fn with step rel_step * max(|theta_j|, scale_j);
    scale_j defaults to max |theta|. Components not in `indices` are NaN.
    """
    theta = np.asarray(theta, dtype=float)
    if scales is None:
        scales = np.full(theta.size, max(float(np.max(np.abs(theta))) if theta.size else 1.0, 1e-12))
    indices = range(theta.size) if indices is None else indices
    grad = np.full(theta.size, np.nan)
    for j in indices:
        h = rel_step * max(abs(theta[j]), scales[j])
        plus, minus = theta.copy(), theta.copy()
        plus[j] += h
        minus[j] -= h
        grad[j] = (fn(plus) - fn(minus)) / (2.0 * h)
    return grad
