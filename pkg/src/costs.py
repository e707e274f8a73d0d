"""
Readout and reset cost terms over scalar observable records, with their
derivatives, plus the SNR analysis formulas.

Derivatives with respect to a complex record f = Tr[A rho] use the convention
D = dC/dRe(f) + i dC/dIm(f), so that a first-order change is Re(conj(D) df).
"""

import logging
import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from src import config, controls
from src.errors import ConfigError, CostError, SnrFitError
from src.models import cost_spec as cs
from src.models.cost_spec import CostEvaluation, CostSpec, SnrFitModel
from src.models.pulse import PixelPulse

logger = logging.getLogger(__name__)


def _sample_count(tau_m: float, dt: float, available: int) -> int:
    n = int(round(tau_m / dt))
    if n < 1 or abs(n * dt - tau_m) > 1e-6 * dt:
        raise CostError(f"tau_m={tau_m:.3e} s is not a multiple of the record bin {dt:.3e} s.")
    if n > available:
        raise CostError(f"Records hold {available} samples, {n} are needed for tau_m={tau_m:.3e} s.")
    return n


def _check_grid(times: Optional[np.ndarray], dt: float):
    if times is None:
        return
    steps = np.diff(np.asarray(times, dtype=float))
    if steps.size and np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise CostError("Records are not on a uniform grid matching the record bin.")


def snr(beta_g: np.ndarray, beta_e: np.ndarray, eta: float, kappa: float, tau_m: float,
        dt: float = config.RECORD_BIN, times: Optional[np.ndarray] = None) -> float:
    """sqrt(2 eta kappa sum_i |beta_e - beta_g|^2 dt), left Riemann sum over [0, tau_m)."""
    beta_g, beta_e = np.asarray(beta_g), np.asarray(beta_e)
    if beta_g.shape != beta_e.shape:
        raise CostError(f"Mismatched record grids: {beta_g.shape} vs {beta_e.shape}.")
    _check_grid(times, dt)
    n = _sample_count(tau_m, dt, beta_g.size)
    d = beta_e[:n] - beta_g[:n]
    return math.sqrt(2.0 * eta * kappa * float(np.sum(np.abs(d) ** 2)) * dt)


def snr_curve(beta_g: np.ndarray, beta_e: np.ndarray, eta: float, kappa: float,
              dt: float = config.RECORD_BIN) -> Tuple[np.ndarray, np.ndarray]:
    """(tau_m values, SNR(tau_m)) for every integration time on the record grid."""
    beta_g, beta_e = np.asarray(beta_g), np.asarray(beta_e)
    if beta_g.shape != beta_e.shape:
        raise CostError(f"Mismatched record grids: {beta_g.shape} vs {beta_e.shape}.")
    partial = np.cumsum(np.abs(beta_e - beta_g) ** 2)[:-1]
    taus = dt * np.arange(1, beta_g.size)
    return taus, np.sqrt(2.0 * eta * kappa * partial * dt)


def inverse_snr(beta_g: np.ndarray, beta_e: np.ndarray, eta: float, kappa: float, tau_m: float,
                dt: float = config.RECORD_BIN) -> Tuple[float, np.ndarray, np.ndarray]:
    """1/SNR with its record derivatives (D_g, D_e)."""
    value = snr(beta_g, beta_e, eta, kappa, tau_m, dt)
    if value == 0.0:
        raise CostError("SNR vanishes (identical pointer states); inverse SNR is undefined.")
    n = _sample_count(tau_m, dt, len(beta_g))
    d_e = np.zeros(len(beta_g), dtype=complex)
    d_e[:n] = -2.0 * eta * kappa * dt * (np.asarray(beta_e)[:n] - np.asarray(beta_g)[:n]) / value ** 3
    return 1.0 / value, -d_e, d_e


def amplitude_penalty_samples(envelope: np.ndarray, omega_max: float, tau_m: float,
                              dt: float = config.RECORD_BIN, unit: float = 1.0) -> float:
    """(1/tau_m) sum_i ReLU(|Omega_i| - Omega_max) dt on given envelope samples, in `unit`."""
    if omega_max <= 0:
        raise ValueError("omega_max must be positive.")
    excess = np.maximum(np.abs(np.asarray(envelope)) - omega_max, 0.0)
    return float(np.sum(excess) * dt / tau_m / unit)


def amplitude_penalty(pulse: PixelPulse, omega_max: float, tau_m: float, dt: float = config.RECORD_BIN,
                      unit: float = config.FREQUENCY_UNIT) -> Tuple[float, np.ndarray]:
    """
    Amplitude cap on the filtered envelope sampled on the record grid.
    Returns the value and its gradient with respect to [Re Omega_j..., Im Omega_j...].
    """
    if omega_max <= 0:
        raise ValueError("omega_max must be positive.")
    n = int(round(tau_m / dt))
    times = dt * np.arange(n)
    zeta = controls.zeta_matrix(pulse.n_pixels, times, pulse.bin_width, pulse.filter_omega0)
    envelope = zeta @ pulse.amplitudes
    magnitude = np.abs(envelope)
    active = magnitude > omega_max
    value = float(np.sum(magnitude[active] - omega_max) * dt / tau_m / unit)
    grad = np.zeros(2 * pulse.n_pixels)
    if np.any(active):
        unit_phase = envelope[active] / magnitude[active]
        scale = dt / tau_m / unit
        grad[:pulse.n_pixels] = scale * (zeta[active].T @ unit_phase.real)
        grad[pulse.n_pixels:] = scale * (zeta[active].T @ unit_phase.imag)
    return value, grad


def forbidden_state_cost(records: Dict[str, np.ndarray], tau_m: float, dt: float = config.RECORD_BIN,
                         level: Optional[int] = None, truncation: Optional[int] = None):
    """
    Time-averaged forbidden-level population summed over prepared states.
    `records` maps each prepared state to Tr[P_forbidden rho(t_i)].
    """
    if level is not None and truncation is not None and level >= truncation:
        raise ConfigError(f"Forbidden level {level} is not below truncation {truncation}.")
    value = 0.0
    seeds = {}
    for label, record in records.items():
        n = _sample_count(tau_m, dt, len(record))
        value += float(np.sum(np.asarray(record)[:n].real)) * dt / tau_m
        seed = np.zeros(len(record), dtype=complex)
        seed[:n] = dt / tau_m
        seeds[label] = seed
    return value, seeds


def critical_photon_cap(record: np.ndarray, n_crit: float, tau_m: float,
                        dt: float = config.RECORD_BIN) -> Tuple[float, np.ndarray]:
    """(1/tau_m) sum_i ReLU(n_i - n_crit) dt; the seed is dt/tau_m on active samples."""
    record = np.asarray(record)
    n = _sample_count(tau_m, dt, record.size)
    photons = record[:n].real
    active = photons > n_crit
    seed = np.zeros(record.size, dtype=complex)
    seed[:n][active] = dt / tau_m
    return float(np.sum(photons[active] - n_crit) * dt / tau_m), seed


def reset_infidelity(population: float, squared: bool = True,
                     floor: float = config.RESET_INFIDELITY_FLOOR) -> Tuple[float, float]:
    """log10(1 - p^2) (or log10(1 - p)) clamped at log10(floor); returns (value, dC/dp)."""
    p = float(population)
    q, dq = (p * p, 2.0 * p) if squared else (p, 1.0)
    x = 1.0 - q
    if x < floor:
        return math.log10(floor), 0.0
    return math.log10(x), -dq / (x * math.log(10.0))


def assignment_error(snr_value: float, tau_m: float, t1: float) -> float:
    """erfc(SNR/2)/2 + tau_m / (2 T1)"""
    if snr_value < 0:
        raise ValueError("SNR must be non-negative.")
    relaxation = 0.0 if math.isinf(t1) else tau_m / (2.0 * t1)
    return 0.5 * float(special.erfc(snr_value / 2.0)) + relaxation


def snr_fit(kappa: float, chi: float, omega_f: float, eta: float,
            samples: Sequence[Tuple[float, float]]) -> SnrFitModel:
    """
    Fits SNR(tau) = sqrt(2 eta kappa) alpha (sqrt(tau) - sqrt(tau_m0)) with
    alpha = 2 |Omega_f sin(2 phi)| / kappa, phi = arctan(2 chi / kappa); only
    sqrt(tau_m0) is fitted (linear least squares).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 3 or samples.shape[1] != 2:
        raise SnrFitError("The SNR fit needs at least 3 (tau_m, SNR) samples.")
    if not np.all(np.isfinite(samples)) or np.any(samples[:, 0] <= 0):
        raise SnrFitError("SNR samples must be finite with positive integration times.")
    phi = math.atan(2.0 * chi / kappa)
    alpha = 2.0 * abs(omega_f * math.sin(2.0 * phi)) / kappa
    slope = math.sqrt(2.0 * eta * kappa) * alpha
    if slope == 0.0:
        logger.warning("SNR model has zero displacement (chi=0 or no drive); tau_m0 is not identifiable.")
        return SnrFitModel(alpha=alpha, phi_angle=phi, tau_m0=0.0, eta=eta, kappa=kappa, residual=float("nan"))

    # SNR_i - slope sqrt(tau_i) = -slope * s, with s = sqrt(tau_m0)
    design = np.full((samples.shape[0], 1), -slope)
    target = samples[:, 1] - slope * np.sqrt(samples[:, 0])
    solution, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < 1:
        raise SnrFitError("Degenerate SNR fit.")
    root = float(solution[0])
    model = SnrFitModel(alpha=alpha, phi_angle=phi, tau_m0=root * abs(root), eta=eta, kappa=kappa)
    predicted = model.predict(samples[:, 0]) if root >= 0 else slope * (np.sqrt(samples[:, 0]) - root)
    scale = np.maximum(np.abs(samples[:, 1]), 1e-300)
    model.residual = float(np.sqrt(np.mean(((predicted - samples[:, 1]) / scale) ** 2)))
    return model


# --- Composite cost ---

def _record(trajectories, label: str, name: str) -> np.ndarray:
    if label not in trajectories:
        raise CostError(f"Cost references trajectory '{label}', which was not simulated.")
    try:
        return trajectories[label].record(name)
    except KeyError as e:
        raise CostError(str(e)) from e


def _add_seed(kicks, label: str, name: str, seed: np.ndarray):
    target = kicks.setdefault(label, {})
    if name in target:
        target[name] = target[name] + seed
    else:
        target[name] = seed.copy()


def cost_value_and_seeds(spec: CostSpec, trajectories: Dict, theta: np.ndarray, gen) -> CostEvaluation:
    """
    Evaluates every cost term on the trajectories' records.

    Returns the weighted total, unweighted per-term values, the record
    derivatives (kicks[label][record] = weighted D per save time) and the
    direct gradient dC/dtheta of the pure parameter terms. Terms with zero
    weight are skipped and reported as 0.
    """
    theta = np.asarray(theta, dtype=float)
    total = 0.0
    terms = {}
    kicks = {}
    direct = np.zeros(theta.size)
    for term in spec.terms:
        p = term.params
        w = term.weight
        if w == 0.0:
            terms[term.name] = 0.0
            continue

        if term.kind == cs.INVERSE_SNR:
            label_g, label_e = p.get("labels", ("g", "e"))
            beta_g = _record(trajectories, label_g, p["record"])
            beta_e = _record(trajectories, label_e, p["record"])
            value, d_g, d_e = inverse_snr(beta_g, beta_e, p["eta"], p["kappa"], p["tau_m"], p["bin"])
            _add_seed(kicks, label_g, p["record"], w * d_g)
            _add_seed(kicks, label_e, p["record"], w * d_e)

        elif term.kind == cs.AMPLITUDE_PENALTY:
            index = [d.name for d in gen.drives].index(p["drive"])
            drive, sl = gen.drives[index], gen.slices[index]
            pulse = drive.pulse_from_parameters(theta[sl])
            value, grad = amplitude_penalty(pulse, p["omega_max"], p["tau_m"], p["bin"],
                                            p.get("unit", config.FREQUENCY_UNIT))
            direct[sl.start:sl.start + grad.size] += w * grad

        elif term.kind == cs.FORBIDDEN_STATES:
            records = {label: _record(trajectories, label, p["record"]) for label in p.get("labels", ("g", "e"))}
            value, seeds = forbidden_state_cost(records, p["tau_m"], p["bin"], p.get("level"), p.get("truncation"))
            for label, seed in seeds.items():
                _add_seed(kicks, label, p["record"], w * seed)

        elif term.kind == cs.PHOTON_CAP:
            value = 0.0
            for label in p.get("labels", ("g", "e")):
                part, seed = critical_photon_cap(_record(trajectories, label, p["record"]),
                                                 p["n_crit"], p["tau_m"], p["bin"])
                value += part
                _add_seed(kicks, label, p["record"], w * seed)

        elif term.kind == cs.RESET_INFIDELITY:
            record = _record(trajectories, p["label"], p["record"])
            value, slope = reset_infidelity(record[-1].real, p["squared"], p["floor"])
            if slope == 0.0 and record[-1].real > 0.5:
                logger.warning("Reset infidelity of '%s' clamped at the floor.", p["label"])
            seed = np.zeros(len(record), dtype=complex)
            seed[-1] = w * slope
            _add_seed(kicks, p["label"], p["record"], seed)

        else:  # expectation
            record = _record(trajectories, p["label"], p["record"])
            index = p.get("index", -1)
            value = float(record[index].real)
            seed = np.zeros(len(record), dtype=complex)
            seed[index] = w
            _add_seed(kicks, p["label"], p["record"], seed)

        terms[term.name] = float(value)
        total += w * float(value)
    return CostEvaluation(total=total, terms=terms, kicks=kicks, direct_gradient=direct)
