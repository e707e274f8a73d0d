"""
Operators and bases for the transmon / resonator / Purcell-filter system.

Dense matrices only. Subsystem order in the composite space is
(transmon, driven normal mode, undriven normal mode).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy import linalg

from src import config
from src.errors import DiagonalizationError, DimensionError

logger = logging.getLogger(__name__)

TRANSMON, DRIVEN, UNDRIVEN = 0, 1, 2
CHARGE_GAUGE = "<k+1|n|k> positive imaginary"


@dataclass(frozen=True)
class TransmonEigenbasis:
    """Lowest transmon eigenstates expressed in their own eigenbasis."""
    energies: np.ndarray
    charge_op: np.ndarray
    lowering_op: np.ndarray
    n_levels: int
    gauge: str = CHARGE_GAUGE

    @property
    def omega_01(self) -> float:
        return float(self.energies[1] - self.energies[0])

    @property
    def anharmonicity(self) -> float:
        return float((self.energies[2] - self.energies[1]) - (self.energies[1] - self.energies[0]))

    def charge_raising(self) -> np.ndarray:
        """Part of the charge operator that raises the level by exactly one."""
        return np.diag(np.diag(self.charge_op, -1), -1)

    def charge_lowering(self) -> np.ndarray:
        return np.diag(np.diag(self.charge_op, 1), 1)


@dataclass(frozen=True)
class NormalModeBasis:
    """Normal modes of the resonator-filter pair in the beam-splitter (RWA) form.

    Index 0 is the lower mode. The resonator and filter annihilation operators
    decompose as a = sum_m resonator_weights[m] c_m and f = sum_m drive_weights[m] c_m.
    """
    mode_freqs: Tuple[float, float]
    hybridization_angle: float
    transmon_couplings: Tuple[float, float]
    decay_rates: Tuple[float, float]
    drive_weights: Tuple[complex, complex]
    resonator_weights: Tuple[float, float]


@dataclass(frozen=True)
class BosonicOperators:
    lowering: np.ndarray
    raising: np.ndarray
    number: np.ndarray

    @property
    def dim(self) -> int:
        return self.lowering.shape[0]

    def projector(self, k: int) -> np.ndarray:
        if not 0 <= k < self.dim:
            raise ValueError(f"Fock level {k} outside truncation {self.dim}.")
        p = np.zeros((self.dim, self.dim), dtype=complex)
        p[k, k] = 1.0
        return p


@dataclass(frozen=True)
class CompositeSpace:
    dims: Tuple[int, int, int]
    _identities: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise ValueError(f"Invalid subsystem dimensions: {self.dims}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "_identities", tuple(np.eye(d, dtype=complex) for d in self.dims))

    @property
    def dim(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    def basis_index(self, k: int, n_d: int, n_u: int) -> int:
        return (k * self.dims[1] + n_d) * self.dims[2] + n_u

    def basis_label(self, index: int) -> Tuple[int, int, int]:
        k, rest = divmod(index, self.dims[1] * self.dims[2])
        n_d, n_u = divmod(rest, self.dims[2])
        return k, n_d, n_u

    def embed(self, subsystem: int, op: np.ndarray) -> np.ndarray:
        return embed(self, subsystem, op)


def diagonalize_transmon(ec: float, ej: float, n_charge: int = config.N_CHARGE,
                         n_levels: int = 5) -> TransmonEigenbasis:
    """
    Diagonalizes 4 E_C n^2 - E_J cos(phi) on the symmetric charge grid -n..n
    and returns the lowest n_levels eigenstates.
    """
    if n_levels < 1 or n_levels > n_charge:
        raise ValueError(f"n_levels={n_levels} must lie in [1, n_charge={n_charge}].")
    if n_charge % 2 == 0:
        raise ValueError("n_charge must be odd (symmetric charge grid).")
    if n_charge < 4 * n_levels:
        raise ValueError(f"n_charge={n_charge} must be at least 4*n_levels={4 * n_levels}.")
    if ec <= 0 or ej < 0:
        raise ValueError("E_C must be positive and E_J non-negative.")

    half = n_charge // 2
    charges = np.arange(-half, half + 1, dtype=float)
    diagonal = 4.0 * ec * charges ** 2
    # cos(phi) = (|n><n+1| + |n+1><n|) / 2
    off_diagonal = np.full(n_charge - 1, -ej / 2.0)
    try:
        energies, vectors = linalg.eigh_tridiagonal(
            diagonal, off_diagonal, select="i", select_range=(0, n_levels - 1)
        )
    except (np.linalg.LinAlgError, ValueError) as e:
        raise DiagonalizationError(f"Charge-basis eigensolve failed: {e}") from e
    if not np.all(np.isfinite(energies)):
        raise DiagonalizationError("Charge-basis eigensolve returned non-finite energies.")

    # ties: energy first, then charge expectation
    charge_mean = np.sum(charges[:, None] * vectors ** 2, axis=0)
    scale = max(abs(ec), abs(ej), 1.0)
    order = np.lexsort((charge_mean, np.round(energies / scale, 9)))
    energies, vectors = energies[order], vectors[:, order]

    charge_op = vectors.T @ (charges[:, None] * vectors)
    charge_op = _fix_charge_gauge(charge_op.astype(complex))
    energies = energies - energies[0]

    lowering = np.diag(np.sqrt(np.arange(1, n_levels, dtype=float)), 1).astype(complex)
    logger.debug("Transmon diagonalized: w01/2pi=%.6f GHz", (energies[1] if n_levels > 1 else 0.0) / config.GHZ)
    return TransmonEigenbasis(energies=energies, charge_op=charge_op, lowering_op=lowering, n_levels=n_levels)


def _fix_charge_gauge(charge_op: np.ndarray) -> np.ndarray:
    """Rephases eigenvectors so that <k+1|n|k> is positive imaginary."""
    n = charge_op.shape[0]
    phases = np.ones(n, dtype=complex)
    for k in range(n - 1):
        element = charge_op[k + 1, k]
        unit = element / abs(element) if abs(element) > 1e-14 else 1.0
        phases[k + 1] = -1j * phases[k] * unit
    gauged = phases.conj()[:, None] * charge_op * phases[None, :]
    return (gauged + gauged.conj().T) / 2


def diagonalize_filter_chain(omega_r: float, omega_f: float, j: float, kappa: float,
                             g: float) -> NormalModeBasis:
    """
    Normal modes of omega_r a^dag a + omega_f f^dag f + J (a^dag f + a f^dag).

    Closed-form solution of the symmetric 2x2 mode-frequency eigenproblem. With
    tan(2 theta) = 2J / (omega_f - omega_r) the lower mode is cos(theta) a - sin(theta) f.
    """
    if j < 0:
        raise ValueError("J must be non-negative.")
    if kappa <= 0:
        raise ValueError("kappa must be positive.")
    if omega_r == omega_f and j == 0:
        raise DiagonalizationError("Resonator and filter are degenerate and uncoupled; mixing angle undefined.")

    theta = 0.5 * math.atan2(2.0 * j, omega_f - omega_r)
    mean = 0.5 * (omega_r + omega_f)
    half_split = math.hypot(0.5 * (omega_f - omega_r), j)
    c, s = math.cos(theta), math.sin(theta)
    decay_lower = kappa * s * s
    return NormalModeBasis(
        mode_freqs=(mean - half_split, mean + half_split),
        hybridization_angle=theta,
        transmon_couplings=(g * c, g * s),
        decay_rates=(decay_lower, kappa - decay_lower),
        drive_weights=(complex(-s), complex(c)),
        resonator_weights=(c, s),
    )


def bosonic_ops(n: int) -> BosonicOperators:
    """Truncated Fock-space ladder operators."""
    if n < 2:
        raise ValueError("Fock truncation must be at least 2.")
    lowering = np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1).astype(complex)
    raising = lowering.conj().T.copy()
    number = np.diag(np.arange(n, dtype=float)).astype(complex)
    return BosonicOperators(lowering=lowering, raising=raising, number=number)


def embed(space: CompositeSpace, subsystem: int, op: np.ndarray) -> np.ndarray:
    """Kronecker embedding (transmon x driven x undriven) with identities elsewhere."""
    if subsystem not in (TRANSMON, DRIVEN, UNDRIVEN):
        raise ValueError(f"Unknown subsystem index {subsystem}.")
    d = space.dims[subsystem]
    if op.shape != (d, d):
        raise DimensionError(f"Operator shape {op.shape} does not match subsystem dimension {d}.")
    factors = list(space._identities)
    factors[subsystem] = np.asarray(op, dtype=complex)
    return np.kron(np.kron(factors[0], factors[1]), factors[2])
