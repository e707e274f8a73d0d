"""
Small dense-operator helpers shared by the numerical modules.
"""

import numpy as np

from src.errors import DimensionError


def dagger(op: np.ndarray) -> np.ndarray:
    """Conjugate transpose."""
    return op.conj().T


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def anticommutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b + b @ a


def hermiticity_error(op: np.ndarray) -> float:
    """Max-abs entry of op - op^dagger."""
    return float(np.max(np.abs(op - dagger(op)))) if op.size else 0.0


def is_hermitian(op: np.ndarray, tol: float = 1e-12, relative: bool = True) -> bool:
    scale = float(np.max(np.abs(op))) if (relative and op.size) else 1.0
    return hermiticity_error(op) <= tol * max(scale, 1e-300)


def check_square(op: np.ndarray, dim: int, name: str = "operator"):
    if op.ndim != 2 or op.shape != (dim, dim):
        raise DimensionError(f"{name} has shape {op.shape}, expected ({dim}, {dim}).")


def projector(dim: int, index: int) -> np.ndarray:
    p = np.zeros((dim, dim), dtype=complex)
    p[index, index] = 1.0
    return p


def ket_density(dim: int, index: int) -> np.ndarray:
    """|index><index| as a complex density matrix."""
    return projector(dim, index)


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int = None) -> np.ndarray:
    """Random full-rank (or given rank) density matrix."""
    rank = rank or dim
    x = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = x @ dagger(x)
    return rho / np.trace(rho)


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (x + dagger(x)) / 2
