# src/models/states.py
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np


@dataclass
class DensityMatrix:
    """A density matrix at a given time (s)."""
    matrix: np.ndarray
    time: float

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def diagnostics(self, positivity: bool = False) -> dict:
        """Hermiticity, trace and (optionally) positivity errors."""
        m = self.matrix
        report = {
            "hermiticity": float(np.max(np.abs(m - m.conj().T))),
            "trace_error": float(abs(np.trace(m) - 1.0)),
        }
        if positivity:
            report["min_eigenvalue"] = float(np.linalg.eigvalsh((m + m.conj().T) / 2)[0])
        return report


@dataclass
class AdjointState:
    """Adjoint state phi(t) = dC/drho(t)."""
    matrix: np.ndarray
    time: float


@dataclass
class Trajectory:
    """States and/or scalar records Tr[A rho(t)] at the save times."""
    save_times: np.ndarray
    states: Optional[List[DensityMatrix]] = None
    scalar_records: Dict[str, np.ndarray] = field(default_factory=dict)
    label: str = ""
    step_count: int = 0

    def __post_init__(self):
        self.save_times = np.asarray(self.save_times, dtype=float)
        if np.any(np.diff(self.save_times) <= 0):
            raise ValueError("Save times must be strictly increasing.")

    def record(self, name: str) -> np.ndarray:
        if name not in self.scalar_records:
            raise KeyError(f"Trajectory '{self.label}' has no record '{name}'.")
        return self.scalar_records[name]

    def final_state(self) -> Optional[DensityMatrix]:
        return self.states[-1] if self.states else None

    def index_of(self, time: float, tol: float = 1e-15) -> int:
        idx = int(np.argmin(np.abs(self.save_times - time)))
        if abs(self.save_times[idx] - time) > tol + 1e-9 * abs(time):
            raise KeyError(f"Time {time} is not a save time of trajectory '{self.label}'.")
        return idx


@dataclass
class CheckpointStore:
    """Sparse forward checkpoints plus a peak counter of retained N x N matrices."""
    times: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    spacing: float = float("inf")
    live: int = 0
    peak_live: int = 0
    replay_deviations: List[float] = field(default_factory=list)

    def observe(self, *buffers: Optional[np.ndarray]) -> int:
        """Counts the stored checkpoints plus the distinct working buffers passed in; views count once."""
        seen = {id(b if b.base is None else b.base) for b in buffers if b is not None}
        self.live = len(self.states) + len(seen)
        self.peak_live = max(self.peak_live, self.live)
        return self.live

    def store(self, time: float, matrix: np.ndarray):
        self.times.append(float(time))
        self.states.append(matrix.copy())

    def index_at(self, time: float, tol: float) -> Optional[int]:
        for i, t in enumerate(self.times):
            if abs(t - time) <= tol:
                return i
        return None

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class GradientVector:
    """Per-parameter real partials dC/dtheta, optional dC/dT and run diagnostics."""
    names: List[str]
    values: np.ndarray
    time_derivative: Optional[float] = None
    diagnostics: Dict[str, float] = field(default_factory=dict)
    initial_adjoint: Optional[AdjointState] = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.names) != self.values.size:
            raise ValueError("Gradient length does not match the parameter count.")

    def is_finite(self) -> bool:
        finite = bool(np.all(np.isfinite(self.values)))
        if self.time_derivative is not None:
            finite = finite and bool(np.isfinite(self.time_derivative))
        return finite

    def to_dict(self) -> dict:
        data = {
            "gradient": {name: float(v) for name, v in zip(self.names, self.values)},
            "diagnostics": dict(self.diagnostics),
        }
        if self.time_derivative is not None:
            data["dC_dT"] = float(self.time_derivative)
        return data
