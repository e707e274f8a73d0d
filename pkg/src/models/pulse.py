# src/models/pulse.py
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src import config


@dataclass
class PixelPulse:
    """Complex pixel amplitudes on a fixed bin grid, smoothed by a gaussian filter.

    Amplitudes and the carrier detuning are angular frequencies (rad/s); the
    bin width is in seconds.
    """
    amplitudes: np.ndarray
    bin_width: float = config.PIXEL_BIN
    filter_bandwidth: float = config.FILTER_BANDWIDTH
    filter_omega0: float = config.FILTER_OMEGA0
    carrier_detuning: float = 0.0

    def __post_init__(self):
        self.amplitudes = np.atleast_1d(np.asarray(self.amplitudes, dtype=complex)).copy()
        if self.amplitudes.ndim != 1 or self.amplitudes.size == 0:
            raise ValueError("A pulse needs a non-empty 1-D pixel array.")
        if self.bin_width <= 0 or self.filter_omega0 <= 0:
            raise ValueError("Bin width and filter frequency must be positive.")

    @property
    def n_pixels(self) -> int:
        return int(self.amplitudes.size)

    @property
    def duration(self) -> float:
        return self.n_pixels * self.bin_width

    def copy(self, amplitudes: Optional[np.ndarray] = None, carrier_detuning: Optional[float] = None) -> 'PixelPulse':
        return PixelPulse(
            amplitudes=self.amplitudes if amplitudes is None else amplitudes,
            bin_width=self.bin_width,
            filter_bandwidth=self.filter_bandwidth,
            filter_omega0=self.filter_omega0,
            carrier_detuning=self.carrier_detuning if carrier_detuning is None else carrier_detuning,
        )

    def to_dict(self) -> dict:
        """Serializes to the pulse JSON schema; pixel amplitudes are written as Omega / 2 pi in MHz."""
        return {
            "bin_ns": self.bin_width / config.NS,
            "omega0_GHz": self.filter_omega0 / config.GHZ,
            "bandwidth_MHz": self.filter_bandwidth / config.MHZ,
            "detuning_MHz": self.carrier_detuning / config.MHZ,
            "pixels_MHz": [[float(a.real / config.MHZ), float(a.imag / config.MHZ)] for a in self.amplitudes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'PixelPulse':
        if "pixels_MHz" not in data:
            raise KeyError("pixels_MHz")
        pixels = config.MHZ * np.array([complex(re, im) for re, im in data["pixels_MHz"]], dtype=complex)
        return cls(
            amplitudes=pixels,
            bin_width=data.get("bin_ns", config.PIXEL_BIN / config.NS) * config.NS,
            filter_bandwidth=data.get("bandwidth_MHz", config.FILTER_BANDWIDTH / config.MHZ) * config.MHZ,
            filter_omega0=data.get("omega0_GHz", config.FILTER_OMEGA0 / config.GHZ) * config.GHZ,
            carrier_detuning=data.get("detuning_MHz", 0.0) * config.MHZ,
        )


@dataclass
class DriveTerm:
    """A driven term (Omega(t)/2) A exp(i (offset + delta) t) + h.c. of the rotating-frame Hamiltonian.

    `pulse` fixes the pixel grid and filter; the optimizable values live in the
    parameter vector as [Re Omega_j..., Im Omega_j..., delta] (delta only when
    `optimize_detuning` is set, otherwise pulse.carrier_detuning is used).
    """
    name: str
    operator: np.ndarray
    pulse: PixelPulse
    frame_offset: float = 0.0
    optimize_detuning: bool = True
    reference_frequency: float = 0.0
    operator_dag: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.operator = np.asarray(self.operator, dtype=complex)
        self.operator_dag = self.operator.conj().T.copy()

    @property
    def n_params(self) -> int:
        return 2 * self.pulse.n_pixels + (1 if self.optimize_detuning else 0)

    def parameter_names(self) -> list:
        n = self.pulse.n_pixels
        names = [f"{self.name}.re[{j}]" for j in range(n)] + [f"{self.name}.im[{j}]" for j in range(n)]
        if self.optimize_detuning:
            names.append(f"{self.name}.detuning")
        return names

    def parameters_from_pulse(self, pulse: Optional[PixelPulse] = None) -> np.ndarray:
        pulse = pulse or self.pulse
        values = [pulse.amplitudes.real, pulse.amplitudes.imag]
        if self.optimize_detuning:
            values.append(np.array([pulse.carrier_detuning]))
        return np.concatenate(values).astype(float)

    def unpack(self, params: np.ndarray):
        """Returns (complex amplitudes, carrier detuning) for this drive's parameter slice."""
        n = self.pulse.n_pixels
        amplitudes = params[:n] + 1j * params[n:2 * n]
        detuning = params[2 * n] if self.optimize_detuning else self.pulse.carrier_detuning
        return amplitudes, float(detuning)

    def pulse_from_parameters(self, params: np.ndarray) -> PixelPulse:
        amplitudes, detuning = self.unpack(params)
        return self.pulse.copy(amplitudes=amplitudes, carrier_detuning=detuning)
