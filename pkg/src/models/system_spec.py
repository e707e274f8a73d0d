# src/models/system_spec.py
from dataclasses import dataclass, replace
from typing import Optional, Tuple

from src import config
from src.errors import ConfigError

DRIVEN_MODES = ("lower", "higher")


@dataclass(frozen=True)
class SystemSpec:
    """
    Physical parameters of the transmon / resonator / Purcell-filter device.
    Frequencies and rates are angular (rad/s).
    """
    ec: float = config.DEVICE_EC
    ej: float = config.DEVICE_EJ_OVER_EC * config.DEVICE_EC
    omega_r: float = config.DEVICE_OMEGA_R
    omega_f: float = config.DEVICE_OMEGA_F
    g: float = config.DEVICE_G
    j: float = config.DEVICE_J
    kappa: float = config.DEVICE_KAPPA
    gamma: float = config.DEVICE_GAMMA
    eta: float = config.DEVICE_ETA
    omega_t: Optional[float] = config.DEVICE_OMEGA_T
    dims: Tuple[int, int, int] = config.READOUT_DIMS
    driven_mode: str = "lower"
    n_charge: int = config.N_CHARGE

    def __post_init__(self):
        if self.ec <= 0 or self.ej < 0:
            raise ConfigError("system: E_C must be positive and E_J non-negative.")
        if self.omega_r <= 0 or self.omega_f <= 0:
            raise ConfigError("system: resonator and filter frequencies must be positive.")
        if self.g < 0 or self.j < 0:
            raise ConfigError("system: couplings g and J must be non-negative.")
        if self.kappa <= 0:
            raise ConfigError("system: kappa must be positive.")
        if self.gamma < 0:
            raise ConfigError("system: gamma must be non-negative.")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("system: eta must lie in [0, 1].")
        if self.driven_mode not in DRIVEN_MODES:
            raise ConfigError(f"system: driven_mode must be one of {DRIVEN_MODES}.")
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or dims[0] < 2 or dims[1] < 2 or dims[2] < 1:
            raise ConfigError(f"system: invalid truncation {self.dims} (need N_t>=2, N_d>=2, N_u>=1).")
        object.__setattr__(self, "dims", dims)

    @property
    def t1(self) -> float:
        return float("inf") if self.gamma == 0 else 1.0 / self.gamma

    @property
    def driven_index(self) -> int:
        """Index of the driven normal mode (0 = lower, 1 = higher)."""
        return DRIVEN_MODES.index(self.driven_mode)

    def with_dims(self, dims) -> 'SystemSpec':
        return replace(self, dims=tuple(dims))

    def to_dict(self) -> dict:
        data = {
            "E_C_MHz": self.ec / config.MHZ,
            "E_J_MHz": self.ej / config.MHZ,
            "omega_r_GHz": self.omega_r / config.GHZ,
            "omega_f_GHz": self.omega_f / config.GHZ,
            "g_MHz": self.g / config.MHZ,
            "J_MHz": self.j / config.MHZ,
            "kappa_MHz": self.kappa / config.MHZ,
            "gamma_MHz": self.gamma / config.MHZ,
            "eta": self.eta,
            "N_t": self.dims[0],
            "N_d": self.dims[1],
            "N_u": self.dims[2],
            "driven_mode": self.driven_mode,
            "n_charge": self.n_charge,
        }
        if self.omega_t is not None:
            data["omega_t_GHz"] = self.omega_t / config.GHZ
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'SystemSpec':
        """Builds a spec from the JSON schema; missing fields take the device defaults."""
        known = {"E_C_MHz", "E_J_MHz", "E_J_over_E_C", "omega_r_GHz", "omega_f_GHz", "omega_t_GHz",
                 "g_MHz", "J_MHz", "kappa_MHz", "gamma_MHz", "eta", "N_t", "N_d", "N_u",
                 "driven_mode", "n_charge"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"system: unknown field(s) {unknown} (fields carry unit suffixes, e.g. omega_r_GHz).")
        defaults = cls()
        try:
            ec = float(data.get("E_C_MHz", defaults.ec / config.MHZ)) * config.MHZ
            if "E_J_MHz" in data and "E_J_over_E_C" in data:
                raise ConfigError("system: give either E_J_MHz or E_J_over_E_C, not both.")
            if "E_J_MHz" in data:
                ej = float(data["E_J_MHz"]) * config.MHZ
            else:
                ej = float(data.get("E_J_over_E_C", config.DEVICE_EJ_OVER_EC)) * ec
            omega_t = data.get("omega_t_GHz", defaults.omega_t / config.GHZ)
            return cls(
                ec=ec,
                ej=ej,
                omega_r=float(data.get("omega_r_GHz", defaults.omega_r / config.GHZ)) * config.GHZ,
                omega_f=float(data.get("omega_f_GHz", defaults.omega_f / config.GHZ)) * config.GHZ,
                g=float(data.get("g_MHz", defaults.g / config.MHZ)) * config.MHZ,
                j=float(data.get("J_MHz", defaults.j / config.MHZ)) * config.MHZ,
                kappa=float(data.get("kappa_MHz", defaults.kappa / config.MHZ)) * config.MHZ,
                gamma=float(data.get("gamma_MHz", defaults.gamma / config.MHZ)) * config.MHZ,
                eta=float(data.get("eta", defaults.eta)),
                omega_t=None if omega_t is None else float(omega_t) * config.GHZ,
                dims=(int(data.get("N_t", defaults.dims[0])), int(data.get("N_d", defaults.dims[1])),
                      int(data.get("N_u", defaults.dims[2]))),
                driven_mode=data.get("driven_mode", defaults.driven_mode),
                n_charge=int(data.get("n_charge", defaults.n_charge)),
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"system: invalid value ({e}).") from e
