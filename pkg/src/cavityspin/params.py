"""Model parameters of the driven collective-spin model.

Units: times in seconds, rates in 1/s, angular frequencies in rad/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import InvalidParameterError


@dataclass(frozen=True)
class CavityParams:
    g: float
    delta: float
    kappa: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise InvalidParameterError(f"kappa must be > 0, got {self.kappa}")
        if self.g < 0:
            raise InvalidParameterError(f"g must be >= 0, got {self.g}")


@dataclass(frozen=True)
class ModelParams:
    """Reduced model: N atoms, exchange chi, collective decay gamma, drive omega."""

    n_atoms: int
    chi: float
    gamma: float
    omega: float

    def __post_init__(self):
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 1:
            raise InvalidParameterError(f"n_atoms must be a positive integer, got {self.n_atoms}")
        object.__setattr__(self, "n_atoms", int(self.n_atoms))
        for name in ("chi", "gamma", "omega"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"{name} must be finite")
        if self.gamma < 0:
            raise InvalidParameterError(f"gamma must be >= 0, got {self.gamma}")
        if self.omega < 0:
            raise InvalidParameterError(f"omega must be >= 0, got {self.omega}")
        if self.gamma == 0 and self.chi == 0 and self.omega == 0:
            raise InvalidParameterError("at least one of gamma, chi, omega must be nonzero")

    @property
    def spin(self) -> float:
        return self.n_atoms / 2

    @property
    def omega_c(self) -> float:
        return 0.5 * self.n_atoms * math.hypot(self.gamma, 2 * self.chi)

    @property
    def omega_sr(self) -> float:
        """Superradiant boundary N*gamma/2."""
        return 0.5 * self.n_atoms * self.gamma

    def with_omega(self, omega: float) -> "ModelParams":
        return replace(self, omega=float(omega))

    def with_n(self, n_atoms: int) -> "ModelParams":
        return replace(self, n_atoms=int(n_atoms))

    @classmethod
    def from_ratios(cls, n_atoms, gamma, chi_ratio, omega_ratio):
        """Build from 2*chi/gamma and 2*omega/(N*gamma)."""
        return cls(
            n_atoms=n_atoms,
            chi=0.5 * chi_ratio * gamma,
            gamma=gamma,
            omega=0.5 * omega_ratio * n_atoms * gamma,
        )


def derive_couplings(c: CavityParams) -> tuple[float, float]:
    """Adiabatic elimination of the cavity mode: returns (chi, gamma)."""
    if not c.kappa > 0:
        raise InvalidParameterError("kappa must be > 0")
    denom = 4 * c.delta**2 + c.kappa**2
    chi = 4 * c.g**2 * c.delta / denom
    gamma = 4 * c.g**2 * c.kappa / denom
    return chi, gamma


def model_from_cavity(n_atoms: int, cavity: CavityParams, omega: float) -> ModelParams:
    chi, gamma = derive_couplings(cavity)
    return ModelParams(n_atoms=n_atoms, chi=chi, gamma=gamma, omega=omega)
