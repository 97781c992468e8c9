"""Air properties, wall-loss constants and the baffled-piston radiation load.

All quantities are SI.  The wall losses of the transmission-line model are
split into a diameter-dependent part (the local radius) and a pair of
diameter-independent constants ``G_c`` and ``R_c``::

    G(x) = r(x) * G_c          (heat conduction, per unit length)
    R(x) = R_c / r(x)**3       (viscosity, per unit length)
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np


@dataclass(frozen=True)
class PhysicalConstants:
    rho: float = 1.20  # kg/m^3
    K: float = 1.39e5  # Pa
    c: float = 340.0  # m/s
    mu: float = 19.0e-6  # Pa s
    eta: float = 1.40  # cp/cv
    lambda_th: float = 2.41e-2  # W/(m K)
    c_p: float = 1.01e3  # J/(kg K)
    omega_c: float = 1.64e3  # rad/s

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and positive, got {value!r}")
        if self.eta <= 1.0:
            raise ValueError(f"eta must exceed 1, got {self.eta!r}")

    def with_cp_in_kj(self) -> "PhysicalConstants":
        """Copy with c_p entered as its kJ/(kg K) numeral (1.01 instead of 1010).

        This is the unit convention under which the heat-conduction constant
        evaluates to the commonly quoted reference value 7.29e-5.
        """
        return replace(self, c_p=self.c_p / 1e3)


@dataclass(frozen=True)
class LossConstants:
    G_c: float
    R_c: float

    def __post_init__(self):
        if not (self.G_c > 0 and self.R_c > 0):
            raise ValueError(f"loss constants must be positive, got {self}")

    def scaled(self, g_factor: float = 1.0, r_factor: float = 1.0) -> "LossConstants":
        return LossConstants(self.G_c * g_factor, self.R_c * r_factor)


@dataclass(frozen=True)
class RadiationParams:
    R_r: float  # Pa s / m^3
    L_r: float  # Pa s^2 / m^3


# Reference "true" values used as ground truth in identification runs.
REFERENCE_LOSS = LossConstants(G_c=7.29e-5, R_c=8.73e-2)


def theoretical_Gc(consts: PhysicalConstants) -> float:
    """Heat-conduction constant 2 pi (eta - 1)/(rho c^2) sqrt(lambda omega_c / (2 c_p rho))."""
    return (
        2.0 * math.pi * (consts.eta - 1.0) / (consts.rho * consts.c**2)
        * math.sqrt(consts.lambda_th * consts.omega_c / (2.0 * consts.c_p * consts.rho))
    )


def theoretical_Rc(consts: PhysicalConstants) -> float:
    """Viscous constant (2/pi) sqrt(omega_c rho mu / 2)."""
    return 2.0 / math.pi * math.sqrt(consts.omega_c * consts.rho * consts.mu / 2.0)


def _check_radius(r):
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise ValueError("tube radius must be strictly positive")
    return r


def G_at(r, G_c):
    """Local heat-conduction loss r * G_c (scalar or array radius)."""
    r = _check_radius(r)
    out = r * G_c
    return float(out) if out.ndim == 0 else out


def R_at(r, R_c):
    """Local viscous loss R_c / r^3 (scalar or array radius)."""
    r = _check_radius(r)
    out = R_c / r**3
    return float(out) if out.ndim == 0 else out


def radiation_params(A_l: float, consts: PhysicalConstants) -> RadiationParams:
    """Resistance and inertance of a circular piston in an infinite baffle."""
    if not A_l > 0:
        raise ValueError(f"outlet area must be positive, got {A_l!r}")
    R_r = 128.0 * consts.rho * consts.c / (9.0 * math.pi**2 * A_l)
    L_r = 8.0 * consts.rho / (3.0 * math.pi * math.sqrt(math.pi * A_l))
    return RadiationParams(R_r=R_r, L_r=L_r)
