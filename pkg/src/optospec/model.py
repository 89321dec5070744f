"""Physical parameters, derived couplings and susceptibilities.

Everything here works in angular frequency (rad/s) and radians. Conversion
from the Hz / degree values used in configuration files happens once, in
:meth:`SystemParams.from_hz`.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

#: Lower limit applied to the gas damping rates (rad/s).
GAMMA_FLOOR = TWO_PI * 1e-3


class ParameterError(ValueError):
    """Raised when a parameter set violates its physical constraints.

    ``field`` names the offending parameter so callers (the CLI) can report it.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class SystemParams:
    """One experimental configuration, in rad/s and radians."""

    kappa: float
    delta: float
    omega_x: float
    omega_y: float
    gamma_x: float
    gamma_y: float
    Gamma_x: float
    Gamma_y: float
    g_max: float
    theta: float
    eta: float = 1.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = float(getattr(self, f.name))
            if not math.isfinite(value):
                raise ParameterError(f.name, "must be finite")
            object.__setattr__(self, f.name, value)

        for name in ("kappa", "omega_x", "omega_y"):
            if getattr(self, name) <= 0:
                raise ParameterError(name, "must be > 0")
        for name in ("Gamma_x", "Gamma_y", "g_max"):
            if getattr(self, name) < 0:
                raise ParameterError(name, "must be >= 0")
        for name in ("gamma_x", "gamma_y"):
            value = getattr(self, name)
            if value < 0:
                raise ParameterError(name, "must be > 0")
            if value < GAMMA_FLOOR:
                warnings.warn(
                    f"{name}={value:g} rad/s raised to floor {GAMMA_FLOOR:g} rad/s",
                    RuntimeWarning,
                    stacklevel=3,
                )
                object.__setattr__(self, name, GAMMA_FLOOR)
        if not 0 < self.eta <= 1:
            raise ParameterError("eta", "must lie in (0, 1]")
        # tolerate round-off from degree conversion at the interval ends
        if not -1e-12 <= self.theta <= math.pi / 2 + 1e-12:
            raise ParameterError("theta", "must lie in [0, pi/2]")
        object.__setattr__(self, "theta", min(max(self.theta, 0.0), math.pi / 2))

    @classmethod
    def from_hz(
        cls,
        *,
        kappa_hz: float,
        delta_hz: float,
        omega_x_hz: float,
        omega_y_hz: float,
        Gamma_x_hz: float,
        Gamma_y_hz: float,
        g_max_hz: float,
        theta_deg: float,
        gamma_x_hz: float = 1.0,
        gamma_y_hz: float = 1.0,
        eta: float = 1.0,
    ) -> "SystemParams":
        """Build from ordinary frequencies (X/2pi, in Hz) and an angle in degrees."""
        return cls(
            kappa=TWO_PI * kappa_hz,
            delta=TWO_PI * delta_hz,
            omega_x=TWO_PI * omega_x_hz,
            omega_y=TWO_PI * omega_y_hz,
            gamma_x=TWO_PI * gamma_x_hz,
            gamma_y=TWO_PI * gamma_y_hz,
            Gamma_x=TWO_PI * Gamma_x_hz,
            Gamma_y=TWO_PI * Gamma_y_hz,
            g_max=TWO_PI * g_max_hz,
            theta=math.radians(theta_deg),
            eta=eta,
        )

    def to_hz(self) -> dict:
        """Inverse of :meth:`from_hz`."""
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "theta":
                out["theta_deg"] = math.degrees(value)
            elif f.name == "eta":
                out["eta"] = value
            else:
                out[f"{f.name}_hz"] = value / TWO_PI
        return out

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class DerivedCouplings:
    g_x: float
    g_y: float
    g_b: float
    omega_b: float
    omega_d: float
    C_Q: float
    # bright-mode projection weights g_x/g_b and g_y/g_b; finite even when g_max = 0
    u_x: float
    u_y: float


def derive_couplings(p: SystemParams) -> DerivedCouplings:
    s, c = math.sin(p.theta), math.cos(p.theta)
    if p.theta == math.pi / 2:
        c = 0.0
    ratio = math.sqrt(p.omega_x / p.omega_y)
    g_x = p.g_max * s * s
    g_y = p.g_max * ratio * s * c

    omega_b = math.sqrt(s * s * p.omega_x**2 + c * c * p.omega_y**2)
    omega_d = math.sqrt(c * c * p.omega_x**2 + s * s * p.omega_y**2)
    g_b = p.g_max * s * math.sqrt(p.omega_x / omega_b)

    u_x = s * math.sqrt(omega_b / p.omega_x)
    u_y = c * math.sqrt(omega_b / p.omega_y)

    g_b2 = g_x**2 + g_y**2
    if g_b2 > 0:
        gamma_eff = (g_x**2 * p.Gamma_x + g_y**2 * p.Gamma_y) / g_b2
        c_q = 4 * g_b2 / (p.kappa * gamma_eff) if gamma_eff > 0 else math.inf
    else:
        c_q = 0.0
    return DerivedCouplings(g_x, g_y, g_b, omega_b, omega_d, c_q, u_x, u_y)


def params_from_couplings(base: SystemParams, g_x: float, g_y: float) -> SystemParams:
    """Return ``base`` with (g_max, theta) chosen to produce the given couplings."""
    if g_x < 0 or g_y < 0:
        raise ParameterError("g_x" if g_x < 0 else "g_y", "must be >= 0")
    if g_x == 0 and g_y == 0:
        return base.replace(g_max=0.0)
    if g_x == 0:
        # theta = 0 kills both couplings; there is no exact preimage
        raise ParameterError("g_x", "g_y > 0 requires g_x > 0")
    # g_y / g_x = sqrt(Ox/Oy) * cot(theta)
    theta = math.atan2(math.sqrt(base.omega_x / base.omega_y) * g_x, g_y)
    return base.replace(theta=theta, g_max=g_x / math.sin(theta) ** 2)


def chi_cavity(p: SystemParams, omega):
    """Optical amplitude susceptibility ``1 / (-i(delta + omega) + kappa/2)``."""
    omega = np.asarray(omega, dtype=float)
    return 1.0 / (-1j * (p.delta + omega) + p.kappa / 2)


def chi_mech(p: SystemParams, axis: str, omega):
    """Bare mechanical susceptibility ``1 / (i(Omega_j - omega) + gamma_j/2)``."""
    if axis == "x":
        big_omega, gamma = p.omega_x, p.gamma_x
    elif axis == "y":
        big_omega, gamma = p.omega_y, p.gamma_y
    else:
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    omega = np.asarray(omega, dtype=float)
    return 1.0 / (1j * (big_omega - omega) + gamma / 2)


def chi_minus(chi_pos, chi_neg):
    """``chi(omega) - conj(chi(-omega))`` from the two evaluations."""
    return np.asarray(chi_pos) - np.conj(chi_neg)


def frequency_grid(f_min_hz: float, f_max_hz: float, points: int) -> np.ndarray:
    """Evenly spaced grid in rad/s between two ordinary frequencies."""
    if points < 2:
        raise ParameterError("points", "need at least 2 grid points")
    if not f_max_hz > f_min_hz:
        raise ParameterError("f_max_hz", "must exceed f_min_hz")
    return TWO_PI * np.linspace(f_min_hz, f_max_hz, int(points))


def check_grid(omega, *, positive: bool = False) -> np.ndarray:
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if omega.ndim != 1:
        raise ValueError("frequency grid must be one-dimensional")
    if not np.all(np.isfinite(omega)):
        raise ValueError("frequency grid contains non-finite points")
    if omega.size > 1 and not np.all(np.diff(omega) > 0):
        raise ValueError("frequency grid must be strictly increasing")
    if positive and omega.size and omega[0] <= 0:
        raise ValueError("frequency grid must be strictly positive")
    return omega
