"""Closed-form spectra of the bright mode and of the heterodyne output.

Sign convention: ``S(omega)`` for omega > 0 is the anti-Stokes branch and
``S(-omega)`` the Stokes branch. With red detuning the back-action term
``kappa |chi_c(-omega)|^2`` is strongly suppressed on the anti-Stokes side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    SystemParams,
    check_grid,
    chi_cavity,
    chi_mech,
    chi_minus,
    derive_couplings,
)

KINDS = ("bright_mode_psd", "heterodyne", "asymmetry", "interference", "backaction")
BRANCHES = ("upper", "lower")

class SpectrumEvaluationError(ArithmeticError):
    """A closed-form spectrum produced a non-finite value."""

    def __init__(self, omega: float, kind: str):
        super().__init__(f"{kind} is not finite at omega = {omega!r} rad/s")
        self.omega = omega


@dataclass(frozen=True)
class Spectrum:
    """Values on an angular-frequency grid.

    ``valid`` flags points that carry meaningful values; invalid points hold
    NaN but stay in place so grids remain aligned.
    """

    grid: np.ndarray
    values: np.ndarray
    kind: str
    valid: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.shape != values.shape or grid.ndim != 1:
            raise ValueError("grid and values must be 1-D arrays of equal length")
        if self.kind not in KINDS:
            raise ValueError(f"unknown spectrum kind {self.kind!r}")
        valid = (
            np.ones(grid.shape, dtype=bool)
            if self.valid is None
            else np.asarray(self.valid, dtype=bool)
        )
        if valid.shape != grid.shape:
            raise ValueError("valid mask must match the grid")
        if not np.all(np.isfinite(values[valid])):
            raise ValueError("valid points must carry finite values")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def f_hz(self) -> np.ndarray:
        return self.grid / (2 * np.pi)

    def __len__(self):
        return self.grid.size


def _raise_if_nonfinite(omega, values, kind):
    bad = ~np.isfinite(values)
    if np.any(bad):
        raise SpectrumEvaluationError(float(omega[np.argmax(bad)]), kind)


def _mech_terms(p: SystemParams, omega):
    """Susceptibilities and chi^- for both axes plus the cavity at +/- omega."""
    cx, cx_neg = chi_mech(p, "x", omega), chi_mech(p, "x", -omega)
    cy, cy_neg = chi_mech(p, "y", omega), chi_mech(p, "y", -omega)
    cc, cc_neg = chi_cavity(p, omega), chi_cavity(p, -omega)
    return {
        "cx": cx,
        "cx_neg": cx_neg,
        "cy": cy,
        "cy_neg": cy_neg,
        "cc": cc,
        "cc_neg": cc_neg,
        "xm": chi_minus(cx, cx_neg),
        "ym": chi_minus(cy, cy_neg),
        "cm": chi_minus(cc, cc_neg),
    }


def bright_mode_terms(p: SystemParams, omega):
    """Thermal and vacuum contributions to the bright-mode PSD at ``omega``.

    Returns ``(thermal, vacuum)``, each in units of s, summing to the full
    stationary spectrum. Couplings enter through the ratios g_j/g_b so the
    expression stays finite for g_max = 0.
    """
    omega = np.asarray(omega, dtype=float)
    c = derive_couplings(p)
    t = _mech_terms(p, omega)

    weighted = c.g_x**2 * t["xm"] + c.g_y**2 * t["ym"]
    denom = np.abs(1 + t["cm"] * weighted) ** 2

    thermal = (
        c.u_x**2 * p.Gamma_x * (np.abs(t["cx"]) ** 2 + np.abs(t["cx_neg"]) ** 2)
        + c.u_y**2 * p.Gamma_y * (np.abs(t["cy"]) ** 2 + np.abs(t["cy_neg"]) ** 2)
    ) / denom
    # |g_x^2 chi_x^- + g_y^2 chi_y^-|^2 / g_b^2 without dividing by g_b
    projected = c.u_x * c.g_x * t["xm"] + c.u_y * c.g_y * t["ym"]
    vacuum = np.abs(projected) ** 2 * p.kappa * np.abs(t["cc_neg"]) ** 2 / denom
    return thermal, vacuum


def _psd_values(p, omega):
    thermal, vacuum = bright_mode_terms(p, omega)
    values = thermal + vacuum
    _raise_if_nonfinite(omega, values, "bright_mode_psd")
    return values


def bright_mode_psd(p: SystemParams, grid) -> Spectrum:
    """Stationary displacement PSD of the geometrical bright mode."""
    omega = check_grid(grid)
    return Spectrum(omega, _psd_values(p, omega), "bright_mode_psd")


def one_d_psd(p: SystemParams, grid) -> Spectrum:
    """Single-axis limit: the full expression with only x-axis quantities kept."""
    return bright_mode_psd(p.replace(theta=np.pi / 2), grid)


def effective_susceptibility(p: SystemParams, omega):
    """Dressed x-axis response ``chi_x^- / (1 + g^2 chi_c^- chi_x^-)`` of the 1-D model.

    Its modulus is even in omega. It reproduces :func:`one_d_psd` through
    ``|chi_eff|^2 (Gamma + kappa g^2 |chi_c(-omega)|^2)`` only in the
    rotating-wave sense, where ``|chi_x(w)|^2 + |chi_x(-w)|^2 ~ |chi_x^-|^2``.
    """
    omega = np.asarray(omega, dtype=float)
    g = derive_couplings(p).g_x
    xm = chi_minus(chi_mech(p, "x", omega), chi_mech(p, "x", -omega))
    cm = chi_minus(chi_cavity(p, omega), chi_cavity(p, -omega))
    return xm / (1 + g**2 * cm * xm)


def force_asymmetry(p: SystemParams, omega, gamma_eff: float | None = None):
    """Ratio of the force spectra on the two branches in the single-axis limit.

    ``(Gamma + kappa g^2 |chi_c(omega)|^2) / (Gamma + kappa g^2 |chi_c(-omega)|^2)``
    with ``g = g_x`` and ``Gamma`` defaulting to ``Gamma_x``.
    """
    omega = np.asarray(omega, dtype=float)
    c = derive_couplings(p)
    gam = p.Gamma_x if gamma_eff is None else gamma_eff
    num = gam + p.kappa * c.g_x**2 * np.abs(chi_cavity(p, omega)) ** 2
    den = gam + p.kappa * c.g_x**2 * np.abs(chi_cavity(p, -omega)) ** 2
    return num / den


def asymmetry_model(p: SystemParams, grid, *, tiny: float = 1e-300) -> Spectrum:
    """``A(omega) = S(-omega) / S(omega)`` on a positive grid."""
    omega = check_grid(grid, positive=True)
    pos = _psd_values(p, omega)
    neg = _psd_values(p, -omega)
    valid = pos > tiny
    values = np.full(omega.shape, np.nan)
    values[valid] = neg[valid] / pos[valid]
    return Spectrum(omega, values, "asymmetry", valid)


def cavity_correction(p: SystemParams, omega):
    """``((omega - delta)^2 + (kappa/2)^2) / ((omega + delta)^2 + (kappa/2)^2)``."""
    omega = np.asarray(omega, dtype=float)
    half = (p.kappa / 2) ** 2
    return ((omega - p.delta) ** 2 + half) / ((omega + p.delta) ** 2 + half)


def heterodyne_psd(p: SystemParams, grid, branch: str) -> Spectrum:
    """Shot-noise normalised heterodyne PSD at ``Omega_LO +/- omega``.

    ``branch='upper'`` gives the anti-Stokes side ``S_out(Omega_LO + omega)``,
    ``'lower'`` the Stokes side ``S_out(Omega_LO - omega)``.
    """
    if branch not in BRANCHES:
        raise ValueError(f"branch must be one of {BRANCHES}, got {branch!r}")
    omega = check_grid(grid, positive=True)
    signed = omega if branch == "upper" else -omega
    c = derive_couplings(p)
    thermal, vacuum = bright_mode_terms(p, signed)
    # gain carries g_b^2, so g_max = 0 leaves exactly the shot-noise floor
    gain = p.eta * c.g_b**2 * p.kappa * np.abs(chi_cavity(p, signed)) ** 2
    values = 1.0 + gain * (thermal + vacuum)
    _raise_if_nonfinite(omega, values, "heterodyne")
    return Spectrum(omega, values, "heterodyne", meta={"branch": branch})


def displacement_from_heterodyne(p: SystemParams, spectrum: Spectrum) -> Spectrum:
    """Undo the detection chain: ``(S_out - 1) / (eta g_b^2 kappa |chi_c|^2)``.

    The result is the bright-mode PSD at ``+omega`` (upper branch) or
    ``-omega`` (lower branch), indexed by the positive offset grid.
    """
    branch = spectrum.meta.get("branch")
    if branch not in BRANCHES:
        raise ValueError("heterodyne spectrum must carry meta['branch']")
    omega = spectrum.grid
    signed = omega if branch == "upper" else -omega
    c = derive_couplings(p)
    gain = p.eta * c.g_b**2 * p.kappa * np.abs(chi_cavity(p, signed)) ** 2
    valid = spectrum.valid & (gain > 0)
    values = np.full(omega.shape, np.nan)
    values[valid] = (spectrum.values[valid] - 1.0) / gain[valid]
    return Spectrum(omega, values, "bright_mode_psd", valid, meta={"branch": branch})


def asymmetry_from_data(
    stokes: Spectrum, antistokes: Spectrum, p: SystemParams, *, floor: float = 1e-9
) -> Spectrum:
    """Corrected asymmetry from measured lower (Stokes) and upper branches.

    Points whose excess over shot noise is at or below ``floor`` in either
    branch are flagged invalid.
    """
    _check_aligned(stokes, antistokes)
    omega = check_grid(stokes.grid, positive=True)
    lower = stokes.values - 1.0
    upper = antistokes.values - 1.0
    valid = stokes.valid & antistokes.valid & (upper > floor) & (lower > floor)
    values = np.full(omega.shape, np.nan)
    values[valid] = lower[valid] / upper[valid] * cavity_correction(p, omega[valid])
    return Spectrum(omega, values, "asymmetry", valid)


def interference_term(p: SystemParams, grid) -> Spectrum:
    """``|g_x^2 chi_x^- + g_y^2 chi_y^-|^2``, in s^-2."""
    omega = check_grid(grid)
    c = derive_couplings(p)
    xm = chi_minus(chi_mech(p, "x", omega), chi_mech(p, "x", -omega))
    ym = chi_minus(chi_mech(p, "y", omega), chi_mech(p, "y", -omega))
    values = np.abs(c.g_x**2 * xm + c.g_y**2 * ym) ** 2
    return Spectrum(omega, values, "interference")


def backaction_spectrum(stokes_corrected: Spectrum, antistokes_corrected: Spectrum) -> Spectrum:
    """Stokes minus anti-Stokes displacement spectrum (quantum back-action part)."""
    _check_aligned(stokes_corrected, antistokes_corrected)
    valid = stokes_corrected.valid & antistokes_corrected.valid
    values = np.where(valid, stokes_corrected.values - antistokes_corrected.values, np.nan)
    return Spectrum(stokes_corrected.grid, values, "backaction", valid)


def _check_aligned(a: Spectrum, b: Spectrum):
    if a.grid.shape != b.grid.shape or not np.array_equal(a.grid, b.grid):
        raise ValueError("spectra are defined on different grids")


def _vertex(x, y, i):
    x0, x1, x2 = x[i - 1 : i + 2]
    y0, y1, y2 = y[i - 1 : i + 2]
    denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
    b = (x2**2 * (y0 - y1) + x1**2 * (y2 - y0) + x0**2 * (y1 - y2)) / denom
    if a == 0:
        return x1, y1
    xv = -b / (2 * a)
    cc = y1 - a * x1**2 - b * x1
    return xv, a * xv**2 + b * xv + cc


def locate_minimum(grid, values, window=None):
    """Sub-grid minimum from a parabola through the lowest sample and its neighbours.

    ``window=(lo, hi)`` restricts the search to that grid interval. Returns
    ``(position, value)``; at the window edge the raw sample is returned.
    """
    x = np.asarray(grid, dtype=float)
    y = np.asarray(values, dtype=float)
    mask = np.isfinite(y)
    if window is not None:
        mask &= (x >= window[0]) & (x <= window[1])
    if not np.any(mask):
        raise ValueError("no finite samples in the search window")
    idx = np.flatnonzero(mask)
    i = idx[np.argmin(y[idx])]
    if i == idx[0] or i == idx[-1] or not (mask[i - 1] and mask[i + 1]):
        return float(x[i]), float(y[i])
    xv, yv = _vertex(x, y, i)
    return float(xv), float(yv)


def locate_maximum(grid, values, window=None):
    pos, val = locate_minimum(grid, -np.asarray(values, dtype=float), window)
    return pos, -val
