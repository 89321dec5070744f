"""Drift matrix of the linearised cavity + two-mode mechanics and its normal modes.

State ordering is ``(X_c, P_c, x, p_x, y, p_y)`` with ``X = a + a^dag`` and
``P = -i (a - a^dag)`` (and likewise for the mechanical ladder operators).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import eigvals
from .model import SystemParams, derive_couplings

STATE_LABELS = ("X_c", "P_c", "x", "p_x", "y", "p_y")


class PairingError(ArithmeticError):
    """Eigenvalues could not be grouped into complex-conjugate pairs."""


class UnstableSystemError(RuntimeError):
    """The linear dynamics has an eigenvalue with non-negative real part."""


@dataclass(frozen=True)
class EigenMode:
    frequency: float  # rad/s, |Im lambda|
    decay: float  # rad/s, energy linewidth -2 Re lambda


def build_drift(p: SystemParams) -> np.ndarray:
    c = derive_couplings(p)
    a = np.zeros((6, 6))
    a[0, 0] = a[1, 1] = -p.kappa / 2
    a[0, 1] = -p.delta
    a[1, 0] = p.delta
    a[1, 2] = 2 * c.g_x
    a[1, 4] = 2 * c.g_y
    for j, (big_omega, gamma, g) in enumerate(
        ((p.omega_x, p.gamma_x, c.g_x), (p.omega_y, p.gamma_y, c.g_y)), start=1
    ):
        q = 2 * j
        a[q, q] = a[q + 1, q + 1] = -gamma / 2
        a[q, q + 1] = big_omega
        a[q + 1, q] = -big_omega
        a[q + 1, 0] = 2 * g
    return a


def ladder_drift(p: SystemParams) -> np.ndarray:
    """Complex drift in the ``(a, a^dag, b_x, b_x^dag, b_y, b_y^dag)`` basis."""
    c = derive_couplings(p)
    m = np.zeros((6, 6), dtype=complex)
    m[0, 0] = 1j * p.delta - p.kappa / 2
    m[1, 1] = -1j * p.delta - p.kappa / 2
    for j, (big_omega, gamma, g) in enumerate(
        ((p.omega_x, p.gamma_x, c.g_x), (p.omega_y, p.gamma_y, c.g_y)), start=1
    ):
        q = 2 * j
        m[q, q] = -1j * big_omega - gamma / 2
        m[q + 1, q + 1] = 1j * big_omega - gamma / 2
        m[0, q] = m[0, q + 1] = 1j * g
        m[1, q] = m[1, q + 1] = -1j * g
        m[q, 0] = m[q, 1] = 1j * g
        m[q + 1, 0] = m[q + 1, 1] = -1j * g
    return m


def _pair(lams: np.ndarray, tol: float) -> list[tuple[complex, complex]]:
    remaining = sorted(lams, key=lambda z: (z.imag, z.real))
    pairs = []
    # complex eigenvalues: match each upper-half-plane value with its conjugate
    upper = [z for z in remaining if z.imag > tol]
    lower = [z for z in remaining if z.imag < -tol]
    real = [z for z in remaining if abs(z.imag) <= tol]
    if len(upper) != len(lower) or len(real) % 2:
        raise PairingError(f"eigenvalues do not form conjugate pairs: {lams}")
    for z in upper:
        k = int(np.argmin([abs(z - w.conjugate()) for w in lower]))
        if abs(z - lower[k].conjugate()) > tol:
            raise PairingError(f"no conjugate partner for {z} within {tol:g}")
        pairs.append((z, lower.pop(k)))
    # real eigenvalues (overdamped) are paired in order
    real.sort(key=lambda z: z.real)
    pairs.extend(zip(real[::2], real[1::2]))
    return pairs


def eigenmodes(d: np.ndarray) -> list[EigenMode]:
    """Three normal modes sorted by frequency (ties: smaller decay first)."""
    d = np.asarray(d, dtype=float)
    lams = eigvals(d)
    tol = 1e-8 * np.linalg.norm(d)
    modes = []
    for z1, z2 in _pair(lams, tol):
        modes.append(EigenMode(frequency=abs(z1.imag - z2.imag) / 2, decay=-(z1.real + z2.real)))
    modes.sort(key=lambda m: (m.frequency, m.decay))
    return modes


def is_stable(d: np.ndarray) -> bool:
    return bool(np.all(eigvals(d).real < 0))


def require_stable(p: SystemParams) -> np.ndarray:
    d = build_drift(p)
    if not is_stable(d):
        raise UnstableSystemError("drift matrix has eigenvalues with Re >= 0")
    return d
