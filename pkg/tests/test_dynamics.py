import math

import numpy as np
import pytest
from conftest import config_params

from optospec.dynamics import (
    PairingError,
    UnstableSystemError,
    _pair,
    build_drift,
    eigenmodes,
    is_stable,
    ladder_drift,
    require_stable,
)
from optospec.model import TWO_PI, SystemParams

KHZ = TWO_PI * 1e3


def test_trace_is_total_damping(fig2d):
    d = build_drift(fig2d)
    assert np.trace(d) == pytest.approx(-(fig2d.kappa + fig2d.gamma_x + fig2d.gamma_y))


def test_ladder_and_quadrature_bases_agree(fig2d):
    a = np.linalg.eigvals(build_drift(fig2d))
    b = list(np.linalg.eigvals(ladder_drift(fig2d)))
    for z in a:
        k = int(np.argmin([abs(z - w) for w in b]))
        assert abs(z - b.pop(k)) < 1e-10 * abs(z)


def test_decoupled_modes_are_bare_values():
    p = config_params("decoupled")
    modes = eigenmodes(build_drift(p))
    got = sorted((m.frequency, m.decay) for m in modes)
    expected = sorted([
        (abs(p.delta), p.kappa),
        (p.omega_x, p.gamma_x),
        (p.omega_y, p.gamma_y),
    ])
    for (f, d), (fe, de) in zip(got, expected):
        assert f == pytest.approx(fe, rel=1e-14)
        assert d == pytest.approx(de, rel=1e-9)


def test_all_fig2_panels_stable_with_middle_mode_near_dark():
    for letter in "abcdef":
        p = config_params(f"fig2{letter}")
        d = build_drift(p)
        assert is_stable(d)
        modes = eigenmodes(d)
        assert len(modes) == 3
        assert modes[0].frequency < modes[1].frequency < modes[2].frequency
        assert abs(modes[1].frequency - TWO_PI * 120e3) < 3 * KHZ


def test_blue_detuning_is_unstable():
    p = config_params("blue_unstable")
    assert not is_stable(build_drift(p))
    with pytest.raises(UnstableSystemError):
        require_stable(p)


def test_degenerate_strong_coupling_splitting():
    """Delta = -Omega_x, theta = 90: polaritons at Omega_x +/- sqrt(g^2 - (kappa/4 - gamma/4)^2)."""
    g = 15 * KHZ
    p = SystemParams.from_hz(
        kappa_hz=20e3, delta_hz=-131e3, omega_x_hz=131e3, omega_y_hz=120e3,
        Gamma_x_hz=0.0, Gamma_y_hz=0.0, g_max_hz=15e3, theta_deg=90.0,
    )
    modes = eigenmodes(build_drift(p))
    pol = [m.frequency for m in modes if abs(m.frequency - p.omega_y) > 0.5 * KHZ]
    split = (pol[1] - pol[0]) / 2
    expected = math.sqrt(g**2 - ((p.kappa - p.gamma_x) / 4) ** 2)
    # counter-rotating terms shift this by O(g^2 / Omega)
    assert split == pytest.approx(expected, rel=0.02)


def test_pairing_rejects_unpaired_values():
    with pytest.raises(PairingError):
        _pair(np.array([1 + 1j, 2 - 1j, 3 + 0j, 4 + 0j]), 1e-9)
    pairs = _pair(np.array([-1 + 2j, -1 - 2j, -3 + 0j, -5 + 0j]), 1e-9)
    assert len(pairs) == 2
