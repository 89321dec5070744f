import numpy as np
import pytest
from conftest import config_params

from optospec.dynamics import build_drift, eigenmodes
from optospec.model import TWO_PI, derive_couplings, frequency_grid
from optospec.spectra import (
    Spectrum,
    SpectrumEvaluationError,
    asymmetry_from_data,
    asymmetry_model,
    backaction_spectrum,
    bright_mode_psd,
    bright_mode_terms,
    cavity_correction,
    displacement_from_heterodyne,
    force_asymmetry,
    heterodyne_psd,
    interference_term,
    locate_maximum,
    locate_minimum,
    one_d_psd,
)

KHZ = TWO_PI * 1e3
GRID = frequency_grid(50e3, 250e3, 2001)


def test_uncoupled_heterodyne_is_shot_noise(fig2d):
    p = fig2d.replace(g_max=0.0)
    for branch in ("upper", "lower"):
        s = heterodyne_psd(p, GRID, branch)
        assert np.all(s.values == 1.0)
        assert s.meta["branch"] == branch


def test_uncoupled_asymmetry_is_one(fig2d):
    a = asymmetry_model(fig2d.replace(g_max=0.0), GRID)
    assert np.allclose(a.values, 1.0, rtol=1e-12)


def test_terms_sum_to_psd(fig2d):
    thermal, vacuum = bright_mode_terms(fig2d, GRID)
    assert np.allclose(thermal + vacuum, bright_mode_psd(fig2d, GRID).values, rtol=1e-14)
    assert np.all(thermal > 0) and np.all(vacuum >= 0)


def test_thermal_part_is_even(fig2d):
    thermal_pos, _ = bright_mode_terms(fig2d, GRID)
    thermal_neg, _ = bright_mode_terms(fig2d, -GRID)
    assert np.allclose(thermal_pos, thermal_neg, rtol=1e-12)


def test_red_detuning_favours_stokes(fig2d):
    stokes = bright_mode_psd(fig2d, -GRID[::-1]).values[::-1]
    antistokes = bright_mode_psd(fig2d, GRID).values
    assert np.all(stokes >= antistokes)


def test_one_d_limit_is_theta_ninety(fig2d):
    p = fig2d.replace(theta=np.pi / 2)
    assert np.array_equal(one_d_psd(fig2d, GRID).values, bright_mode_psd(p, GRID).values)


def test_one_d_asymmetry_equals_force_ratio_without_thermal_noise(fig2d):
    """Exact only for Gamma = 0: the thermal term is not a multiple of |chi_eff|^2."""
    p = fig2d.replace(theta=np.pi / 2, Gamma_x=0.0, Gamma_y=0.0)
    a = asymmetry_model(p, GRID).values
    assert np.allclose(a, force_asymmetry(p, GRID), rtol=1e-9)


def test_heterodyne_roundtrip_recovers_asymmetry(fig2d):
    lower = heterodyne_psd(fig2d, GRID, "lower")
    upper = heterodyne_psd(fig2d, GRID, "upper")
    measured = asymmetry_from_data(lower, upper, fig2d)
    model = asymmetry_model(fig2d, GRID)
    assert np.all(measured.valid)
    assert np.allclose(measured.values, model.values, rtol=1e-9)


def test_displacement_from_heterodyne(fig2d):
    s = displacement_from_heterodyne(fig2d, heterodyne_psd(fig2d, GRID, "upper"))
    assert np.allclose(s.values, bright_mode_psd(fig2d, GRID).values, rtol=1e-9)
    with pytest.raises(ValueError):
        displacement_from_heterodyne(fig2d, Spectrum(GRID, np.ones_like(GRID), "heterodyne"))


def test_asymmetry_from_data_flags_shot_noise_points(fig2d):
    lower = heterodyne_psd(fig2d, GRID, "lower")
    flat = Spectrum(GRID, np.ones_like(GRID), "heterodyne", meta={"branch": "upper"})
    a = asymmetry_from_data(lower, flat, fig2d)
    assert not np.any(a.valid)
    assert np.all(np.isnan(a.values))
    assert len(a) == len(GRID)


def test_cavity_correction_at_detuning():
    p = config_params("fig2d")
    assert cavity_correction(p, np.array([-p.delta]))[0] == pytest.approx(
        ((2 * p.delta) ** 2 + p.kappa**2 / 4) / (p.kappa**2 / 4)
    )


def test_fig2_asymmetry_peaks_near_detuning():
    for letter in "abcdef":
        p = config_params(f"fig2{letter}")
        a = asymmetry_model(p, GRID)
        pos, val = locate_maximum(GRID, a.values)
        assert 4 <= val <= 9
        assert abs(pos + p.delta) < 10 * KHZ


def test_interference_dip_at_dark_mode():
    p = config_params("fig3")
    c = derive_couplings(p)
    grid = frequency_grid(100e3, 150e3, 50001)
    s = interference_term(p, grid)
    pos, val = locate_minimum(grid, s.values)
    assert abs(pos - c.omega_d) < TWO_PI * 5.0
    assert val < 1e-6 * np.max(s.values)


def test_backaction_vanishes_at_dark_mode():
    p = config_params("fig3")
    c = derive_couplings(p)
    w = np.array([c.omega_d])
    stokes = bright_mode_psd(p, -w).values
    anti = bright_mode_psd(p, w).values
    assert abs(stokes - anti)[0] < 1e-4 * stokes[0]


def test_backaction_rejects_mismatched_grids(fig2d):
    a = Spectrum(GRID, np.ones_like(GRID), "bright_mode_psd")
    b = Spectrum(GRID * 1.01, np.ones_like(GRID), "bright_mode_psd")
    with pytest.raises(ValueError):
        backaction_spectrum(a, b)


def test_fig1b_three_features():
    """Three maxima in the displacement PSD; the cavity filter turns the lower
    polariton into a shoulder of the anti-Stokes heterodyne trace."""
    p = config_params("fig1b")
    grid = frequency_grid(60e3, 200e3, 1401)
    modes = eigenmodes(build_drift(p))
    s = bright_mode_psd(p, grid).values
    peaks = np.flatnonzero((s[1:-1] > s[:-2]) & (s[1:-1] > s[2:])) + 1
    assert len(peaks) == 3
    for i, m in zip(peaks, modes):
        assert abs(grid[i] - m.frequency) < 3 * KHZ

    h = heterodyne_psd(p, grid, "upper").values
    central, _ = locate_maximum(grid, h, (modes[1].frequency - 2 * KHZ, modes[1].frequency + 2 * KHZ))
    assert abs(central - modes[1].frequency) < 1 * KHZ
    # the filter, centred at -delta, pulls the broad upper peak towards it
    upper_peak, _ = locate_maximum(grid, h, (130 * KHZ, 160 * KHZ))
    assert -p.delta < upper_peak < modes[2].frequency
    assert abs(upper_peak - modes[2].frequency) < 8 * KHZ
    # shoulder: curvature of the trace changes sign near the lower polariton
    d2 = np.diff(h, 2)
    near = np.abs(grid[1:-1] - modes[0].frequency) < 4 * KHZ
    assert np.any(d2[near] < 0)


def test_locate_minimum_subgrid():
    x = np.linspace(0, 1, 11)
    y = (x - 0.4321) ** 2 + 2
    pos, val = locate_minimum(x, y)
    assert pos == pytest.approx(0.4321, abs=1e-12)
    assert val == pytest.approx(2.0)
    pos, _ = locate_minimum(x, y, window=(0.6, 1.0))
    assert pos == pytest.approx(0.6)


def test_spectrum_validation():
    with pytest.raises(ValueError):
        Spectrum(GRID, np.ones(3), "bright_mode_psd")
    with pytest.raises(ValueError):
        Spectrum(GRID, np.ones_like(GRID), "nonsense")
    with pytest.raises(ValueError):
        Spectrum(GRID, np.full_like(GRID, np.nan), "bright_mode_psd")


def test_heterodyne_requires_positive_grid(fig2d):
    with pytest.raises(ValueError):
        heterodyne_psd(fig2d, frequency_grid(-1e3, 1e3, 5), "upper")
    with pytest.raises(ValueError):
        heterodyne_psd(fig2d, GRID, "middle")


def test_nonfinite_values_raise(fig2d):
    huge = fig2d.replace(g_max=1e200)
    with pytest.raises((SpectrumEvaluationError, ValueError, OverflowError)):
        bright_mode_psd(huge, GRID)
