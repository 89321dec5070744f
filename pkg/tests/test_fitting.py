import math

import numpy as np
import pytest

from optospec.fitting import (
    DEFAULT_FREE,
    FitConfig,
    FitError,
    finite_difference_jacobian,
    fit_heterodyne,
    fit_joint,
    residuals,
    synthetic_branches,
)
from optospec.model import TWO_PI, ParameterError, derive_couplings, frequency_grid
from optospec.spectra import Spectrum, heterodyne_psd

GRID = frequency_grid(60e3, 200e3, 351)


def clean_data(p):
    return [heterodyne_psd(p, GRID, b) for b in ("upper", "lower")]


def test_no_free_parameters_returns_initial_chi2(fig2d):
    data = synthetic_branches(fig2d, GRID, 0.01, seed=1)
    guess = fig2d.replace(g_max=fig2d.g_max * 1.05)
    res = fit_heterodyne(data, FitConfig((), guess))
    assert res.chi2 == residuals(data, guess)[1]
    assert res.converged and res.iterations == 0
    assert res.estimates is guess


def test_start_at_optimum_stays(fig2d):
    data = clean_data(fig2d)
    res = fit_heterodyne(data, FitConfig(DEFAULT_FREE, fig2d))
    assert res.chi2 == 0.0
    assert res.converged
    assert res.estimates == fig2d


def test_noise_free_recovery(fig2d):
    data = clean_data(fig2d)
    guess = fig2d.replace(g_max=fig2d.g_max * 0.9, theta=math.radians(70), Gamma_x=fig2d.Gamma_x * 1.2)
    res = fit_heterodyne(data, FitConfig(("g_max", "theta", "Gamma_x"), guess))
    assert res.converged
    assert res.estimates.g_max == pytest.approx(fig2d.g_max, rel=1e-5)
    assert res.estimates.theta == pytest.approx(fig2d.theta, abs=1e-5)
    assert res.estimates.Gamma_x == pytest.approx(fig2d.Gamma_x, rel=1e-4)
    assert res.history == sorted(res.history, reverse=True)


def test_chi2_rises_away_from_optimum(fig2d):
    data = synthetic_branches(fig2d, GRID, 0.01, seed=2)
    names = ("g_max", "theta", "Gamma_x", "Gamma_y", "eta")
    res = fit_heterodyne(data, FitConfig(names, fig2d))
    best = res.estimates
    for name in names:
        for factor in (0.95, 1.05):
            value = getattr(best, name) * factor
            if name == "theta":
                value = min(value, math.pi / 2)
            if name == "eta":
                value = min(value, 1.0)
            assert residuals(data, best.replace(**{name: value}))[1] > res.chi2


def test_standard_errors_scale_with_noise(fig2d):
    names = ("g_max", "Gamma_x")
    small = fit_heterodyne(synthetic_branches(fig2d, GRID, 0.005, seed=3), FitConfig(names, fig2d))
    large = fit_heterodyne(synthetic_branches(fig2d, GRID, 0.02, seed=3), FitConfig(names, fig2d))
    ratio = large.std_errors["g_max"] / small.std_errors["g_max"]
    assert 2.5 < ratio < 6
    assert small.covariance.shape == (2, 2)


def test_bounds_are_respected(fig2d):
    data = clean_data(fig2d)
    hi = fig2d.g_max * 0.95
    guess = fig2d.replace(g_max=hi * 0.99)
    res = fit_heterodyne(data, FitConfig(("g_max",), guess, bounds={"g_max": (0.0, hi)}))
    assert res.estimates.g_max <= hi
    assert res.at_bound["g_max"]


def test_coupling_parameters(fig2d):
    data = clean_data(fig2d)
    c = derive_couplings(fig2d)
    guess = fig2d.replace(g_max=fig2d.g_max * 1.05, theta=fig2d.theta * 0.97)
    res = fit_heterodyne(data, FitConfig(("g_x", "g_y"), guess))
    assert res.values["g_x"] == pytest.approx(c.g_x, rel=1e-5)
    assert res.values["g_y"] == pytest.approx(c.g_y, rel=1e-5)


def test_config_validation(fig2d):
    with pytest.raises(ParameterError):
        FitConfig(("nonsense",), fig2d)
    with pytest.raises(ParameterError):
        FitConfig(("g_x",), fig2d)
    with pytest.raises(ParameterError):
        FitConfig(("g_x", "g_y", "theta"), fig2d)
    with pytest.raises(ParameterError):
        FitConfig(("g_max", "g_max"), fig2d)
    with pytest.raises(ParameterError):
        FitConfig(("g_max",), fig2d, bounds={"g_max": (0.0, 1.0)})


def test_parameter_without_effect_is_reported(fig2d):
    p = fig2d.replace(g_max=0.0)
    with pytest.raises(FitError):
        fit_heterodyne(clean_data(p), FitConfig(("eta",), p))


def test_invalid_points_carry_no_weight(fig2d):
    data = clean_data(fig2d)
    bad = data[0].values.copy()
    bad[10] = np.nan
    valid = np.isfinite(bad)
    flagged = Spectrum(GRID, bad, "heterodyne", valid, meta={"branch": "upper"})
    r, chi2 = residuals([flagged, data[1]], fig2d)
    assert chi2 == 0.0 and r.size == 2 * GRID.size
    with pytest.raises(ValueError):
        residuals([Spectrum(GRID, bad * 0 + 1, "bright_mode_psd")], fig2d)


def test_forward_jacobian_steps_inside_bounds():
    fun = lambda x: np.array([x[0] ** 2, 3 * x[1]])  # noqa: E731
    jac = finite_difference_jacobian(fun, np.array([1.0, 2.0]), [1e-6, 1e-6], hi=np.array([1.0, 10.0]))
    assert jac[0, 0] == pytest.approx(2.0, rel=1e-5)
    assert jac[1, 1] == pytest.approx(3.0)


def test_joint_fit_shares_parameters(fig2d):
    thetas = (67.0, 81.0)
    deltas = (-130e3, -110e3)
    panels = []
    for th, d in zip(thetas, deltas):
        truth = fig2d.replace(theta=math.radians(th), delta=TWO_PI * d)
        guess = truth.replace(g_max=fig2d.g_max * 1.05, theta=math.radians(th - 2), Gamma_x=fig2d.Gamma_x * 0.9)
        panels.append((synthetic_branches(truth, GRID, 0.005, seed=int(th)), guess))
    res = fit_joint(panels, ("g_max", "Gamma_x"), ("theta",))
    assert res.converged
    assert res.shared["g_max"] == pytest.approx(fig2d.g_max, rel=0.01)
    assert res.shared["Gamma_x"] == pytest.approx(fig2d.Gamma_x, rel=0.1)
    for q, th in zip(res.panels, thetas):
        assert math.degrees(q.theta) == pytest.approx(th, abs=0.5)
    assert "theta[1]" in res.names
    with pytest.raises(ParameterError):
        fit_joint(panels, ("g_max",), ("g_max",))
