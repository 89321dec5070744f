"""Weighted least-squares fits of the heterodyne model to measured spectra.

The optimiser is a small Levenberg-Marquardt loop with a forward-difference
Jacobian and bounds enforced by projection. Parameters are handled in SI
units (rad/s, rad) and rescaled to O(1) internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import GAMMA_FLOOR, TWO_PI, ParameterError, SystemParams, derive_couplings, params_from_couplings
from .spectra import Spectrum, heterodyne_psd

RATE_PARAMS = ("g_max", "delta", "kappa", "Gamma_x", "Gamma_y", "gamma_x", "gamma_y", "omega_x", "omega_y")
COUPLING_PARAMS = ("g_x", "g_y")
FREE_PARAMS = RATE_PARAMS + ("theta", "eta") + COUPLING_PARAMS
# cavity linewidth and bare trap frequencies are usually calibrated separately
DEFAULT_FREE = ("g_max", "theta", "Gamma_x", "Gamma_y", "eta", "delta")

_DEFAULT_BOUNDS = {
    "g_max": (0.0, math.inf),
    "delta": (-math.inf, math.inf),
    "kappa": (1e-9, math.inf),
    "Gamma_x": (0.0, math.inf),
    "Gamma_y": (0.0, math.inf),
    "gamma_x": (GAMMA_FLOOR, math.inf),
    "gamma_y": (GAMMA_FLOOR, math.inf),
    "omega_x": (1e-9, math.inf),
    "omega_y": (1e-9, math.inf),
    "theta": (0.0, math.pi / 2),
    "eta": (1e-9, 1.0),
    "g_x": (0.0, math.inf),
    "g_y": (0.0, math.inf),
}


class FitError(RuntimeError):
    pass


def _unit(name: str) -> float:
    return TWO_PI * 1e3 if name in RATE_PARAMS + COUPLING_PARAMS else 1.0


def _step_floor(name: str) -> float:
    return TWO_PI * 1e-3 if name in RATE_PARAMS + COUPLING_PARAMS else 1e-9


@dataclass(frozen=True)
class FitConfig:
    free: tuple
    initial: SystemParams
    bounds: dict = field(default_factory=dict)
    max_iterations: int = 200
    tolerance: float = 1e-6

    def __post_init__(self):
        free = tuple(self.free)
        object.__setattr__(self, "free", free)
        unknown = [n for n in free if n not in FREE_PARAMS]
        if unknown:
            raise ParameterError(unknown[0], "not a fittable parameter")
        if len(set(free)) != len(free):
            raise ParameterError("free", "duplicate parameter names")
        couplings = [n for n in free if n in COUPLING_PARAMS]
        if couplings and (len(couplings) != 2 or {"g_max", "theta"} & set(free)):
            raise ParameterError("free", "g_x and g_y must be freed together and replace g_max/theta")
        if not self.tolerance > 0:
            raise ParameterError("tolerance", "must be > 0")
        if self.max_iterations < 0:
            raise ParameterError("max_iterations", "must be >= 0")
        for name in free:
            lo, hi = self.bound(name)
            if not lo <= _get(self.initial, name) <= hi:
                raise ParameterError(name, f"initial value outside bounds [{lo}, {hi}]")

    def bound(self, name: str) -> tuple:
        lo, hi = self.bounds.get(name, _DEFAULT_BOUNDS[name])
        dlo, dhi = _DEFAULT_BOUNDS[name]
        return max(lo, dlo), min(hi, dhi)


@dataclass
class FitResult:
    estimates: SystemParams
    std_errors: dict
    chi2: float
    iterations: int
    converged: bool
    covariance: np.ndarray
    free: tuple = ()
    values: dict = field(default_factory=dict)
    at_bound: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    message: str = ""


def _get(p: SystemParams, name: str) -> float:
    if name in COUPLING_PARAMS:
        return getattr(derive_couplings(p), name)
    return getattr(p, name)


def _apply(p: SystemParams, names, values) -> SystemParams:
    changes = dict(zip(names, (float(v) for v in values)))
    gx, gy = changes.pop("g_x", None), changes.pop("g_y", None)
    if changes:
        p = p.replace(**changes)
    if gx is not None:
        p = params_from_couplings(p, gx, gy)
    return p


def model_spectra(data, p: SystemParams) -> list[Spectrum]:
    return [heterodyne_psd(p, s.grid, s.meta["branch"]) for s in data]


def residuals(data, p: SystemParams):
    """Weighted residual vector and chi2 for heterodyne branch data.

    Weights are ``1 / max(data, 1)^2``; points flagged invalid get weight 0.
    """
    if isinstance(data, Spectrum):
        data = [data]
    parts = []
    for s in data:
        if s.kind != "heterodyne" or s.meta.get("branch") not in ("upper", "lower"):
            raise ValueError("data must be heterodyne spectra with a branch label")
        model = heterodyne_psd(p, s.grid, s.meta["branch"])
        if model.grid.shape != s.grid.shape or not np.array_equal(model.grid, s.grid):
            raise ValueError("model and data grids are not aligned")
        # square root of the weight 1 / max(data, 1)^2
        root_w = np.where(s.valid, 1.0 / np.maximum(np.where(s.valid, s.values, 1.0), 1.0), 0.0)
        diff = np.where(s.valid, s.values - model.values, 0.0)
        parts.append(root_w * diff)
    r = np.concatenate(parts)
    return r, float(r @ r)


def finite_difference_jacobian(fun, x, steps, lo=None, hi=None, *, central=False):
    """Jacobian of a vector function by forward (or central) differences.

    Forward steps that would leave ``[lo, hi]`` are taken backwards instead.
    """
    x = np.asarray(x, dtype=float)
    f0 = fun(x)
    jac = np.empty((f0.size, x.size))
    for j, h in enumerate(steps):
        if central:
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            jac[:, j] = (fun(xp) - fun(xm)) / (2 * h)
            continue
        if hi is not None and x[j] + h > hi[j]:
            h = -h
        xs = x.copy()
        xs[j] += h
        jac[:, j] = (fun(xs) - f0) / h
    return jac


def _levenberg_marquardt(fun, x0, lo, hi, steps, scale, max_iter, tol):
    """Minimise ``|fun(x)|^2`` within a box. Returns a dict of results."""
    x = np.array(x0, dtype=float)
    r = fun(x)
    chi2 = float(r @ r)
    history = [chi2]
    lam = 1e-3
    converged = False
    message = "maximum iterations reached"
    it = 0
    for it in range(1, max_iter + 1):
        jac = finite_difference_jacobian(fun, x, steps, lo, hi) * scale
        a = jac.T @ jac
        g = jac.T @ r
        diag = np.diag(a).copy()
        dead = np.flatnonzero(diag == 0)
        if dead.size:
            raise FitError(f"normal equations singular: parameter index {dead[0]} has no effect")
        accepted = False
        solved = False
        step = np.zeros_like(x)
        while lam < 1e16:
            try:
                dz = np.linalg.solve(a + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            solved = True
            x_new = np.clip(x + dz * scale, lo, hi)
            step = (x_new - x) / scale
            r_new = fun(x_new)
            chi2_new = float(r_new @ r_new)
            if np.isfinite(chi2_new) and chi2_new < chi2:
                accepted = True
                break
            if np.max(np.abs(step) / np.maximum(np.abs(x) / scale, 1.0)) < tol:
                # the model cannot be improved at this resolution
                break
            lam *= 10
        if not solved:
            raise FitError("normal equations remained singular under maximal damping")
        rel_step = float(np.max(np.abs(step) / np.maximum(np.abs(x) / scale, 1.0)))
        if accepted:
            x, r, chi2 = x_new, r_new, chi2_new
            history.append(chi2)
            lam = max(lam / 10, 1e-12)
        if rel_step < tol:
            converged = True
            message = "relative step below tolerance"
            break
        if not accepted:
            message = "no chi2 decrease possible"
            break
    jac = finite_difference_jacobian(fun, x, steps, lo, hi)
    return {
        "x": x,
        "r": r,
        "chi2": chi2,
        "jac": jac,
        "iterations": it if max_iter else 0,
        "converged": converged,
        "history": history,
        "message": message,
    }


def _covariance(jac, chi2, n_points):
    k = jac.shape[1]
    dof = max(n_points - k, 1)
    cov = np.linalg.pinv(jac.T @ jac) * (chi2 / dof)
    return 0.5 * (cov + cov.T)


def _finish(raw, names, lo, hi, n_points):
    cov = _covariance(raw["jac"], raw["chi2"], n_points) if names else np.zeros((0, 0))
    std = {n: float(math.sqrt(max(cov[i, i], 0.0))) for i, n in enumerate(names)}
    x = raw["x"]
    span = np.where(np.isfinite(hi - lo), hi - lo, np.abs(x) + 1.0)
    at_bound = {
        n: bool(abs(x[i] - lo[i]) <= 1e-9 * span[i] or abs(hi[i] - x[i]) <= 1e-9 * span[i])
        for i, n in enumerate(names)
    }
    return cov, std, at_bound


def fit_heterodyne(data, cfg: FitConfig) -> FitResult:
    """Fit one or two heterodyne branches by damped least squares."""
    if isinstance(data, Spectrum):
        data = [data]
    names = cfg.free
    x0 = np.array([_get(cfg.initial, n) for n in names])
    lo = np.array([cfg.bound(n)[0] for n in names])
    hi = np.array([cfg.bound(n)[1] for n in names])
    n_points = sum(int(np.count_nonzero(s.valid)) for s in data)

    if not names:
        _, chi2 = residuals(data, cfg.initial)
        return FitResult(cfg.initial, {}, chi2, 0, True, np.zeros((0, 0)), (), {}, {}, [chi2],
                         "no free parameters")

    def fun(x):
        try:
            return residuals(data, _apply(cfg.initial, names, x))[0]
        except (ParameterError, ArithmeticError):
            return np.full(n_points, np.inf)

    steps = np.array([max(1e-6 * abs(v), _step_floor(n)) for n, v in zip(names, x0)])
    scale = np.array([abs(v) if v != 0 else _unit(n) for n, v in zip(names, x0)])
    raw = _levenberg_marquardt(fun, x0, lo, hi, steps, scale, cfg.max_iterations, cfg.tolerance)
    cov, std, at_bound = _finish(raw, names, lo, hi, n_points)
    return FitResult(
        estimates=_apply(cfg.initial, names, raw["x"]),
        std_errors=std,
        chi2=raw["chi2"],
        iterations=raw["iterations"],
        converged=raw["converged"],
        covariance=cov,
        free=names,
        values=dict(zip(names, map(float, raw["x"]))),
        at_bound=at_bound,
        history=raw["history"],
        message=raw["message"],
    )


@dataclass
class JointFitResult:
    panels: list
    shared: dict
    std_errors: dict
    chi2: float
    iterations: int
    converged: bool
    covariance: np.ndarray
    names: tuple
    history: list = field(default_factory=list)
    message: str = ""


def fit_joint(
    panels,
    shared,
    per_panel,
    *,
    bounds=None,
    max_iterations: int = 200,
    tolerance: float = 1e-6,
) -> JointFitResult:
    """Fit several data sets at once with shared and per-panel free parameters.

    ``panels`` is a sequence of ``(data, initial_params)`` pairs. Shared
    parameters start from the mean of the panels' initial values. Per-panel
    entries in the result are named ``"theta[2]"`` etc.
    """
    shared, per_panel = tuple(shared), tuple(per_panel)
    if set(shared) & set(per_panel):
        raise ParameterError("shared", "a parameter cannot be both shared and per-panel")
    for n in shared + per_panel:
        if n not in FREE_PARAMS or n in COUPLING_PARAMS:
            raise ParameterError(n, "not a fittable joint parameter")
    bounds = bounds or {}
    cfg_bounds = FitConfig((), panels[0][1], bounds)

    names = list(shared)
    x0 = [float(np.mean([getattr(p, n) for _, p in panels])) for n in shared]
    for k, (_, p) in enumerate(panels):
        for n in per_panel:
            names.append(f"{n}[{k}]")
            x0.append(getattr(p, n))
    base_names = list(shared) + [n for _ in panels for n in per_panel]
    x0 = np.array(x0)
    lo = np.array([cfg_bounds.bound(n)[0] for n in base_names])
    hi = np.array([cfg_bounds.bound(n)[1] for n in base_names])
    x0 = np.clip(x0, lo, hi)
    datas = [[d] if isinstance(d, Spectrum) else list(d) for d, _ in panels]
    n_points = sum(int(np.count_nonzero(s.valid)) for d in datas for s in d)

    def panel_params(x):
        out = []
        ns = len(shared)
        for k, (_, p) in enumerate(panels):
            own = x[ns + k * len(per_panel) : ns + (k + 1) * len(per_panel)]
            out.append(_apply(p, shared + per_panel, np.concatenate([x[:ns], own])))
        return out

    def fun(x):
        try:
            return np.concatenate([residuals(d, p)[0] for d, p in zip(datas, panel_params(x))])
        except (ParameterError, ArithmeticError):
            return np.full(n_points, np.inf)

    steps = np.array([max(1e-6 * abs(v), _step_floor(n)) for n, v in zip(base_names, x0)])
    scale = np.array([abs(v) if v != 0 else _unit(n) for n, v in zip(base_names, x0)])
    raw = _levenberg_marquardt(fun, x0, lo, hi, steps, scale, max_iterations, tolerance)
    cov, std, _ = _finish(raw, names, lo, hi, n_points)
    return JointFitResult(
        panels=panel_params(raw["x"]),
        shared=dict(zip(shared, map(float, raw["x"][: len(shared)]))),
        std_errors=std,
        chi2=raw["chi2"],
        iterations=raw["iterations"],
        converged=raw["converged"],
        covariance=cov,
        names=tuple(names),
        history=raw["history"],
        message=raw["message"],
    )


def synthetic_branches(p: SystemParams, grid, noise: float, seed: int) -> list[Spectrum]:
    """Both heterodyne branches with multiplicative Gaussian noise of relative size ``noise``."""
    rng = np.random.Generator(np.random.Philox(seed))
    out = []
    for branch in ("upper", "lower"):
        s = heterodyne_psd(p, grid, branch)
        noisy = s.values * (1.0 + noise * rng.standard_normal(s.values.size))
        out.append(Spectrum(s.grid, noisy, "heterodyne", meta={"branch": branch}))
    return out
