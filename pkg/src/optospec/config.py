"""JSON configuration files: parameters in Hz and degrees, converted once here."""

from __future__ import annotations

import json
import math
import warnings
from pathlib import Path

from .fitting import COUPLING_PARAMS, DEFAULT_FREE, FREE_PARAMS, RATE_PARAMS, FitConfig
from .model import TWO_PI, ParameterError, SystemParams, frequency_grid, params_from_couplings
from .oracle import SimConfig

PARAM_KEYS = {
    "kappa_hz",
    "delta_hz",
    "omega_x_hz",
    "omega_y_hz",
    "gamma_x_hz",
    "gamma_y_hz",
    "Gamma_x_hz",
    "Gamma_y_hz",
    "g_max_hz",
    "theta_deg",
    "g_x_hz",
    "g_y_hz",
    "eta",
}
REQUIRED_PARAMS = ("kappa_hz", "delta_hz", "omega_x_hz", "omega_y_hz", "Gamma_x_hz", "Gamma_y_hz")
TOP_KEYS = {"params", "grid", "sim", "fit", "panels", "description"}
GRID_KEYS = {"f_min_hz", "f_max_hz", "points"}
SIM_KEYS = {"dt_s", "duration_s", "segment_length", "segments", "resolution_hz", "seed", "overlap", "window"}
FIT_KEYS = {"free", "bounds", "max_iterations", "tolerance", "shared", "per_panel"}
PANEL_KEYS = {"params", "data"}

DEFAULT_GRID = {"f_min_hz": 50e3, "f_max_hz": 250e3, "points": 2001}


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


def _check_keys(section: dict, allowed: set, where: str, strict: bool):
    if not isinstance(section, dict):
        raise ConfigError(where, "must be a JSON object")
    extra = sorted(set(section) - allowed)
    if not extra:
        return
    name = f"{where}.{extra[0]}" if where else extra[0]
    if strict:
        raise ConfigError(name, "unknown key")
    warnings.warn(f"ignoring unknown config key '{name}'", stacklevel=3)


def _number(section, key, where):
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key}", "must be a number")
    return float(value)


def parse_params(section: dict, *, strict: bool = True, where: str = "params") -> SystemParams:
    _check_keys(section, PARAM_KEYS, where, strict)
    for key in REQUIRED_PARAMS:
        if key not in section:
            raise ConfigError(f"{where}.{key}", "missing")
    values = {k: _number(section, k, where) for k in section if k in PARAM_KEYS}

    by_angle = "g_max_hz" in values or "theta_deg" in values
    by_coupling = "g_x_hz" in values or "g_y_hz" in values
    if by_angle == by_coupling:
        raise ConfigError(f"{where}.g_max_hz", "give either g_max_hz + theta_deg or g_x_hz + g_y_hz")
    needed = ("g_max_hz", "theta_deg") if by_angle else ("g_x_hz", "g_y_hz")
    for key in needed:
        if key not in values:
            raise ConfigError(f"{where}.{key}", "missing")

    gx, gy = values.pop("g_x_hz", None), values.pop("g_y_hz", None)
    if by_coupling:
        values.update(g_max_hz=0.0, theta_deg=90.0)
    try:
        p = SystemParams.from_hz(**values)
        if by_coupling:
            p = params_from_couplings(p, TWO_PI * gx, TWO_PI * gy)
    except ParameterError as exc:
        key = exc.field
        suffix = "_deg" if key == "theta" else "" if key == "eta" else "_hz"
        raise ConfigError(f"{where}.{key}{suffix}", str(exc).split(": ", 1)[-1]) from None
    return p


def parse_grid(section: dict | None, *, strict: bool = True):
    section = dict(DEFAULT_GRID, **(section or {}))
    _check_keys(section, GRID_KEYS, "grid", strict)
    points = section["points"]
    if isinstance(points, bool) or not isinstance(points, int) or points < 2:
        raise ConfigError("grid.points", "must be an integer >= 2")
    f_min = _number(section, "f_min_hz", "grid")
    f_max = _number(section, "f_max_hz", "grid")
    if not f_max > f_min:
        raise ConfigError("grid.f_max_hz", "must exceed f_min_hz")
    return frequency_grid(f_min, f_max, points)


def parse_sim(section: dict | None, p: SystemParams, *, strict: bool = True, seed=None) -> SimConfig:
    section = dict(section or {})
    _check_keys(section, SIM_KEYS, "sim", strict)
    if seed is not None:
        section["seed"] = seed
    if "seed" not in section:
        raise ConfigError("sim.seed", "missing")
    seed_value = section["seed"]
    if isinstance(seed_value, bool) or not isinstance(seed_value, int) or not 0 <= seed_value < 2**64:
        raise ConfigError("sim.seed", "must be a 64-bit unsigned integer")
    overlap = float(section.get("overlap", 0.5))
    window = section.get("window", "hann")
    try:
        if "segments" in section:
            for key in ("dt_s", "duration_s", "segment_length"):
                if key in section:
                    raise ConfigError(f"sim.{key}", "cannot be combined with sim.segments")
            if "resolution_hz" not in section:
                raise ConfigError("sim.resolution_hz", "required together with sim.segments")
            cfg = SimConfig.for_segments(
                p,
                int(section["segments"]),
                _number(section, "resolution_hz", "sim"),
                seed_value,
                overlap=overlap,
            )
        else:
            for key in ("dt_s", "duration_s", "segment_length"):
                if key not in section:
                    raise ConfigError(f"sim.{key}", "missing")
            cfg = SimConfig(
                dt=_number(section, "dt_s", "sim"),
                duration=_number(section, "duration_s", "sim"),
                seed=seed_value,
                segment_length=int(section["segment_length"]),
                overlap=overlap,
                window=window,
            )
        cfg.check_against(p)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("sim", str(exc)) from None
    return cfg


def _to_si(name: str, value: float) -> float:
    if name in RATE_PARAMS or name in COUPLING_PARAMS:
        return TWO_PI * value
    if name == "theta":
        return math.radians(value)
    return value


def from_si(name: str, value: float) -> float:
    """Inverse of the unit conversion applied to fit parameters."""
    if name in RATE_PARAMS or name in COUPLING_PARAMS:
        return value / TWO_PI
    if name == "theta":
        return math.degrees(value)
    return value


def config_key(name: str) -> str:
    """Configuration key of a model parameter (``theta`` -> ``theta_deg``)."""
    if name == "theta":
        return "theta_deg"
    if name == "eta":
        return "eta"
    return f"{name}_hz"


def parse_fit(section: dict | None, initial: SystemParams, *, strict: bool = True) -> FitConfig:
    section = dict(section or {})
    _check_keys(section, FIT_KEYS, "fit", strict)
    free = section.get("free", list(DEFAULT_FREE))
    if not isinstance(free, list):
        raise ConfigError("fit.free", "must be a list of parameter names")
    for name in free:
        if name not in FREE_PARAMS:
            raise ConfigError("fit.free", f"unknown parameter {name!r}")
    bounds = {}
    for name, pair in section.get("bounds", {}).items():
        if name not in FREE_PARAMS:
            raise ConfigError(f"fit.bounds.{name}", "unknown parameter")
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ConfigError(f"fit.bounds.{name}", "must be [lo, hi]")
        lo = -math.inf if pair[0] is None else _to_si(name, float(pair[0]))
        hi = math.inf if pair[1] is None else _to_si(name, float(pair[1]))
        bounds[name] = (lo, hi)
    try:
        return FitConfig(
            free=tuple(free),
            initial=initial,
            bounds=bounds,
            max_iterations=int(section.get("max_iterations", 200)),
            tolerance=float(section.get("tolerance", 1e-6)),
        )
    except ParameterError as exc:
        raise ConfigError(f"fit.{exc.field}", str(exc).split(": ", 1)[-1]) from None


def load(path, *, strict: bool = True) -> dict:
    """Read and validate a configuration file.

    Returns the raw JSON document with a parsed ``SystemParams`` under
    ``"_params"``.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    _check_keys(doc, TOP_KEYS, "", strict)
    if "params" not in doc:
        raise ConfigError("params", "missing")
    doc["_params"] = parse_params(doc["params"], strict=strict)
    if "grid" in doc:
        parse_grid(doc["grid"], strict=strict)
    for i, panel in enumerate(doc.get("panels", [])):
        _check_keys(panel, PANEL_KEYS, f"panels[{i}]", strict)
    return doc


def panel_params(doc: dict, index: int, *, strict: bool = True) -> SystemParams:
    """Base parameters overridden by ``panels[index].params``."""
    merged = dict(doc["params"])
    override = doc["panels"][index].get("params", {})
    if "g_x_hz" in override or "g_y_hz" in override:
        merged.pop("g_max_hz", None)
        merged.pop("theta_deg", None)
    if "g_max_hz" in override or "theta_deg" in override:
        merged.pop("g_x_hz", None)
        merged.pop("g_y_hz", None)
    merged.update(override)
    return parse_params(merged, strict=strict, where=f"panels[{index}].params")


def resolved(p: SystemParams) -> dict:
    """Parameters in configuration units, for provenance records."""
    return p.to_hz()
