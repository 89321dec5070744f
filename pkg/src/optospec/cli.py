"""Command-line front end: ``optospec {spectrum|asymmetry|eigen|simulate|fit|sweep}``.

Every command reads a JSON configuration, writes plot-ready CSV or JSON and
records the resolved configuration next to (or inside) each output.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 unstable
parameters, 4 fit did not converge (the result is still written).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .config import ConfigError
from .dynamics import STATE_LABELS, UnstableSystemError, build_drift, eigenmodes, is_stable
from .fitting import FitError, fit_heterodyne, fit_joint
from .linalg import eigvals
from .model import TWO_PI, ParameterError, SystemParams, derive_couplings
from .oracle import RNG_ALGORITHM, bright_projection, simulate_trajectory, welch_psd
from .spectra import (
    Spectrum,
    asymmetry_model,
    bright_mode_psd,
    heterodyne_psd,
    interference_term,
    locate_minimum,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNSTABLE = 3
EXIT_NOT_CONVERGED = 4

SPECTRUM_KINDS = ("bright", "heterodyne-upper", "heterodyne-lower", "interference")
SWEEP_KINDS = ("stokes", "antistokes", "asymmetry", "interference", "heterodyne-upper", "heterodyne-lower")
SWEEP_PARAMS = ("theta", "delta", "g_max", "kappa", "Gamma_x", "Gamma_y", "omega_x", "omega_y", "eta")


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def fmt(value) -> str:
    """Shortest round-trip decimal form of a float."""
    return repr(float(value))


def write_csv(path: Path, columns, header):
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n")


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def provenance(doc: dict, p: SystemParams, command: str, **extra) -> dict:
    """Fully resolved configuration for an output file."""
    out = {
        "command": command,
        "version": __version__,
        "params": cfgmod.resolved(p),
        "derived": _derived_hz(p),
    }
    if "grid" in doc or command in ("spectrum", "asymmetry", "sweep"):
        out["grid"] = dict(cfgmod.DEFAULT_GRID, **doc.get("grid", {}))
    out.update(extra)
    return out


def _derived_hz(p: SystemParams) -> dict:
    c = derive_couplings(p)
    return {
        "g_x_hz": c.g_x / TWO_PI,
        "g_y_hz": c.g_y / TWO_PI,
        "g_b_hz": c.g_b / TWO_PI,
        "omega_b_hz": c.omega_b / TWO_PI,
        "omega_d_hz": c.omega_d / TWO_PI,
        "C_Q": c.C_Q,
    }


def thread_count() -> int:
    raw = os.environ.get("OPTOSPEC_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("OPTOSPEC_THREADS", "must be a positive integer") from None
    if n < 1:
        raise ConfigError("OPTOSPEC_THREADS", "must be a positive integer")
    return n


def _require_stable(p: SystemParams):
    if not is_stable(build_drift(p)):
        raise UnstableSystemError("parameters give an unstable drift matrix")


def _positive_grid(omega):
    if omega[0] <= 0:
        raise ConfigError("grid.f_min_hz", "must be > 0 for this output")
    return omega


def evaluate(p: SystemParams, omega, kind: str) -> Spectrum:
    """One curve of the given CLI kind on the angular grid ``omega``."""
    if kind == "bright":
        return bright_mode_psd(p, omega)
    if kind == "interference":
        return interference_term(p, omega)
    if kind == "asymmetry":
        return asymmetry_model(p, _positive_grid(omega))
    if kind in ("heterodyne-upper", "heterodyne-lower"):
        return heterodyne_psd(p, _positive_grid(omega), kind.split("-")[1])
    if kind == "stokes":
        omega = _positive_grid(omega)
        mirrored = bright_mode_psd(p, -omega[::-1])
        return Spectrum(omega, mirrored.values[::-1], "bright_mode_psd", meta={"branch": "lower"})
    if kind == "antistokes":
        return bright_mode_psd(p, _positive_grid(omega))
    raise ValueError(f"unknown kind {kind!r}")


def _load(args):
    doc = cfgmod.load(args.config, strict=not args.allow_unknown)
    return doc, doc["_params"]


def _grid(doc, args):
    return cfgmod.parse_grid(doc.get("grid"), strict=not args.allow_unknown)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_spectrum(args) -> int:
    doc, p = _load(args)
    omega = _grid(doc, args)
    _require_stable(p)
    s = evaluate(p, omega, args.kind)
    out = Path(args.out)
    write_csv(out, (s.f_hz, s.values), ("f_hz", "value"))
    write_json(sidecar_path(out), provenance(doc, p, "spectrum", kind=args.kind))
    return EXIT_OK


def cmd_asymmetry(args) -> int:
    doc, p = _load(args)
    omega = _grid(doc, args)
    _require_stable(p)
    s = evaluate(p, omega, "asymmetry")
    out = Path(args.out)
    write_csv(out, (s.f_hz, s.values), ("f_hz", "A"))
    write_json(sidecar_path(out), provenance(doc, p, "asymmetry"))
    return EXIT_OK


def cmd_eigen(args) -> int:
    doc, p = _load(args)
    d = build_drift(p)
    lams = eigvals(d)
    result = {
        "stable": bool(np.all(lams.real < 0)),
        "modes": [
            {"frequency_hz": m.frequency / TWO_PI, "decay_hz": m.decay / TWO_PI}
            for m in eigenmodes(d)
        ],
        "eigenvalues_hz": sorted(
            ([z.real / TWO_PI, z.imag / TWO_PI] for z in lams), key=lambda v: (v[1], v[0])
        ),
        "config": provenance(doc, p, "eigen"),
    }
    write_json(Path(args.out), result)
    return EXIT_OK


def cmd_simulate(args) -> int:
    doc, p = _load(args)
    if "sim" not in doc and args.seed is None:
        raise ConfigError("sim", "missing")
    sim = cfgmod.parse_sim(doc.get("sim"), p, strict=not args.allow_unknown, seed=args.seed)
    _require_stable(p)

    initial = None
    if args.initial_x is not None:
        initial = np.zeros(6)
        initial[STATE_LABELS.index("x")] = args.initial_x
    proj = bright_projection(p)
    if args.stride > 0:
        observables = None
    else:
        observables = {"bright": proj}
    traj = simulate_trajectory(
        p, sim, noise=not args.no_noise, initial_state=initial, observables=observables
    )
    bright = traj.values @ proj if observables is None else traj.values[:, 0]
    psd = welch_psd(bright, sim)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = provenance(
        doc,
        p,
        "simulate",
        sim=sim.as_dict(),
        seed=int(sim.seed),
        rng=RNG_ALGORITHM,
        noise=not args.no_noise,
        initial_x=args.initial_x,
        trajectory_stride=args.stride,
        welch_segments=psd.meta["segments"],
        psd_ordering=psd.meta["ordering"],
        psd_units="per Hz, two-sided, of the bright-mode displacement",
    )
    if args.stride > 0:
        _write_trajectory(out / "trajectory.csv", traj, args.stride, run)
    write_csv(out / "psd.csv", (psd.f_hz, psd.values), ("f_hz", "value"))
    write_json(out / "run.json", run)
    return EXIT_OK


def _write_trajectory(path: Path, traj, stride: int, run: dict):
    rows = traj.values[::stride]
    t = np.arange(traj.values.shape[0])[::stride] * traj.dt
    header = "# " + json.dumps({"seed": run["seed"], "sim": run["sim"]}, sort_keys=True)
    with path.open("w") as fh:
        fh.write(header + "\n")
        fh.write(",".join(("t",) + traj.labels) + "\n")
        block = 65536
        for start in range(0, rows.shape[0], block):
            chunk = np.column_stack([t[start : start + block], rows[start : start + block]])
            fh.write("".join(",".join(map(repr, r)) + "\n" for r in chunk.tolist()))


def read_spectrum_csv(path: Path, branch: str) -> Spectrum:
    """Heterodyne branch data written by ``spectrum`` (header ``f_hz,value``)."""
    try:
        with path.open() as fh:
            header = fh.readline().strip()
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError("--data", f"cannot read {path}: {exc}") from None
    if header.split(",")[0] != "f_hz" or table.shape[1] != 2:
        raise ConfigError("--data", f"{path} is not an f_hz,value table")
    f, v = table[:, 0], table[:, 1]
    valid = np.isfinite(v)
    return Spectrum(TWO_PI * f, np.where(valid, v, np.nan), "heterodyne", valid, meta={"branch": branch})


def _branch_of(path: Path) -> str:
    side = sidecar_path(path)
    if side.exists():
        kind = json.loads(side.read_text()).get("kind", "")
        if kind.startswith("heterodyne-"):
            return kind.split("-")[1]
    raise ConfigError("--data", f"cannot tell the branch of {path}; use upper=PATH or lower=PATH")


def _parse_data_args(items) -> list[Spectrum]:
    out = []
    for item in items:
        if "=" in item and item.split("=", 1)[0] in ("upper", "lower"):
            branch, name = item.split("=", 1)
            path = Path(name)
        else:
            path = Path(item)
            branch = _branch_of(path)
        out.append(read_spectrum_csv(path, branch))
    return out


def _param_report(p: SystemParams) -> dict:
    return {"params": cfgmod.resolved(p), "derived": _derived_hz(p)}


def cmd_fit(args) -> int:
    doc, p = _load(args)
    strict = not args.allow_unknown
    if doc.get("panels"):
        return _fit_panels(args, doc, strict)
    if not args.data:
        raise ConfigError("--data", "at least one data file is required")
    data = _parse_data_args(args.data)
    fit_cfg = cfgmod.parse_fit(doc.get("fit"), p, strict=strict)
    for key in ("shared", "per_panel"):
        if key in doc.get("fit", {}):
            raise ConfigError(f"fit.{key}", "only valid together with panels")
    try:
        res = fit_heterodyne(data, fit_cfg)
    except FitError as exc:
        return _fit_failed(args, doc, p, str(exc), data=list(args.data))
    report = {
        "converged": res.converged,
        "message": res.message,
        "chi2": res.chi2,
        "iterations": res.iterations,
        "free": list(res.free),
        "values": {n: cfgmod.from_si(n, v) for n, v in res.values.items()},
        "std_errors": {n: cfgmod.from_si(n, v) for n, v in res.std_errors.items()},
        "at_bound": res.at_bound,
        "history": res.history,
        "estimates": _param_report(res.estimates),
        "config": provenance(doc, p, "fit", data=list(args.data)),
    }
    write_json(Path(args.out), report)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _fit_panels(args, doc, strict) -> int:
    fit_doc = doc.get("fit", {})
    cfgmod._check_keys(fit_doc, cfgmod.FIT_KEYS, "fit", strict)
    shared = fit_doc.get("shared", [])
    per_panel = fit_doc.get("per_panel", [])
    base = Path(args.config).parent
    panels = []
    for i, panel in enumerate(doc["panels"]):
        data = []
        for branch, name in sorted(panel.get("data", {}).items()):
            if branch not in ("upper", "lower"):
                raise ConfigError(f"panels[{i}].data.{branch}", "branch must be upper or lower")
            data.append(read_spectrum_csv(base / name, branch))
        if not data:
            raise ConfigError(f"panels[{i}].data", "missing")
        panels.append((data, cfgmod.panel_params(doc, i, strict=strict)))
    bounds = cfgmod.parse_fit(
        {"free": [], "bounds": fit_doc.get("bounds", {})}, doc["_params"]
    ).bounds
    try:
        res = fit_joint(
            panels,
            shared,
            per_panel,
            bounds=bounds,
            max_iterations=int(fit_doc.get("max_iterations", 200)),
            tolerance=float(fit_doc.get("tolerance", 1e-6)),
        )
    except ParameterError as exc:
        raise ConfigError(f"fit.{exc.field}", str(exc)) from None
    except FitError as exc:
        return _fit_failed(args, doc, doc["_params"], str(exc), panels=doc["panels"], fit=fit_doc)

    def name_units(n):
        return n.split("[")[0]

    report = {
        "converged": res.converged,
        "message": res.message,
        "chi2": res.chi2,
        "iterations": res.iterations,
        "names": list(res.names),
        "shared": {n: cfgmod.from_si(n, v) for n, v in res.shared.items()},
        "std_errors": {n: cfgmod.from_si(name_units(n), v) for n, v in res.std_errors.items()},
        "panels": [_param_report(q) for q in res.panels],
        "history": res.history,
        "config": provenance(doc, doc["_params"], "fit", panels=doc["panels"], fit=fit_doc),
    }
    write_json(Path(args.out), report)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _fit_failed(args, doc, p, message, **extra) -> int:
    report = {
        "converged": False,
        "message": message,
        "config": provenance(doc, p, "fit", **extra),
    }
    write_json(Path(args.out), report)
    print(f"optospec: fit failed: {message}", file=sys.stderr)
    return EXIT_NOT_CONVERGED


def sweep_values(start: float, stop: float, step: float) -> list[float]:
    if step == 0 or (stop - start) * step < 0:
        raise ConfigError("--step", "must be non-zero and point from --from towards --to")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [start + k * step for k in range(n)]


def _feature_at_dark_mode(p: SystemParams, kind: str, h_hz: float = 300.0) -> dict:
    """Second difference of the curve at the bare dark-mode frequency."""
    c = derive_couplings(p)
    h = TWO_PI * h_hz
    omega = np.array([c.omega_d - h, c.omega_d, c.omega_d + h])
    v = evaluate(p, omega, kind).values
    curvature = float(v[0] - 2 * v[1] + v[2])
    feature = "maximum" if curvature < 0 else "minimum" if curvature > 0 else "flat"
    return {"omega_d_hz": c.omega_d / TWO_PI, "second_difference": curvature, "feature": feature}


def cmd_sweep(args) -> int:
    doc, base = _load(args)
    omega = _grid(doc, args)
    values = sweep_values(args.start, args.stop, args.step)
    key = cfgmod.config_key(args.param)

    members = []
    for v in values:
        section = dict(doc["params"])
        if args.param in ("theta", "g_max"):
            section.pop("g_x_hz", None)
            section.pop("g_y_hz", None)
            section.setdefault("theta_deg", cfgmod.resolved(base)["theta_deg"])
            section.setdefault("g_max_hz", cfgmod.resolved(base)["g_max_hz"])
        section[key] = v
        p = cfgmod.parse_params(section, strict=not args.allow_unknown, where=f"sweep[{key}={v!r}]")
        _require_stable(p)
        members.append((v, p))

    def work(item):
        v, p = item
        return evaluate(p, omega, args.kind), _feature_at_dark_mode(p, args.kind)

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        results = list(pool.map(work, members))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ("f_hz", "A" if args.kind == "asymmetry" else "value")
    summary = []
    for (v, p), (s, feature) in zip(members, results):
        name = f"{args.param}_{fmt(v)}.csv"
        write_csv(out / name, (s.f_hz, s.values), header)
        write_json(sidecar_path(out / name), provenance(doc, p, "sweep", kind=args.kind))
        entry = {"value": v, "file": name, **feature}
        if args.kind in ("asymmetry", "interference"):
            entry.update(_dip(p, s))
        summary.append(entry)
    write_json(
        out / "summary.json",
        {
            "param": args.param,
            "key": key,
            "kind": args.kind,
            "members": summary,
            "config": provenance(doc, base, "sweep", kind=args.kind),
        },
    )
    return EXIT_OK


def _dip(p: SystemParams, s: Spectrum) -> dict:
    c = derive_couplings(p)
    window = (min(p.omega_x, p.omega_y) - TWO_PI * 5e3, max(p.omega_x, p.omega_y) + TWO_PI * 5e3)
    values = np.where(s.valid, s.values, np.nan)
    pos, val = locate_minimum(s.grid, values, window)
    return {"dip_hz": pos / TWO_PI, "dip_value": val, "dip_offset_hz": (pos - c.omega_d) / TWO_PI}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optospec", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"optospec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(name, help_text, needs_config=True):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=needs_config, help="JSON configuration file")
        sp.add_argument("--out", required=True, help="output path")
        sp.add_argument(
            "--allow-unknown",
            action="store_true",
            help="warn about unknown configuration keys instead of rejecting them",
        )
        return sp

    sp = common("spectrum", "closed-form spectrum on the configured grid")
    sp.add_argument("--kind", choices=SPECTRUM_KINDS, default="bright")
    sp.set_defaults(func=cmd_spectrum)

    sp = common("asymmetry", "cavity-corrected sideband asymmetry")
    sp.set_defaults(func=cmd_asymmetry)

    sp = common("eigen", "normal modes of the drift matrix")
    sp.set_defaults(func=cmd_eigen)

    sp = common("simulate", "stochastic trajectory and its Welch PSD (output is a directory)")
    sp.add_argument("--seed", type=int, help="overrides sim.seed")
    sp.add_argument("--no-noise", action="store_true", help="deterministic relaxation only")
    sp.add_argument("--initial-x", type=float, help="start from x = value instead of a settled state")
    sp.add_argument(
        "--stride", type=int, default=1, help="keep every n-th trajectory row; 0 skips the dump"
    )
    sp.set_defaults(func=cmd_simulate)

    sp = common("fit", "least-squares fit of heterodyne data")
    sp.add_argument(
        "--data",
        action="append",
        default=[],
        help="upper=PATH or lower=PATH (or PATH with a sidecar naming the branch); repeatable",
    )
    sp.set_defaults(func=cmd_fit)

    sp = common("sweep", "one curve per parameter value (output is a directory)")
    sp.add_argument("--param", choices=SWEEP_PARAMS, default="theta")
    sp.add_argument("--from", dest="start", type=float, required=True)
    sp.add_argument("--to", dest="stop", type=float, required=True)
    sp.add_argument("--step", type=float, required=True)
    sp.add_argument("--kind", choices=SWEEP_KINDS, default="stokes")
    sp.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "stride", 0) < 0:
        parser.error("--stride must be >= 0")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"optospec: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParameterError as exc:
        print(f"optospec: error: config field '{exc.field}': {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnstableSystemError as exc:
        print(f"optospec: unstable parameters: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE


if __name__ == "__main__":
    sys.exit(main())
