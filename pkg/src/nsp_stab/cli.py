"""Config-driven experiment runner.

Usage:

    nsp-stab <experiment> --config <path> [--out <dir>] [--seed <u64>]

with experiment one of steady, evolve, decay, verify-elliptic,
geometry-check.  The configuration is a single strict JSON document (see
README for the schema); unknown keys and physically inadmissible
parameters are rejected with exit code 2, runtime solver failures exit
with code 1 and leave a FAILED.json marker next to any partial outputs,
success exits 0.  Identical config and seed reproduce all outputs byte for
byte.

Outputs: series.csv (one row per recorded stride), summary.json (fit
results, config echo, energy breakdowns, measured inequality constants)
and optional fields_####.bin state dumps (16-byte header: magic NSPF, u32
version, u32 node count, u32 reserved; then q, velocity components and phi
as little-endian float64 in row-major node order).
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys
from dataclasses import dataclass

import numpy as np

from .domain.grid import DomainSpec, Grid, build_grid
from .domain import charts as charts_mod, coords
from . import elliptic, steady as steady_mod, evolve, energy, norms
from .errors import ConfigError, NspError, RunError

CONFIG_VERSION = 1
EXPERIMENTS = ("steady", "evolve", "decay", "verify-elliptic", "geometry-check")

FIELD_MAGIC = b"NSPF"
FIELD_VERSION = 1


# ---------------------------------------------------------------------------
# configuration parsing

def _require_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in {where}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"missing keys {sorted(missing)} in {where}")


def _parse_domain(obj) -> DomainSpec:
    if not isinstance(obj, dict):
        raise ConfigError("domain must be an object")
    kind = obj.get("kind")
    if kind == "annulus":
        _require_keys(obj, {"kind", "r_inner", "r_outer", "resolution", "radial"},
                      {"kind", "r_inner", "r_outer", "resolution"}, "domain")
        spec = DomainSpec.annulus(obj["r_inner"], obj["r_outer"], obj["resolution"],
                                  radial=obj.get("radial", True))
    elif kind == "box":
        _require_keys(obj, {"kind", "lengths", "resolution", "walls"},
                      {"kind", "lengths", "resolution"}, "domain")
        walls = tuple(obj.get("walls", [True, True, True]))
        spec = DomainSpec.box(tuple(obj["lengths"]), obj["resolution"], walls=walls)
    else:
        raise ConfigError(f"domain kind must be annulus or box, got {kind!r}")
    try:
        spec.validate()
    except NspError as exc:
        raise ConfigError(str(exc)) from exc
    return spec


@dataclass
class RunConfig:
    raw: dict
    experiment: str
    domain: DomainSpec
    gamma: float
    mu: float
    lam: float
    background: dict
    initial: dict | None
    scheme: dict | None
    fit_window: tuple[float, float]
    samples: int
    dump_fields: bool
    seed: int


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a JSON object")
    _require_keys(raw, {"version", "experiment", "domain", "physics", "background",
                        "initial", "scheme", "fit_window", "output", "seed",
                        "samples"},
                  {"version", "experiment", "domain", "physics"}, "config root")
    if raw["version"] != CONFIG_VERSION:
        raise ConfigError(f"config version {raw['version']!r} unsupported, "
                          f"expected {CONFIG_VERSION}")
    experiment = raw["experiment"]
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")

    domain = _parse_domain(raw["domain"])

    phys = raw["physics"]
    _require_keys(phys, {"gamma", "mu", "lambda"}, {"gamma", "mu", "lambda"}, "physics")
    gamma, mu, lam = float(phys["gamma"]), float(phys["mu"]), float(phys["lambda"])
    if mu <= 0.0:
        raise ConfigError(f"viscosity mu must be positive, got {mu}")
    if lam + 2.0 * mu / 3.0 < 0.0:
        raise ConfigError(f"lambda + 2 mu / 3 must be nonnegative, got {lam + 2 * mu / 3}")
    if gamma < 1.0:
        raise ConfigError(f"adiabatic exponent gamma must be >= 1, got {gamma}")

    background = raw.get("background", {"kind": "constant", "value": 1.0})
    _require_keys(background, {"kind", "value", "amplitude", "wavenumber", "width",
                               "values"}, {"kind"}, "background")

    initial = raw.get("initial")
    needs_dynamics = experiment in ("evolve", "decay")
    if needs_dynamics:
        if initial is None or raw.get("scheme") is None:
            raise ConfigError(f"{experiment} runs need 'initial' and 'scheme' blocks")
        _require_keys(initial, {"kind", "amplitude", "wavenumber", "q", "u"},
                      {"kind"}, "initial")
        if initial["kind"] != "array":
            amp = initial.get("amplitude")
            if amp is None or float(amp) <= 0.0:
                raise ConfigError("initial amplitude must be positive")
        scheme = raw["scheme"]
        _require_keys(scheme, {"dt", "t_end", "stride", "cfl_factor", "stab4",
                               "delta"}, {"dt", "t_end"}, "scheme")
    else:
        scheme = raw.get("scheme")

    window = raw.get("fit_window", [0.2, 1.0])
    if (not isinstance(window, (list, tuple)) or len(window) != 2
            or not 0.0 <= float(window[0]) < float(window[1]) <= 1.0):
        raise ConfigError(f"fit_window must be fractions [lo, hi] of t_end, got {window}")

    output = raw.get("output", {})
    _require_keys(output, {"dump_fields"}, set(), "output")

    samples = int(raw.get("samples", 20))
    if samples < 1:
        raise ConfigError("samples must be at least 1")

    return RunConfig(raw=raw, experiment=experiment, domain=domain,
                     gamma=gamma, mu=mu, lam=lam, background=background,
                     initial=initial, scheme=scheme,
                     fit_window=(float(window[0]), float(window[1])),
                     samples=samples,
                     dump_fields=bool(output.get("dump_fields", False)),
                     seed=int(raw.get("seed", 0)))


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)


# ---------------------------------------------------------------------------
# deterministic serialization

def _fmt(x) -> str:
    if isinstance(x, float) and (np.isnan(x) or np.isinf(x)):
        return "nan" if np.isnan(x) else ("inf" if x > 0 else "-inf")
    return repr(float(x))


def _atomic_write(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _write_json(path: str, obj) -> None:
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, (np.floating, np.integer)):
            return v.item()
        if isinstance(v, float) and (np.isnan(v) or np.isinf(v)):
            return None
        return v
    text = json.dumps(clean(obj), sort_keys=True, indent=2)
    _atomic_write(path, (text + "\n").encode())


def write_series(path: str, rows: list[dict]) -> None:
    cols = ["t", "E", "D", "mass_defect", "imp1_ratio", "identity_residual"]
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in cols))
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def write_fields(path: str, grid: Grid, arrays: list[np.ndarray]) -> None:
    n = grid.n_nodes
    header = FIELD_MAGIC + struct.pack("<III", FIELD_VERSION, n, 0)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    _atomic_write(path, header + payload)


def emit_report(out_dir: str, rows: list[dict], summary: dict,
                dumps: list[tuple[Grid, list[np.ndarray]]] | None = None) -> None:
    """Persist the per-stride series, the summary and optional field dumps."""
    os.makedirs(out_dir, exist_ok=True)
    write_series(os.path.join(out_dir, "series.csv"), rows)
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    for i, (grid, arrays) in enumerate(dumps or []):
        write_fields(os.path.join(out_dir, f"fields_{i:04d}.bin"), grid, arrays)


# ---------------------------------------------------------------------------
# experiment drivers

def _build_background(config: RunConfig, grid: Grid) -> steady_mod.BackgroundProfile:
    bg = config.background
    kind = bg["kind"]
    if kind == "constant":
        return steady_mod.constant_background(grid, float(bg.get("value", 1.0)))
    if kind == "mode":
        return steady_mod.mode_background(grid, float(bg["amplitude"]),
                                          int(bg.get("wavenumber", 1)))
    if kind == "bump":
        return steady_mod.bump_background(grid, float(bg["amplitude"]),
                                          float(bg.get("width", 0.15)))
    if kind == "array":
        vals = np.asarray(bg["values"], dtype=float).reshape(grid.shape)
        return steady_mod.BackgroundProfile(rho=vals, tag="array")
    raise ConfigError(f"unknown background kind {bg['kind']!r}")


def _scheme_params(config: RunConfig) -> evolve.SchemeParams:
    s = config.scheme
    return evolve.SchemeParams(
        dt=float(s["dt"]), mu=config.mu, lam=config.lam, gamma=config.gamma,
        t_end=float(s["t_end"]), stride=int(s.get("stride", 10)),
        cfl_factor=float(s.get("cfl_factor", 0.4)),
        stab4=float(s.get("stab4", 0.01)),
        delta=None if s.get("delta") is None else float(s["delta"]))


def _build_initial(config: RunConfig, grid: Grid, ss, params) -> evolve.PerturbationState:
    init = config.initial
    if init["kind"] == "array":
        q = np.asarray(init["q"], dtype=float).reshape(grid.shape)
        u = None
        if init.get("u") is not None:
            u = np.asarray(init["u"], dtype=float).reshape((grid.ncomp,) + grid.shape)
        return evolve.make_state(grid, ss, params, q, u)
    return evolve.initial_state(grid, ss, params, init["kind"],
                                float(init["amplitude"]),
                                wavenumber=int(init.get("wavenumber", 1)),
                                seed=config.seed)


def _summarize_report(rep: energy.EnergyReport) -> dict:
    return {"t": rep.t, "E": rep.E, "D": rep.D, "E_le_D": rep.e_le_d,
            "breakdown": rep.breakdown}


def _run_dynamics(config: RunConfig, out_dir: str) -> dict:
    grid = build_grid(config.domain)
    bg = _build_background(config, grid)
    ss = steady_mod.solve_steady(bg, config.gamma, grid)
    params = _scheme_params(config)
    initial = _build_initial(config, grid, ss, params)
    traj = evolve.run_trajectory(initial, ss, params)

    rows = traj.records
    summary: dict = {
        "experiment": config.experiment,
        "config": config.raw,
        "status": traj.status,
        "steady": {"c": ss.c, "newton_iterations": ss.newton_iterations,
                   "rho_min": float(np.min(ss.rho)), "rho_max": float(np.max(ss.rho))},
        "energy_initial": _summarize_report(
            energy.energy_functionals(traj.states[0], ss)),
        "measured": {
            "imp1_ratio_max": float(np.nanmax(traj.series("imp1_ratio")))
            if rows else float("nan"),
            "identity_residual_max": float(np.nanmax(traj.series("identity_residual")))
            if len(rows) > 1 else float("nan"),
            "mass_defect_max": float(np.max(traj.series("mass_defect")))
            if rows else float("nan"),
        },
    }
    if traj.status == "completed":
        final = traj.states[-1]
        summary["energy_final"] = _summarize_report(
            energy.energy_functionals(final, ss))
        e0, eT = rows[0]["E"], rows[-1]["E"]
        summary["energy_ratio"] = eT / e0 if e0 > 0 else float("nan")
        if config.experiment == "decay":
            t = traj.series("t")
            window = (config.fit_window[0] * params.t_end,
                      config.fit_window[1] * params.t_end)
            fit = energy.decay_fit(t, traj.series("E"), window=window)
            summary["fit"] = {"C": fit.C, "sigma": fit.sigma,
                              "goodness": fit.goodness, "window": list(fit.window),
                              "n_samples": fit.n_samples,
                              "decaying": fit.decaying}
    else:
        summary["failed_step"] = traj.failed_step
        summary["error"] = traj.error

    dumps = None
    if config.dump_fields:
        dumps = [(grid, [s.q] + [s.u[c] for c in range(grid.ncomp)] + [s.phi])
                 for s in traj.states]
    emit_report(out_dir, rows, summary, dumps)
    if traj.status != "completed":
        _write_json(os.path.join(out_dir, "FAILED.json"),
                    {"error": traj.error, "failed_step": traj.failed_step})
        raise RunError(f"trajectory failed at step {traj.failed_step}: {traj.error}")
    return summary


def _run_steady(config: RunConfig, out_dir: str) -> dict:
    grid = build_grid(config.domain)
    bg = _build_background(config, grid)
    ss = steady_mod.solve_steady(bg, config.gamma, grid)
    res = ss.residuals
    summary = {
        "experiment": "steady",
        "config": config.raw,
        "status": "completed",
        "steady": {
            "c": ss.c,
            "newton_iterations": ss.newton_iterations,
            "rho_min": float(np.min(ss.rho)),
            "rho_max": float(np.max(ss.rho)),
            "enthalpy_residual": ss.enthalpy_residual(),
            "residuals": {
                "momentum": res.momentum,
                "momentum_pressure_form": res.momentum_pressure,
                "poisson": res.poisson,
                "mass": res.mass,
                "boundary_neumann": res.boundary_neumann,
            },
        },
    }
    dumps = [(grid, [ss.rho, ss.phi])] if config.dump_fields else None
    emit_report(out_dir, [], summary, dumps)
    return summary


def _random_state(grid, ss, params, rng) -> evolve.PerturbationState:
    x, lo, hi = steady_mod._axis_coordinate(grid)
    L = hi - lo
    q = grid.scalar(0.0)
    for k in range(1, 5):
        q += rng.normal() * np.cos(k * np.pi * (x - lo) / L)
    q *= 1e-3 / max(np.max(np.abs(q)), 1e-30)
    q -= grid.integrate(q) / float(np.sum(grid.weights))
    u = grid.vector(0.0)
    env = (x - lo) * (hi - x) / (0.25 * L**2)
    for c in range(grid.ncomp):
        u[c] = 1e-3 * rng.normal() * env * np.sin(np.pi * (x - lo) / L)
    return evolve.make_state(grid, ss, params, q, u)


def _run_verify_elliptic(config: RunConfig, out_dir: str) -> dict:
    grid = build_grid(config.domain)
    bg = _build_background(config, grid)
    ss = steady_mod.solve_steady(bg, config.gamma, grid)
    params = evolve.SchemeParams(dt=1e-3, mu=config.mu, lam=config.lam,
                                 gamma=config.gamma, t_end=1.0)
    rng = np.random.default_rng(config.seed)
    elliptic_ratios, stokes_ratios = [], []
    for _ in range(config.samples):
        state = _random_state(grid, ss, params, rng)
        elliptic_ratios.append(elliptic.verify_elliptic_estimate(state, ss, params).ratio)
        stokes_ratios.append(elliptic.verify_stokes_estimate(state, ss, params).ratio)
    summary = {
        "experiment": "verify-elliptic",
        "config": config.raw,
        "status": "completed",
        "elliptic_ratio": {"max": max(elliptic_ratios),
                           "mean": float(np.mean(elliptic_ratios))},
        "stokes_ratio": {"max": max(stokes_ratios),
                         "mean": float(np.mean(stokes_ratios))},
        "samples": config.samples,
    }
    emit_report(out_dir, [], summary)
    return summary


def _chart_checks(spec: DomainSpec, name: str, n: int) -> dict:
    chart = charts_mod.boundary_chart(spec, name, n_xi=n, n_zeta=n)
    depth = energy.default_collar_depth(spec)
    cmap = coords.coordinate_map(chart, depth, n_r=max(9, n // 4))
    rng = np.random.default_rng(12345)
    ratios = []
    for _ in range(5):
        a = rng.normal(size=3)
        f = np.sin(a[0] * cmap.points[0] + a[1] * cmap.points[1]
                   + a[2] * cmap.points[2])
        ratio = coords.commutator_residual(f, cmap)
        if ratio is not None:
            ratios.append(ratio)
    return {
        "chart": name,
        "resolution": n,
        "collar_depth": cmap.depth,
        "orthonormality": charts_mod.frame_orthonormality_residual(chart),
        "normalization": charts_mod.chart_normalization_residual(chart),
        "frenet_fd": charts_mod.frenet_fd_residual(chart),
        "jacobian_identity": coords.jacobian_expansion_residual(cmap),
        "jacobian_cross": coords.jacobian_cross_residual(cmap),
        "chain_rule": coords.chain_rule_residual(cmap),
        "commutator_max": max(ratios) if ratios else None,
    }


def _run_geometry_check(config: RunConfig, out_dir: str) -> dict:
    spec = config.domain
    if spec.kind == "annulus":
        names = ["inner:z", "inner:x", "outer:z", "outer:x"]
    else:
        names = [f"{'xyz'[ax]}{side}" for ax in range(3) for side in (0, 1)
                 if spec.walls[ax]]
    checks = []
    for name in names:
        coarse = _chart_checks(spec, name, 32)
        fine = _chart_checks(spec, name, 64)
        orders = {}
        for key in ("frenet_fd", "chain_rule", "jacobian_cross"):
            c, f = coarse[key], fine[key]
            orders[key] = float(np.log2(c / f)) if c > 0 and f > 0 else float("inf")
        checks.append({"coarse": coarse, "fine": fine, "measured_orders": orders})
    summary = {
        "experiment": "geometry-check",
        "config": config.raw,
        "status": "completed",
        "charts": checks,
    }
    if spec.kind == "annulus":
        summary["sphere_coverage_margin"] = charts_mod.sphere_coverage_margin()
    emit_report(out_dir, [], summary)
    return summary


def execute(config: RunConfig, out_dir: str) -> dict:
    """Dispatch one experiment; outputs land atomically in out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    runner = {
        "steady": _run_steady,
        "evolve": _run_dynamics,
        "decay": _run_dynamics,
        "verify-elliptic": _run_verify_elliptic,
        "geometry-check": _run_geometry_check,
    }[config.experiment]
    try:
        return runner(config, out_dir)
    except (RunError, ConfigError):
        raise
    except NspError as exc:
        _write_json(os.path.join(out_dir, "FAILED.json"),
                    {"error": f"{type(exc).__name__}: {exc}", "failed_step": None})
        raise RunError(f"{type(exc).__name__}: {exc}") from exc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nsp-stab",
        description="steady states, perturbation dynamics and decay "
                    "verification for a viscous charged fluid on bounded domains")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
        if config.experiment != args.experiment:
            raise ConfigError(f"config declares experiment "
                              f"{config.experiment!r}, command line says "
                              f"{args.experiment!r}")
        if args.seed is not None:
            config.seed = args.seed
            config.raw["seed"] = args.seed
        execute(config, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RunError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
