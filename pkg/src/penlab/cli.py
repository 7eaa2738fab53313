"""Batch front end: JSON configs in, CSV series and JSON reports out.

One subcommand per pipeline stage (profile, flow, solve, verify,
scenario, constants).  All physical quantities are in geometric units;
with "normalized": true the length-valued config fields are interpreted
in units of the reference mass.  Outputs are deterministic: floats are
written with repr precision, JSON keys are sorted, and nothing
timestamps the files.

Exit codes: 0 success, 1 failed check or violated inequality, 2 usage
or configuration error, 3 hypotheses or foliation conditions unmet.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .bartnik import solve_u
from .energy import (Scenario, adm_extrapolate, monotonicity_check,
                     penrose_report, quasilocal_energy)
from .flow import FlowConfig, FlowError, compute_constants, run_flow
from .oracle import (round_flow_u, scenario_closed_form, schwarzschild_rho,
                     t_from_einstein)
from .refgeom import (isothermal_profile, make_reference, reference_from_csv)
from .sphere import SphereGrid
from .surfgeom import curved_geometry, perturbed_surface, round_surface

__all__ = ["console_main"]


class ConfigError(ValueError):
    """Configuration or schema problem; maps to exit code 2."""


# ----------------------------------------------------------------------
# config plumbing

_LENGTH_FIELDS = {
    "reference": ("e",),
    "surface": ("r0",),
    "flow": ("ds", "s_max"),
    "solver": ("dt_max",),
    "profile": ("r_min", "r_max"),
    "scenario": ("r0", "ds", "s_max", "dt_max", "inner_m"),
}


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _denormalize(cfg: dict) -> dict:
    """Rescale mass-normalized lengths to geometric units in place."""
    if not cfg.get("normalized"):
        return cfg
    cfg = copy.deepcopy(cfg)
    scale = float(cfg.get("reference", {}).get("m", 1.0))
    blocks = [(name, cfg[name]) for name in _LENGTH_FIELDS if name in cfg]
    if "scenarios" in cfg:
        blocks += [("scenario", sc) for sc in cfg["scenarios"]]
    for name, block in blocks:
        for key in _LENGTH_FIELDS[name]:
            if key in block:
                block[key] = block[key] * scale
        if name == "scenario" and "horizon_area" in block:
            block["horizon_area"] = block["horizon_area"] * scale**2
    cfg["normalized"] = False
    return cfg


def _jsonify(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1,
                               default=_jsonify) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _reference_from_config(cfg: dict):
    block = cfg.get("reference", {})
    kind = block.get("kind", "schwarzschild")
    if "table" in block:
        return reference_from_csv(block["table"])
    m = float(block.get("m", 1.0))
    e = float(block.get("e", 0.0))
    if kind == "reissner_nordstrom" and abs(e) >= m:
        raise ConfigError(
            "schema error: extremal reference (|e| >= m) has no "
            "isothermal horizon anchor")
    try:
        return make_reference(kind, m=m, e=e)
    except ValueError as exc:
        raise ConfigError(f"schema error: {exc}") from exc


def _resolution(cfg: dict, args) -> tuple:
    if getattr(args, "resolution", None):
        text = args.resolution
    else:
        res = cfg.get("flow", {}).get("resolution", [16, 32])
        if isinstance(res, (list, tuple)) and len(res) == 2:
            return int(res[0]), int(res[1])
        text = str(res)
    try:
        n_theta, n_phi = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise ConfigError(f"resolution must look like 16x32, got {text!r}") \
            from exc
    return n_theta, n_phi


def _profile_for_run(ref, r0: float, s_max: float, points: int = 900):
    r_far = (r0 + s_max) * 1.5
    r_lo = ref.r_horizon * 1.0005 if ref.r_horizon > 0 else ref.r_min
    if ref.kind == "tabulated":
        r_lo = max(r_lo, ref.r_min * 1.000001)
        r_far = min(r_far, ref.r_max * 0.999999)
    if r_lo >= r0:
        raise ConfigError("r0 is below the usable profile range")
    return isothermal_profile(ref, np.geomspace(r_lo, r_far, points))


def _surface_from_config(cfg: dict, grid, profile):
    block = cfg.get("surface", {})
    r0 = float(block.get("r0", 4.0))
    rho0 = float(profile.rho_of_r(r0))
    modes = block.get("perturbation")
    if not modes:
        return round_surface(grid, rho0), r0
    table = {(int(l), int(m)): float(eps) for l, m, eps in modes}
    return perturbed_surface(grid, rho0, table), r0


# ----------------------------------------------------------------------
# subcommands

def cmd_profile(cfg: dict, args) -> int:
    out = _out_dir(args)
    ref = _reference_from_config(cfg)
    block = cfg.get("profile", {})
    if ref.kind == "tabulated":
        r_min = float(block.get("r_min", ref.r_min))
        r_max = float(block.get("r_max", ref.r_max))
    else:
        r_min = float(block.get("r_min", 2.5 * ref.m))
        r_max = float(block.get("r_max", 100.0 * ref.m))
    points = int(block.get("points", 391))
    try:
        profile = isothermal_profile(ref, np.linspace(r_min, r_max, points))
    except ValueError as exc:
        raise ConfigError(f"schema error: {exc}") from exc
    r = np.linspace(r_min, r_max, points)
    rho = np.asarray(profile.rho_of_r(r), dtype=float)
    F = np.sqrt(r / rho)
    V = np.asarray(ref.V(r), dtype=float)
    lines = ["r,rho,F,V"]
    lines += [f"{a:.17g},{b:.17g},{c:.17g},{d:.17g}"
              for a, b, c, d in zip(r, rho, F, V)]
    path = out / "profile.csv"
    path.write_text("\n".join(lines) + "\n")
    print(f"wrote {path} ({points} rows)")
    return 0


def cmd_constants(cfg: dict, args) -> int:
    out = _out_dir(args)
    ref = _reference_from_config(cfg)
    block = cfg.get("profile", {})
    if ref.kind == "tabulated":
        r_min = float(block.get("r_min", ref.r_min * 1.000001))
        r_max = float(block.get("r_max", ref.r_max * 0.999999))
    else:
        r_min = float(block.get("r_min", ref.r_horizon * 1.0025))
        r_max = float(block.get("r_max", 100.0 * ref.m))
    points = int(block.get("points", 800))
    profile = isothermal_profile(ref, np.geomspace(r_min, r_max, points))
    cons = compute_constants(profile)
    path = out / "constants.json"
    _write_json(path, cons)
    names = ("C1", "C2", "C3", "C4", "C5", "angle_bound")
    print("  ".join(f"{k} = {cons[k]:.10g}" for k in names))
    print(f"wrote {path}")
    return 0


def _flow_from_config(cfg: dict, args):
    ref = _reference_from_config(cfg)
    block = cfg.get("flow", {})
    ds = float(block.get("ds", 0.02))
    s_max = float(block.get("s_max", 10.0))
    store_every = int(block.get("store_every", 5))
    grid = SphereGrid(*_resolution(cfg, args))
    r0 = float(cfg.get("surface", {}).get("r0", 4.0))
    profile = _profile_for_run(ref, r0, s_max)
    surf, _ = _surface_from_config(cfg, grid, profile)
    fol = run_flow(surf, profile,
                   FlowConfig(ds=ds, s_max=s_max, store_every=store_every))
    return fol, profile


def cmd_flow(cfg: dict, args) -> int:
    out = _out_dir(args)
    fol, _ = _flow_from_config(cfg, args)
    (out / "flow_series.csv").write_text(fol.series_csv())
    report = {
        "slices": len(fol),
        "s_final": fol.s[-1],
        "aborted": fol.aborted,
        "abort_reason": fol.abort_reason,
        "all_conditions_passed": fol.all_passed(),
        "max_cfl": fol.summaries[0].get("max_cfl"),
        "final_area_radius": fol.summaries[-1]["area_radius"],
    }
    _write_json(out / "flow_report.json", report)
    print(f"{len(fol)} slices to s = {fol.s[-1]:.6g}; "
          f"conditions {'ok' if report['all_conditions_passed'] else 'FAILED'}")
    return 3 if fol.aborted or not report["all_conditions_passed"] else 0


def cmd_solve(cfg: dict, args) -> int:
    out = _out_dir(args)
    fol, _ = _flow_from_config(cfg, args)
    if fol.aborted:
        print(f"flow aborted: {fol.abort_reason}", file=sys.stderr)
        return 3
    block = cfg.get("solver", {})
    u0 = float(block.get("u0", 1.2))
    try:
        uf = solve_u(fol, u0, dt_max=float(block.get("dt_max", 0.01)),
                     with_residual=bool(block.get("with_residual", False)))
    except ValueError as exc:
        print(f"foliation condition failed: {exc}", file=sys.stderr)
        return 3
    (out / "u_series.csv").write_text(uf.series_csv())
    report = {
        "decay_bounded": uf.decay_bounded,
        "halvings": uf.halvings,
        "max_gmres_iters": uf.max_gmres_iters,
        "bounds": uf.bounds,
        "final_max_u_minus_1": uf.max_u_minus_1()[-1],
        "max_residual": (None if uf.residual is None
                         else float(np.max(np.abs(uf.residual)))),
    }
    _write_json(out / "solve_report.json", report)
    print(f"solved {len(fol)} slices; max|u-1| final "
          f"{report['final_max_u_minus_1']:.6g}")
    return 0


# ----------------------------------------------------------------------
# verify: the invariant suite with optional fault injection

def _check_profile_closed_form():
    ref = make_reference("schwarzschild", m=1.0)
    profile = isothermal_profile(ref, np.geomspace(2.4, 120.0, 600))
    r = np.linspace(2.5, 100.0, 200)
    rho = np.asarray(profile.rho_of_r(r), dtype=float)
    exact = schwarzschild_rho(1.0, r)
    value = float(np.max(np.abs(rho / exact - 1.0)))
    return value, 1e-8


def _check_curvature_closed_form():
    grid = SphereGrid(16, 32)
    ref = make_reference("schwarzschild", m=1.0)
    profile = isothermal_profile(ref, np.geomspace(2.02, 800.0, 500))
    geom = curved_geometry(round_surface(grid, schwarzschild_rho(1.0, 4.0)),
                           profile)
    h_exact = 2.0 * np.sqrt(0.5) / 4.0
    value = max(float(np.max(np.abs(geom.H0 - h_exact))),
                float(np.max(np.abs(geom.kappa_min - h_exact / 2.0))),
                float(np.max(np.abs(geom.kappa_max - h_exact / 2.0))))
    return value, 1e-10


def _check_t_consistency(inject: str | None):
    grid = SphereGrid(16, 32)
    ref = make_reference("reissner_nordstrom", m=1.0, e=0.5)
    profile = isothermal_profile(ref, np.geomspace(2.0, 800.0, 500))
    rho0 = float(profile.rho_of_r(4.0))
    geom = curved_geometry(perturbed_surface(grid, rho0, {(2, 0): 0.1}),
                           profile)
    t_surface = geom.t_field
    if inject == "t_sign_flip":
        t_surface = -t_surface
    t_exact = t_from_einstein(ref, geom.r, geom.cos_theta)
    value = float(np.max(np.abs(t_surface - t_exact)))
    return value, 1e-8


def _check_t_bounds():
    ref = make_reference("reissner_nordstrom", m=1.0, e=0.5)
    r = np.linspace(2.2, 20.0, 100)[:, None]
    c = np.linspace(0.0, 1.0, 20)[None, :]
    t = t_from_einstein(ref, r, c)
    ceiling = 2.0 * 0.25 / r**4
    value = max(float(np.max(-t)), float(np.max(t - ceiling)))
    return value, 1e-12


def _check_gauss_identity():
    grid = SphereGrid(16, 32)
    ref = make_reference("schwarzschild", m=1.0)
    profile = isothermal_profile(ref, np.geomspace(2.02, 800.0, 500))
    rho0 = schwarzschild_rho(1.0, 4.0)
    value = 0.0
    for surf in (round_surface(grid, rho0),
                 perturbed_surface(grid, rho0, {(2, 0): 0.1})):
        geom = curved_geometry(surf, profile)
        value = max(value, float(np.max(np.abs(geom.gauss_residual))))
    return value, 1e-9


def _round_fixture(ds: float, s_max: float):
    grid = SphereGrid(16, 32)
    ref = make_reference("schwarzschild", m=1.0)
    profile = isothermal_profile(ref, np.geomspace(2.02, 800.0, 500))
    fol = run_flow(round_surface(grid, schwarzschild_rho(1.0, 4.0)), profile,
                   FlowConfig(ds=ds, s_max=s_max, store_every=1))
    return ref, fol


def _check_monotonicity_identity():
    _, fol = _round_fixture(2e-3, 0.1)
    uf = solve_u(fol, 1.2, with_residual=False)
    trace = monotonicity_check(fol, uf)
    return trace.max_mismatch, 1e-5


def _check_oracle_equivalence():
    ref, fol = _round_fixture(0.05, 5.0)
    uf = solve_u(fol, 1.2, with_residual=False)
    states, e_oracle = round_flow_u(ref, 4.0, 1.2, 5.0, len(fol))
    value = 0.0
    for i in (len(fol) // 2, len(fol) - 1):
        value = max(value, abs(float(np.mean(uf.u[i])) - states[i].u))
        g = fol.geometry(i)
        value = max(value, abs(quasilocal_energy(g, uf.u[i]) - e_oracle[i]))
    return value, 1e-6


def _check_energy_closed_form():
    grid = SphereGrid(16, 32)
    ref = make_reference("schwarzschild", m=1.0)
    profile = isothermal_profile(ref, np.geomspace(2.02, 800.0, 500))
    geom = curved_geometry(round_surface(grid, schwarzschild_rho(1.0, 4.0)),
                           profile)
    e0 = quasilocal_energy(geom, np.sqrt(1.25))
    value = abs(e0 - scenario_closed_form(1.2, 1.0, 4.0)["LHS"])
    return value, 1e-9


def cmd_verify(cfg: dict, args) -> int:
    out = _out_dir(args)
    inject = cfg.get("inject")
    if inject not in (None, "t_sign_flip"):
        raise ConfigError(f"unknown fault injection: {inject!r}")
    checks = [
        ("profile_closed_form", _check_profile_closed_form),
        ("curvature_closed_form", _check_curvature_closed_form),
        ("t_function_consistency", lambda: _check_t_consistency(inject)),
        ("t_function_bounds", _check_t_bounds),
        ("gauss_identity", _check_gauss_identity),
        ("monotonicity_identity", _check_monotonicity_identity),
        ("oracle_equivalence", _check_oracle_equivalence),
        ("energy_closed_form", _check_energy_closed_form),
    ]
    results = []
    for name, fn in checks:
        value, threshold = fn()
        passed = bool(value < threshold)
        results.append({"name": name, "value": value,
                        "threshold": threshold, "passed": passed})
        print(f"{'PASS' if passed else 'FAIL'} {name} "
              f"({value:.3e} vs {threshold:.0e})")
    all_passed = all(r["passed"] for r in results)
    _write_json(out / "verify.json",
                {"checks": results, "all_passed": all_passed,
                 "inject": inject})
    if not all_passed:
        failed = [r["name"] for r in results if not r["passed"]]
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
    return 0 if all_passed else 1


# ----------------------------------------------------------------------
# scenarios

def _scenario_kwargs(block: dict, cfg: dict, args) -> dict:
    ref = cfg.get("reference", {})
    kw = {
        "kind": block.get("kind", "schwarzschild_interior"),
        "m": float(ref.get("m", 1.0)),
        "e": float(ref.get("e", 0.0)),
        "r0": float(block.get("r0", 4.0)),
    }
    for key in ("inner_m", "horizon_area", "boundary_u0", "ds", "s_max",
                "store_every", "dt_max", "with_residual"):
        if key in block:
            kw[key] = block[key]
    if "perturbation" in block:
        kw["perturbation"] = {(int(l), int(m)): float(eps)
                              for l, m, eps in block["perturbation"]}
    kw["n_theta"], kw["n_phi"] = _resolution(cfg, args)
    return kw


def _scenario_worker(kw: dict):
    rep = penrose_report(Scenario(**kw))
    csv = None if rep.trace is None else rep.trace.series_csv()
    return rep.report, csv


def cmd_scenario(cfg: dict, args) -> int:
    out = _out_dir(args)
    if "scenarios" in cfg:
        blocks = cfg["scenarios"]
    else:
        blocks = [cfg.get("scenario",
                          {"kind": "schwarzschild_interior",
                           "inner_m": 1.2, "r0": 4.0, "s_max": 40.0})]
    try:
        kwargs = [_scenario_kwargs(b, cfg, args) for b in blocks]
        scenarios = [Scenario(**kw) for kw in kwargs]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"schema error: {exc}") from exc
    del scenarios

    if args.jobs > 1 and len(kwargs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outputs = list(pool.map(_scenario_worker, kwargs))
    else:
        outputs = [_scenario_worker(kw) for kw in kwargs]

    single = len(outputs) == 1
    worst = 0
    for i, (report, csv) in enumerate(outputs):
        stem = "scenario" if single else f"scenario_{i}"
        _write_json(out / f"{stem}.json", report)
        if csv is not None:
            (out / f"{stem.replace('scenario', 'energy_trace')}.csv"
             ).write_text(csv)
        verdict = report["verdict"]
        print(f"{stem}: {verdict}; margin {report['margin']:.6g}")
        if verdict == "inequality violated":
            worst = max(worst, 2)
        elif verdict == "hypotheses not met":
            worst = max(worst, 1)
    return {0: 0, 1: 3, 2: 1}[worst]


# ----------------------------------------------------------------------
# entry point

def console_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="penlab",
        description="quasi-local energy laboratory for static references")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--jobs", type=int, default=1,
                        help="parallel scenario workers")
    common.add_argument("--resolution",
                        help="grid override as NxM, e.g. 32x64")
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "profile": cmd_profile,
        "flow": cmd_flow,
        "solve": cmd_solve,
        "verify": cmd_verify,
        "scenario": cmd_scenario,
        "constants": cmd_constants,
    }
    for name in handlers:
        sub.add_parser(name, parents=[common])
    args = parser.parse_args(argv)
    try:
        cfg = _denormalize(_load_config(args.config))
        return handlers[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    except FlowError as exc:
        print(f"flow failed: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(console_main())
