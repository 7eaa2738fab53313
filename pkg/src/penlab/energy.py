"""Quasi-local energy, its exact rate identity, and inequality reports.

The energy of a slice weighs the gap between the reference mean
curvature H0 and its deformation H0/u by the static potential:

    E = (1/8pi) * integral of V * H0 * (1 - 1/u) over the slice.

Along a unit-speed foliation carrying a solution u of the radial lapse
equation, dE/ds has a sign-definite closed form.  monotonicity_check
audits the computed series against that form; adm_extrapolate sends
s to infinity with a 1/s fit, which identifies the limit with the total
mass of the deformed extension minus the reference mass; penrose_report
runs the whole pipeline on a matching scenario and compares E(0) with
sqrt(A_h / 16pi) - m.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bartnik import UField, initial_u, reaction_coefficient, solve_u
from .flow import (FlowConfig, FlowError, Foliation, compute_constants,
                   run_flow)
from .refgeom import isothermal_profile, make_reference
from .sphere import SphereGrid
from .surfgeom import (CurvedGeometry, curved_geometry, perturbed_surface,
                       round_surface)

__all__ = [
    "EnergyTrace",
    "Scenario",
    "PenroseReport",
    "quasilocal_energy",
    "monotonicity_check",
    "adm_extrapolate",
    "penrose_report",
]


def quasilocal_energy(geom: CurvedGeometry, u) -> float:
    """Energy of one slice, (1/8pi) * integral V H0 (1 - 1/u) d(sigma).

    Parameters
    ----------
    geom : CurvedGeometry
        Slice geometry in the reference manifold.
    u : array_like
        Positive lapse factor on the slice grid (scalars broadcast).

    Returns
    -------
    float
        The weighted mean-curvature deficit integral.
    """
    u = np.broadcast_to(np.asarray(u, dtype=float), geom.H0.shape)
    if np.any(u <= 0.0):
        raise ValueError("u must be positive")
    integrand = geom.V * geom.H0 * (1.0 - 1.0 / u)
    return float(geom.grid.integrate(integrand * geom.area_density)
                 / (8.0 * np.pi))


@dataclass
class EnergyTrace:
    """Energy series along a foliation with both sides of the rate identity.

    rate_numeric is a second-order difference of the energy series;
    rate_formula is the closed-form right-hand side evaluated slice by
    slice.  max_rate (the monotonicity margin) should be nonpositive up
    to discretization noise on admissible runs.  e_inf is filled in by
    adm_extrapolate.
    """

    s: np.ndarray
    energy: np.ndarray
    rate_numeric: np.ndarray
    rate_formula: np.ndarray
    max_mismatch: float
    max_rate: float
    e_inf: float | None = None
    fit: dict = field(default_factory=dict)

    def nonincreasing(self, tol: float = 1e-8) -> bool:
        return bool(np.all(np.diff(self.energy) <= tol))

    def series_csv(self) -> str:
        lines = ["s,E,dEds_numeric,dEds_formula"]
        for i in range(len(self.s)):
            lines.append(f"{self.s[i]:.17g},{self.energy[i]:.17g},"
                         f"{self.rate_numeric[i]:.17g},"
                         f"{self.rate_formula[i]:.17g}")
        return "\n".join(lines) + "\n"


def _rate_formula(geom: CurvedGeometry, u: np.ndarray) -> float:
    w = (u - 1.0) ** 2 / u
    bracket = (geom.H0 * geom.dV_dnu
               + geom.V * (geom.det_a0 - 0.5 * geom.t_field))
    return float(-geom.grid.integrate(w * bracket * geom.area_density)
                 / (8.0 * np.pi))


def monotonicity_check(fol: Foliation, ufield: UField) -> EnergyTrace:
    """Audit dE/ds along the run against its closed-form expression.

    The numeric side differentiates the energy series with centered
    second-order stencils (one-sided at the ends); the formula side is
    the nonpositive integral of (u-1)^2/u times the condition bracket.
    """
    n = len(fol)
    if n < 3:
        raise ValueError("need at least 3 slices for s-derivatives")
    if len(ufield.u) != n:
        raise ValueError("ufield does not match the foliation")
    s = np.asarray(fol.s, dtype=float)
    energy = np.empty(n)
    formula = np.empty(n)
    for k in range(n):
        g = fol.geometry(k)
        energy[k] = quasilocal_energy(g, ufield.u[k])
        formula[k] = _rate_formula(g, ufield.u[k])
    numeric = np.gradient(energy, s, edge_order=2)
    return EnergyTrace(
        s=s, energy=energy, rate_numeric=numeric, rate_formula=formula,
        max_mismatch=float(np.max(np.abs(numeric - formula))),
        max_rate=float(np.max(numeric)),
    )


def adm_extrapolate(trace: EnergyTrace, ufield: UField | None = None,
                    tail_fraction: float = 1.0 / 3.0,
                    residual_threshold: float = 1e-4) -> dict:
    """Extrapolate the energy series to s -> infinity.

    Fits E(s) = E_inf + a/s + b/s^2 by least squares over the trailing
    tail_fraction of the samples.  The limit is the total mass of the
    deformed extension minus the reference mass.  Requires a monotone
    tail of at least 10 samples with s > 0; when a ufield is supplied
    its decay flag must be clean.

    Returns
    -------
    dict
        E_inf, the fit coefficients a and b, the rms fit residual, and
        the sample window.  Also stored on the trace.
    """
    s = np.asarray(trace.s, dtype=float)
    energy = np.asarray(trace.energy, dtype=float)
    n = len(s)
    i0 = int(np.floor(n * (1.0 - tail_fraction)))
    if n - i0 < 10:
        raise ValueError("need at least 10 samples in the extrapolation tail")
    st, et = s[i0:], energy[i0:]
    if st[0] <= 0.0:
        raise ValueError("extrapolation tail must have s > 0")
    if not np.all(np.diff(et) <= 1e-8):
        raise ValueError("energy tail is not monotone nonincreasing")
    if ufield is not None and not ufield.decay_bounded:
        raise ValueError("u decay is not bounded; tail not asymptotic")
    basis = np.column_stack([np.ones_like(st), 1.0 / st, 1.0 / st**2])
    coef, _, _, _ = np.linalg.lstsq(basis, et, rcond=None)
    resid = et - basis @ coef
    rms = float(np.sqrt(np.mean(resid**2)))
    e_inf = float(coef[0])
    if rms > residual_threshold * (1.0 + abs(e_inf)):
        raise ValueError(f"extrapolation fit residual {rms:.3e} above "
                         "threshold; tail not in the asymptotic regime")
    out = {"E_inf": e_inf, "a": float(coef[1]), "b": float(coef[2]),
           "fit_residual": rms, "window": (i0, n)}
    trace.e_inf = e_inf
    trace.fit = out
    return out


@dataclass
class Scenario:
    """Inequality test case: inner data matched across a reference sphere.

    kind selects how the boundary data and the horizon area come about:
    "schwarzschild_interior" and "rn_interior" take the inner metric
    from the same static family with mass inner_m (and the reference
    charge, for the latter); "custom" supplies the boundary lapse ratio
    and a declared horizon area directly.  The declared area is used as
    given; nothing searches the inner data for minimal surfaces.
    """

    kind: str
    m: float
    r0: float
    e: float = 0.0
    inner_m: float | None = None
    horizon_area: float | None = None
    boundary_u0: object | None = None
    perturbation: dict | None = None
    n_theta: int = 16
    n_phi: int = 32
    ds: float = 0.02
    s_max: float = 40.0
    store_every: int = 5
    dt_max: float = 0.01
    with_residual: bool = False
    profile_points: int = 900

    def __post_init__(self):
        kinds = ("schwarzschild_interior", "rn_interior", "custom")
        if self.kind not in kinds:
            raise ValueError(f"kind must be one of {kinds}")
        if self.kind == "rn_interior":
            if abs(self.e) >= self.m:
                raise ValueError("reference charge must satisfy |e| < m")
        elif self.kind == "schwarzschild_interior":
            self.e = 0.0
        if self.kind in ("schwarzschild_interior", "rn_interior"):
            if self.inner_m is None:
                raise ValueError("interior scenarios need inner_m")
            if self.r0 <= self._inner_horizon():
                raise ValueError("r0 inside the inner horizon")
        else:
            if self.horizon_area is None or self.horizon_area < 0.0:
                raise ValueError("custom scenarios need horizon_area >= 0")
            if self.boundary_u0 is None:
                raise ValueError("custom scenarios need boundary_u0")
        if self.r0 <= self.m + np.sqrt(max(self.m**2 - self.e**2, 0.0)):
            raise ValueError("r0 inside the reference horizon")

    def _inner_horizon(self) -> float:
        if self.kind == "schwarzschild_interior":
            return 2.0 * self.inner_m
        disc = self.inner_m**2 - self.e**2
        if disc < 0.0:
            raise ValueError("inner mass below the extremal bound")
        return self.inner_m + np.sqrt(disc)

    def declared_horizon_area(self) -> float:
        if self.kind == "custom":
            return float(self.horizon_area)
        return float(4.0 * np.pi * self._inner_horizon() ** 2)

    def rhs(self) -> float:
        return float(np.sqrt(self.declared_horizon_area() / (16.0 * np.pi))
                     - self.m)

    def inner_phi(self, r):
        p = 1.0 - 2.0 * self.inner_m / np.asarray(r, dtype=float) \
            + self.e**2 / np.asarray(r, dtype=float) ** 2
        if np.any(p <= 0.0):
            raise ValueError("inner metric degenerate on the surface")
        return p


@dataclass
class PenroseReport:
    """Scenario verdict plus the intermediate objects that produced it."""

    report: dict
    trace: EnergyTrace | None
    foliation: Foliation | None
    ufield: UField | None

    @property
    def verdict(self) -> str:
        return self.report["verdict"]


def _closed_form_e0(sc: Scenario) -> float | None:
    if sc.kind != "schwarzschild_interior":
        return None
    sm = np.sqrt(1.0 - 2.0 * sc.m / sc.r0)
    sM = np.sqrt(1.0 - 2.0 * sc.inner_m / sc.r0)
    return float(sc.r0 * sm * (sm - sM))


def _boundary_u0(sc: Scenario, geom: CurvedGeometry):
    """Initial lapse ratio H0/H on the matching sphere."""
    if sc.kind == "custom":
        return np.broadcast_to(
            np.asarray(sc.boundary_u0, dtype=float), geom.H0.shape).copy()
    if sc.inner_m == sc.m:
        # inner data is the reference itself
        return np.ones_like(geom.H0)
    h_phys = (2.0 * np.sqrt(sc.inner_phi(np.asarray(geom.r, dtype=float)))
              / np.asarray(geom.r, dtype=float))
    return initial_u(h_phys, geom.H0)


def _hypothesis_block(geoms, monitors_ok: bool, aborted: bool,
                      abort_reason, reference_kind: str, profile) -> dict:
    """Slice-by-slice foliation conditions plus the angle threshold.

    The flow monitors carry the vacuum-family thresholds; for charged
    or tabulated references the angle condition is re-gated against the
    bound from compute_constants, which is the one the general argument
    needs.
    """
    min_coef = np.inf
    min_shear = np.inf
    min_cos = np.inf
    for g in geoms:
        min_coef = min(min_coef, float(np.min(reaction_coefficient(g))))
        min_shear = min(min_shear,
                        float(np.min(g.det_a0 - 0.5 * g.t_field)))
        min_cos = min(min_cos, float(np.min(g.cos_theta)))
    gates = {
        "surface_conditions": {"passed": bool(monitors_ok),
                               "aborted": bool(aborted),
                               "abort_reason": abort_reason},
        "coefficient_positive": {"min": min_coef,
                                 "passed": bool(min_coef > 0.0)},
        "shear_dominates_matter": {"min": min_shear,
                                   "passed": bool(min_shear > 0.0)},
    }
    if reference_kind != "schwarzschild":
        cons = compute_constants(profile)
        bound = cons["angle_bound"]
        gates["angle_vs_constant"] = {
            "min_cos_theta": min_cos,
            "threshold": bound,
            "passed": bool(min_cos > bound),
            "constants": {k: cons[k] for k in
                          ("C1", "C2", "C3", "C4", "C5", "angle_bound")},
        }
    gates["all_passed"] = all(
        v["passed"] for k, v in gates.items() if isinstance(v, dict))
    return gates


def penrose_report(sc: Scenario) -> PenroseReport:
    """Run flow, lapse solve, and energy audit; compare E(0) with the bound.

    The hypotheses block gates the verdict: when any foliation condition
    fails the verdict is "hypotheses not met" regardless of the margin.
    Otherwise the verdict states whether E(0) >= sqrt(A_h/16pi) - m.
    """
    ref_kind = "schwarzschild" if sc.e == 0.0 else "reissner_nordstrom"
    ref = make_reference(ref_kind, m=sc.m, e=sc.e)
    r_far = (sc.r0 + sc.s_max) * 1.5
    r_lo = ref.r_horizon * 1.0005 if ref.r_horizon > 0 else sc.r0 / 4.0
    profile = isothermal_profile(
        ref, np.geomspace(r_lo, r_far, sc.profile_points))
    grid = SphereGrid(sc.n_theta, sc.n_phi)
    rho0 = float(profile.rho_of_r(sc.r0))
    if sc.perturbation is None:
        surf = round_surface(grid, rho0)
    else:
        surf = perturbed_surface(grid, rho0, sc.perturbation)

    cfg = FlowConfig(ds=sc.ds, s_max=sc.s_max, store_every=sc.store_every,
                     abort_on_condition_failure=True)
    flow_error = None
    try:
        fol = run_flow(surf, profile, cfg)
    except FlowError as exc:
        flow_error = str(exc)
        fol = None

    if fol is not None:
        g0 = fol.geometry(0)
        geoms = (fol.geometry(k) for k in range(len(fol)))
        hypotheses = _hypothesis_block(
            geoms, fol.all_passed() and not fol.aborted, fol.aborted,
            fol.abort_reason, ref_kind, profile)
        n_slices = len(fol)
    else:
        g0 = curved_geometry(surf, profile)
        hypotheses = _hypothesis_block(
            [g0], False, True, flow_error, ref_kind, profile)
        n_slices = 1
    u0 = _boundary_u0(sc, g0)

    trace = None
    ufield = None
    e_inf = None
    fit = {"fit_residual": None}
    scalar_max = None
    if n_slices >= 3 and hypotheses["coefficient_positive"]["passed"]:
        ufield = solve_u(fol, u0, dt_max=sc.dt_max,
                         with_residual=sc.with_residual)
        trace = monotonicity_check(fol, ufield)
        e0 = float(trace.energy[0])
        try:
            fit = adm_extrapolate(trace, ufield)
            e_inf = fit["E_inf"]
        except ValueError as exc:
            fit = {"fit_residual": None, "error": str(exc)}
        if ufield.residual is not None:
            scalar_max = float(np.max(np.abs(ufield.residual)))
    else:
        e0 = quasilocal_energy(g0, u0)

    rhs = sc.rhs()
    margin = e0 - rhs
    if not hypotheses["all_passed"]:
        verdict = "hypotheses not met"
    elif margin >= 0.0:
        verdict = "inequality holds"
    else:
        verdict = "inequality violated"

    report = {
        "scenario": {
            "kind": sc.kind, "reference": {"kind": ref_kind,
                                           "m": sc.m, "e": sc.e},
            "inner_m": sc.inner_m, "r0": sc.r0,
            "horizon_area": sc.declared_horizon_area(),
            "resolution": [sc.n_theta, sc.n_phi],
            "ds": sc.ds, "s_max": sc.s_max,
        },
        "hypotheses": hypotheses,
        "E0": e0,
        "E0_closed_form": _closed_form_e0(sc),
        "E_inf": e_inf,
        "rhs": rhs,
        "margin": margin,
        "monotonicity_margin": None if trace is None else trace.max_rate,
        "residuals": {
            "monotonicity_mismatch": (None if trace is None
                                      else trace.max_mismatch),
            "scalar_max": scalar_max,
            "extrapolation_fit": fit.get("fit_residual"),
        },
        "verdict": verdict,
    }
    return PenroseReport(report=report, trace=trace, foliation=fol,
                         ufield=ufield)
