"""Unit-speed normal foliations of the reference exterior by star surfaces.

The physical flow moves each surface at unit speed along its outward
normal.  In the isothermal chart this is the graph evolution
∂G/∂s = W/(G F²(G)) with W² = G² + |∇G|², which keeps the surfaces
star-shaped and makes the swept metric ds² + σ_s have unit lapse.
"""

from dataclasses import dataclass, field

import numpy as np

from .refgeom import ConformalProfile, angle_threshold, scalar_curvature
from .sphere import SphereGrid
from .surfgeom import (
    CurvedGeometry,
    StarSurface,
    condition_report,
    curved_geometry,
)

__all__ = [
    "FlowError",
    "FlowConfig",
    "Foliation",
    "flow_speed",
    "step_flow",
    "run_flow",
    "drift_fields",
    "advected_derivative",
    "evolution_diagnostics",
    "compute_constants",
]

# monitors whose failure invalidates the foliation (resolution issues
# are reported but do not abort a run)
ESSENTIAL_MONITORS = (
    "mean_curvature",
    "flat_convexity",
    "support",
    "angle",
    "potential_slope",
)


class FlowError(RuntimeError):
    """Surface update broke a flow precondition."""


@dataclass
class FlowConfig:
    ds: float = 0.01
    s_max: float = 10.0
    store_every: int = 1
    abort_on_condition_failure: bool = True
    tolerance: float = 1e-8
    project_each_step: bool = True
    cfl_safety: float = 0.75

    def __post_init__(self):
        if self.ds <= 0.0 or self.s_max <= 0.0:
            raise ValueError("ds and s_max must be positive")
        if self.store_every < 1:
            raise ValueError("store_every must be >= 1")


def flow_speed(surface: StarSurface, profile: ConformalProfile) -> np.ndarray:
    """Graph speed Ġ = W/(G F²), the unit normal speed written radially."""
    g = surface.grid
    C = g.analyze(surface.G)
    Gt = g.synthesize(C, dtheta=1)
    Gp = g.synthesize(C, dphi=1)
    s = g.sin_theta[:, None]
    W = np.sqrt(surface.G**2 + Gt**2 + (Gp / s) ** 2)
    F = profile.F_of_rho(surface.G)
    return W / (surface.G * F * F)


def step_flow(surface: StarSurface, profile: ConformalProfile, ds: float,
              project: bool = True, cfl_safety: float = 0.75):
    """One classical RK4 step of the graph flow.

    Returns (new surface, info); info carries a CFL-style advection
    number for the tangential drift and whether it is within the safety
    factor.  Raises FlowError if the update loses star-shapedness.
    """
    g = surface.grid

    def rate(G):
        return flow_speed(StarSurface(g, G), profile)

    G0 = surface.G
    try:
        k1 = rate(G0)
        k2 = rate(G0 + 0.5 * ds * k1)
        k3 = rate(G0 + 0.5 * ds * k2)
        k4 = rate(G0 + ds * k3)
    except ValueError as exc:
        # stage surfaces losing positivity or leaving profile coverage
        raise FlowError(f"flow step failed: {exc}") from exc
    G1 = G0 + (ds / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if project:
        G1 = g.project(G1)
    if not np.all(np.isfinite(G1)) or np.min(G1) <= 0.0:
        raise FlowError("flow update lost star-shapedness (G <= 0 or non-finite)")

    # tangential label drift limits the usable step, not the normal motion
    C = g.analyze(G0)
    Gt = g.synthesize(C, dtheta=1)
    Gp = g.synthesize(C, dphi=1)
    s = g.sin_theta[:, None]
    d_theta = float(np.min(np.diff(g.theta)))
    d_phi = 2.0 * np.pi / g.n_phi
    tau_t = k1 * Gt / (G0**2 + Gt**2)
    tau_p = k1 * (Gp / s**2) / G0**2
    cfl = ds * float(np.max(np.abs(tau_t)) / d_theta + np.max(np.abs(tau_p)) / d_phi)
    return StarSurface(g, G1), {"cfl": cfl, "cfl_ok": cfl <= cfl_safety}


def drift_fields(geom: CurvedGeometry):
    """Tangential velocity τ^a of grid labels relative to normal trajectories.

    The same field serves the flat and curved pictures; trajectory
    derivatives of any scalar are ∂_s|grid − τ^a ∂_a.
    """
    flat = geom.flat
    inv_tt, inv_tp, inv_pp = flat.inverse_metric()
    gdot = flat.W / (flat.surface.G * geom.F**2)
    tau_t = gdot * (inv_tt * flat.Gt + inv_tp * flat.Gp)
    tau_p = gdot * (inv_tp * flat.Gt + inv_pp * flat.Gp)
    return tau_t, tau_p


def advected_derivative(grid: SphereGrid, fieldval: np.ndarray, tau_t, tau_p):
    """τ^a ∂_a field, the drift correction for trajectory derivatives."""
    C = grid.analyze(fieldval)
    return tau_t * grid.synthesize(C, dtheta=1) + tau_p * grid.synthesize(C, dphi=1)


@dataclass
class Foliation:
    """Stored slices of a flow run plus per-slice summaries.

    Surfaces are kept for every stored slice; full geometry is
    recomputed on demand through geometry() with a small cache, which
    keeps long runs at a few kilobytes per slice.
    """

    profile: ConformalProfile
    config: FlowConfig
    s: list
    surfaces: list
    summaries: list
    aborted: bool = False
    abort_index: int | None = None
    abort_reason: str | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.surfaces)

    def geometry(self, i: int) -> CurvedGeometry:
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        if i not in self._cache:
            if len(self._cache) >= 8:
                self._cache.pop(next(iter(self._cache)))
            self._cache[i] = curved_geometry(self.surfaces[i], self.profile)
        return self._cache[i]

    def report(self, i: int) -> dict:
        return condition_report(self.geometry(i))

    def all_passed(self) -> bool:
        return all(s["passed"] for s in self.summaries)

    def series_csv(self) -> str:
        lines = ["s,min_cos_theta,min_kappa_rho2,min_rho,condition_flags"]
        for sv, sm in zip(self.s, self.summaries):
            lines.append(
                f"{sv:.17g},{sm['min_cos_theta']:.17g},{sm['min_kappa_rho2']:.17g},"
                f"{sm['min_rho']:.17g},{int(sm['passed'])}"
            )
        return "\n".join(lines) + "\n"


def _slice_summary(geom: CurvedGeometry) -> dict:
    rep = condition_report(geom)
    G = geom.flat.surface.G
    failed = [k for k in ESSENTIAL_MONITORS if not rep["monitors"][k]["passed"]]
    return {
        "min_rho": float(np.min(G)),
        "max_rho": float(np.max(G)),
        "min_cos_theta": float(np.min(geom.flat.cos_theta)),
        "min_kappa_rho2": float(np.min(geom.flat.kappa_min * G**2)),
        "min_H0": rep["monitors"]["mean_curvature"]["min"],
        "angle_margin": rep["monitors"]["angle"]["min_margin"],
        "area_radius": rep["area_radius"],
        "tail_fraction": rep["monitors"]["resolution"]["tail_fraction"],
        "passed": not failed,
        "failed_monitors": failed,
        "report": rep,
    }


def run_flow(surface: StarSurface, profile: ConformalProfile,
             config: FlowConfig) -> Foliation:
    """Advance the unit normal flow to s_max, storing every k-th slice.

    Stored slices carry condition summaries; when a stored slice fails an
    essential monitor and abort_on_condition_failure is set, the run stops
    there and the foliation records the failing index and monitors.
    """
    n_steps = max(1, int(round(config.s_max / config.ds)))
    ds = config.s_max / n_steps

    fol = Foliation(profile=profile, config=config, s=[], surfaces=[], summaries=[])

    def store(s_val, surf):
        geom = curved_geometry(surf, profile)
        summary = _slice_summary(geom)
        # discrete unit-lapse residual vs the previous stored slice
        if fol.surfaces:
            ds_window = s_val - fol.s[-1]
            fd = (surf.G - fol.surfaces[-1].G) / ds_window
            gdot = flow_speed(surf, profile)
            gdot_prev = flow_speed(fol.surfaces[-1], profile)
            summary["unit_lapse_residual"] = float(
                np.max(np.abs(fd / (0.5 * (gdot + gdot_prev)) - 1.0)))
        else:
            summary["unit_lapse_residual"] = 0.0
        fol.s.append(s_val)
        fol.surfaces.append(surf)
        fol.summaries.append(summary)
        return summary

    summary = store(0.0, surface)
    if config.abort_on_condition_failure and not summary["passed"]:
        fol.aborted = True
        fol.abort_index = 0
        fol.abort_reason = f"initial surface fails: {summary['failed_monitors']}"
        return fol

    current = surface
    max_cfl = 0.0
    for k in range(1, n_steps + 1):
        try:
            current, info = step_flow(current, profile, ds,
                                      project=config.project_each_step,
                                      cfl_safety=config.cfl_safety)
        except FlowError as exc:
            raise FlowError(f"step {k} (s = {k * ds:.6g}): {exc}") from exc
        max_cfl = max(max_cfl, info["cfl"])
        if k % config.store_every == 0 or k == n_steps:
            summary = store(k * ds, current)
            summary["cfl"] = info["cfl"]
            if config.abort_on_condition_failure and not summary["passed"]:
                fol.aborted = True
                fol.abort_index = len(fol) - 1
                fol.abort_reason = (
                    f"condition failure at s = {k * ds:.6g}: "
                    f"{summary['failed_monitors']}")
                break
    fol.summaries[0]["max_cfl"] = max_cfl
    return fol


# ----------------------------------------------------------------------
# evolution-law diagnostics

def _is_axisymmetric(fol: Foliation) -> bool:
    for surf in (fol.surfaces[0], fol.surfaces[-1]):
        spread = np.max(np.abs(surf.G - surf.G.mean(axis=1, keepdims=True)))
        if spread > 1e-11 * float(np.mean(surf.G)):
            return False
    return True


def _second_form_residual(fol: Foliation, k: int, ds: float) -> float:
    """Flat second-fundamental-form law, axisymmetric closed forms."""
    geom = fol.geometry(k)
    prof = fol.profile
    g = geom.grid
    surf = geom.flat.surface
    p = surf.partials(third=True)
    G, Gt, Gtt, Gttt = surf.G, p["t"], p["tt"], p["ttt"]
    s = g.sin_theta[:, None]
    c = g.cos_theta[:, None]

    W = geom.flat.W
    sig_tt, sig_pp = geom.flat.sig_tt, geom.flat.sig_pp
    a_tt, a_pp = geom.flat.a_tt, geom.flat.a_pp

    h = prof.h_of_rho(G)
    h1 = prof.dh_drho(G)
    h2 = prof.d2h_drho2(G)
    h_t = h1 * Gt
    h_tt = h2 * Gt**2 + h1 * Gtt

    dsig_tt = 2.0 * (G * Gt + Gt * Gtt)
    dsig_pp = 2.0 * G * Gt * s * s + 2.0 * G * G * s * c
    hess_tt = h_tt - dsig_tt / (2.0 * sig_tt) * h_t
    hess_pp = dsig_pp / (2.0 * sig_tt) * h_t

    law_tt = -hess_tt + h * a_tt**2 / sig_tt
    law_pp = -hess_pp + h * a_pp**2 / sig_pp

    # drift terms from closed forms (tensor components are not
    # pole-regular, so no spectral differentiation here)
    W_t = (G * Gt + Gt * Gtt) / W
    N = 2.0 * Gt**2 + G**2 - G * Gtt
    N_t = 3.0 * Gt * Gtt + 2.0 * G * Gt - G * Gttt
    da_tt = (N_t * W - N * W_t) / W**2
    M = G * G * s * s - G * Gt * s * c
    M_t = (2.0 * G * Gt * s * s + 2.0 * G * G * s * c
           - (Gt**2 + G * Gtt) * s * c - G * Gt * (c * c - s * s))
    da_pp = (M_t * W - M * W_t) / W**2

    gdot_num = W * h * Gt                       # τ^θ = this / (G sig_tt)
    den = G * sig_tt
    dnum = W_t * h * Gt + W * h1 * Gt**2 + W * h * Gtt
    dden = Gt * sig_tt + G * dsig_tt
    tau = gdot_num / den
    dtau = (dnum * den - gdot_num * dden) / den**2

    lie_tt = tau * da_tt + 2.0 * a_tt * dtau
    lie_pp = tau * da_pp

    prev = fol.geometry(k - 1).flat
    nxt = fol.geometry(k + 1).flat
    fd_tt = (nxt.a_tt - prev.a_tt) / (2.0 * ds)
    fd_pp = (nxt.a_pp - prev.a_pp) / (2.0 * ds)
    return float(max(np.max(np.abs(fd_tt - lie_tt - law_tt)),
                     np.max(np.abs(fd_pp - lie_pp - law_pp))))


def evolution_diagnostics(fol: Foliation) -> dict:
    """Centered-difference checks of the trajectory evolution laws.

    (a) dρ/ds = cosθ/F² per trajectory; (b) the flat second-form law
    (axisymmetric runs); (c) the physical mean-curvature first variation
    at unit lapse; (d) the angle and scale-invariant-convexity rate
    inequalities, reported as minimum margins.
    """
    if len(fol) < 3:
        raise ValueError("need at least 3 stored slices to differentiate")
    grid = fol.surfaces[0].grid
    m_ref = fol.profile.ref.m
    axisym = _is_axisymmetric(fol)

    res_a, res_c, marg_d1, marg_d2, res_b = [], [], [], [], []
    for k in range(1, len(fol) - 1):
        ds = 0.5 * (fol.s[k + 1] - fol.s[k - 1])
        geom = fol.geometry(k)
        flat = geom.flat
        G = flat.surface.G
        tau_t, tau_p = drift_fields(geom)

        def traj(prev_f, next_f, field_now):
            fd = (next_f - prev_f) / (2.0 * ds)
            return fd - advected_derivative(grid, field_now, tau_t, tau_p)

        gm, gp = fol.geometry(k - 1), fol.geometry(k + 1)

        da = traj(gm.flat.surface.G, gp.flat.surface.G, G)
        res_a.append(np.max(np.abs(da - flat.cos_theta / geom.F**2)))

        dc = traj(gm.H0, gp.H0, geom.H0)
        res_c.append(np.max(np.abs(dc + geom.a0_sq + geom.ric_nu)))

        dcos = traj(gm.flat.cos_theta, gp.flat.cos_theta, flat.cos_theta)
        rhs = ((1.0 - flat.cos_theta**2) / (geom.F**2 * G)
               - np.abs(fol.profile.dh_drho(G)))
        marg_d1.append(np.min(dcos - rhs))

        kap = flat.kappa_min
        dkr2 = traj(gm.flat.kappa_min * gm.flat.surface.G**2,
                    gp.flat.kappa_min * gp.flat.surface.G**2,
                    kap * G**2)
        rhs2 = (2.0 * G**2 * flat.cos_theta * kap - G**3 * kap**2 - m_ref) / (
            G * geom.F**2)
        marg_d2.append(np.min(dkr2 - rhs2))

        if axisym:
            res_b.append(_second_form_residual(fol, k, ds))

    out = {
        "radial_rate": {"max_residual": float(np.max(res_a))},
        "mean_curvature_rate": {"max_residual": float(np.max(res_c))},
        "angle_rate": {"min_margin": float(np.min(marg_d1))},
        "convexity_rate": {"min_margin": float(np.min(marg_d2))},
    }
    if axisym:
        out["second_form_rate"] = {"max_residual": float(np.max(res_b))}
    else:
        out["second_form_rate"] = {"skipped": "non-axisymmetric run"}
    return out


# ----------------------------------------------------------------------
# quantitative decay constants

def compute_constants(profile: ConformalProfile, rho_min: float | None = None,
                      rho_cap: float | None = None, n_grid: int = 4000) -> dict:
    """Smallest constants bounding the conformal-factor decay fields.

    Evaluates the three candidate fields on a log grid over
    [rho_min, rho_cap] and compares the grid sup with the analytic
    ρ → ∞ limit (analytic references), reporting the larger; the
    aggregate constants follow from the maxima.
    """
    ref = profile.ref
    if rho_min is None:
        rho_min = profile.rho_lo * (1.0 + 1e-12)
    if rho_min < profile.rho_horizon * (1.0 - 1e-9):
        raise ValueError("rho_min must not be inside the horizon")
    lo = max(rho_min, profile.rho_lo * (1.0 + 1e-12))
    hi = min(rho_cap if rho_cap is not None else 0.99 * profile.rho_hi,
             0.99 * profile.rho_hi)
    if hi <= lo:
        raise ValueError("empty rho range for constants")
    rho = np.geomspace(lo, hi, n_grid)

    F = profile.F_of_rho(rho)
    dF = profile.dF_drho(rho)
    h1 = np.abs(profile.dh_drho(rho))
    h2 = np.abs(profile.d2h_drho2(rho))
    r = profile.r_of_rho(rho)

    rbar = np.maximum(scalar_curvature(ref, r), 0.0)
    c3_field = h1 * (F**2 * rho**2 + 1.0)
    c4_field = (2.0 * np.abs(dF) / F + F**2 * np.sqrt(rbar)) * (rho**2 + 1.0)
    c5_field = np.maximum(h2, h1 / rho) * (rho**3 * F**2 + 1.0)

    tails = {"C3": 0.0, "C4": 0.0, "C5": 0.0}
    if ref.kind in ("schwarzschild", "reissner_nordstrom"):
        tails = {"C3": ref.m, "C4": ref.m + np.sqrt(2.0) * ref.e, "C5": 2.0 * ref.m}

    def sup(name, fieldval):
        i = int(np.argmax(fieldval))
        grid_max = float(fieldval[i])
        value = max(grid_max, tails[name])
        # sup pinned to the open outer end without a covering tail limit
        unstable = (i == n_grid - 1) and (grid_max > tails[name] * (1.0 + 1e-9))
        return value, {"grid_max": grid_max, "argmax_rho": float(rho[i]),
                       "tail": tails[name], "tail_flag": bool(unstable)}

    C3, d3 = sup("C3", c3_field)
    C4, d4 = sup("C4", c4_field)
    C5, d5 = sup("C5", c5_field)

    g_range = float(np.max(angle_threshold(ref, r)))
    r_lo_ext = (ref.r_horizon * (1.0 + 1e-9) if ref.r_horizon > 0
                else max(ref.r_min, 1e-6))
    r_ext = np.geomspace(r_lo_ext, profile.r_hi * 0.99, n_grid)
    g_ext = float(np.max(angle_threshold(ref, r_ext)))

    def c2_of(gmax):
        if C3 == 0.0 and C4 == 0.0 and C5 == 0.0:
            return 0.0
        if gmax >= 1.0:
            return float("inf")
        return max(C3 / np.sqrt(1.0 - gmax**2), np.sqrt(3.0) * C4, np.sqrt(3.0) * C5)

    out = {
        "C1": np.sqrt(3.0) * max(C4, C5),
        "C2": c2_of(g_range),
        "C3": C3,
        "C4": C4,
        "C5": C5,
        "C2_full_exterior": c2_of(g_ext),
        "angle_bound": g_range,
        "angle_bound_full_exterior": g_ext,
        "details": {"C3": d3, "C4": d4, "C5": d5,
                    "rho_range": [float(rho[0]), float(rho[-1])]},
    }
    if ref.kind == "reissner_nordstrom":
        # alternative cone bound quoted for charged references
        out["angle_bound_variant"] = float(np.max(
            np.sqrt(ref.m / (3.0 * ref.m - ref.e**2 / r))))
    return out
