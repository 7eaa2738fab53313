"""Star-shaped surfaces in the isothermal chart and their fundamental forms.

A surface is the radial graph ρ = G(θ, φ) over the unit sphere in the
conformally flat picture gbar = F⁴(ρ)(dρ² + ρ² dS²).  Flat-chart data
(first and second fundamental forms, principal curvatures, support
function, normal angle) come from closed-form expressions in G and its
angular derivatives; the physical data follow by conformal rescaling
plus the reference curvature fields evaluated at r(ρ).
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import lpmv

from .sphere import SphereGrid
from .refgeom import (
    ConformalProfile,
    angle_threshold,
    ricci_normal,
    scalar_curvature,
    t_function,
)

__all__ = [
    "StarSurface",
    "FlatGeometry",
    "CurvedGeometry",
    "round_surface",
    "perturbed_surface",
    "surface_to_csv",
    "surface_from_csv",
    "flat_geometry",
    "curved_geometry",
    "brioschi_curvature",
    "metric_partials",
    "condition_report",
]


@dataclass
class StarSurface:
    """Radial graph over the sphere: chart radius G(θ, φ) on a grid."""

    grid: SphereGrid
    G: np.ndarray

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=float)
        expected = (self.grid.n_theta, self.grid.n_phi)
        if self.G.shape != expected:
            raise ValueError(f"G has shape {self.G.shape}, grid wants {expected}")
        if not np.all(self.G > 0.0):
            raise ValueError("star surface needs G > 0 everywhere")

    def partials(self, third: bool = False) -> dict:
        return self.grid.partials(self.G, third=third)

    def copy_with(self, G: np.ndarray) -> "StarSurface":
        return StarSurface(self.grid, G)


def round_surface(grid: SphereGrid, rho0: float) -> StarSurface:
    """Coordinate sphere ρ = ρ0."""
    if rho0 <= 0.0:
        raise ValueError("rho0 must be positive")
    return StarSurface(grid, np.full((grid.n_theta, grid.n_phi), float(rho0)))


def perturbed_surface(grid: SphereGrid, rho0: float, modes: dict) -> StarSurface:
    """Round surface with relative harmonic bumps.

    modes maps (ell, m) to an amplitude ε; the basis function is the
    associated Legendre P_ell^m(cosθ) times cos(mφ) for m ≥ 0 and
    sin(|m|φ) for m < 0, so (2, 0) with ε gives ρ0(1 + ε P₂(cosθ)).
    """
    bump = np.zeros((grid.n_theta, grid.n_phi))
    x = grid.cos_theta[:, None]
    for (ell, m), amp in modes.items():
        if abs(m) > ell:
            raise ValueError(f"mode ({ell}, {m}) has |m| > ell")
        leg = lpmv(abs(m), ell, x)
        if m >= 0:
            bump += amp * leg * np.cos(m * grid.phi)[None, :]
        else:
            bump += amp * leg * np.sin(-m * grid.phi)[None, :]
    return StarSurface(grid, rho0 * (1.0 + bump))


def surface_to_csv(surface: StarSurface) -> str:
    lines = ["theta,phi,G"]
    g = surface.grid
    for i, th in enumerate(g.theta):
        for j, ph in enumerate(g.phi):
            lines.append(f"{th:.17g},{ph:.17g},{surface.G[i, j]:.17g}")
    return "\n".join(lines) + "\n"


def surface_from_csv(path) -> StarSurface:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    thetas = np.unique(data[:, 0])
    phis = np.unique(data[:, 1])
    grid = SphereGrid(len(thetas), len(phis))
    if not (np.allclose(np.sort(grid.theta), thetas, atol=1e-10)
            and np.allclose(np.sort(grid.phi), phis, atol=1e-10)):
        raise ValueError("CSV nodes do not match a Gauss-Legendre x uniform grid")
    G = np.full((grid.n_theta, grid.n_phi), np.nan)
    ti = {round(t, 12): k for k, t in enumerate(grid.theta)}
    pj = {round(p, 12): k for k, p in enumerate(grid.phi)}
    for th, ph, val in data:
        G[ti[round(th, 12)], pj[round(ph, 12)]] = val
    if np.isnan(G).any():
        raise ValueError("CSV does not cover the full grid")
    return StarSurface(grid, G)


# ----------------------------------------------------------------------
# flat-chart fundamental forms

@dataclass
class FlatGeometry:
    """Euclidean-chart geometry of a star surface.

    Components are coordinate (θ, φ) tensor entries on the grid; the
    area density is taken per unit solid angle, i.e. √det σ̃ / sinθ.
    """

    surface: StarSurface
    Gt: np.ndarray
    Gp: np.ndarray
    W: np.ndarray
    sig_tt: np.ndarray
    sig_tp: np.ndarray
    sig_pp: np.ndarray
    a_tt: np.ndarray
    a_tp: np.ndarray
    a_pp: np.ndarray
    det_sig: np.ndarray
    H: np.ndarray
    kappa_min: np.ndarray
    kappa_max: np.ndarray
    support: np.ndarray
    cos_theta: np.ndarray
    area_density: np.ndarray

    @property
    def grid(self) -> SphereGrid:
        return self.surface.grid

    def inverse_metric(self):
        return (self.sig_pp / self.det_sig,
                -self.sig_tp / self.det_sig,
                self.sig_tt / self.det_sig)

    def gauss_curvature(self) -> np.ndarray:
        """Intrinsic curvature from the shape operator (flat ambient)."""
        return (self.a_tt * self.a_pp - self.a_tp**2) / self.det_sig


def flat_geometry(surface: StarSurface) -> FlatGeometry:
    g = surface.grid
    G = surface.G
    p = surface.partials()
    Gt, Gp = p["t"], p["p"]
    Gtt, Gtp, Gpp = p["tt"], p["tp"], p["pp"]
    s = g.sin_theta[:, None]
    c = g.cos_theta[:, None]

    W = np.sqrt(G**2 + Gt**2 + (Gp / s) ** 2)
    sig_tt = G**2 + Gt**2
    sig_tp = Gt * Gp
    sig_pp = Gp**2 + (G * s) ** 2
    a_tt = (2.0 * Gt**2 + G**2 - G * Gtt) / W
    a_tp = (2.0 * Gt * Gp + G * Gp * (c / s) - G * Gtp) / W
    a_pp = (2.0 * Gp**2 + (G * s) ** 2 - G * Gpp - G * Gt * s * c) / W
    det_sig = (G * s * W) ** 2

    # shape-operator entries; the (s11−s22)² + 4 s12 s21 form keeps the
    # discriminant cancellation-free at umbilic points
    s11 = (sig_pp * a_tt - sig_tp * a_tp) / det_sig
    s12 = (sig_pp * a_tp - sig_tp * a_pp) / det_sig
    s21 = (sig_tt * a_tp - sig_tp * a_tt) / det_sig
    s22 = (sig_tt * a_pp - sig_tp * a_tp) / det_sig
    H = s11 + s22
    disc = 0.5 * np.sqrt(np.maximum((s11 - s22) ** 2 + 4.0 * s12 * s21, 0.0))
    kappa_min = 0.5 * H - disc
    kappa_max = 0.5 * H + disc

    return FlatGeometry(
        surface=surface, Gt=Gt, Gp=Gp, W=W,
        sig_tt=sig_tt, sig_tp=sig_tp, sig_pp=sig_pp,
        a_tt=a_tt, a_tp=a_tp, a_pp=a_pp, det_sig=det_sig,
        H=H, kappa_min=kappa_min, kappa_max=kappa_max,
        support=G**2 / W, cos_theta=G / W, area_density=G * W,
    )


# ----------------------------------------------------------------------
# intrinsic curvature from metric components alone

def brioschi_curvature(E, F, G, E_u, E_v, E_vv, F_u, F_v, F_uv, G_u, G_v, G_uu):
    """Gauss curvature of E du² + 2F du dv + G dv² from its partials."""
    m11 = -0.5 * E_vv + F_uv - 0.5 * G_uu
    m12 = 0.5 * E_u
    m13 = F_u - 0.5 * E_v
    m21 = F_v - 0.5 * G_u
    m31 = 0.5 * G_v
    det1 = (m11 * (E * G - F * F)
            - m12 * (m21 * G - F * m31)
            + m13 * (m21 * F - E * m31))
    n12 = 0.5 * E_v
    n13 = 0.5 * G_u
    det2 = (-n12 * (n12 * G - F * n13)
            + n13 * (n12 * F - E * n13))
    return (det1 - det2) / (E * G - F * F) ** 2


def metric_partials(surface: StarSurface, profile: ConformalProfile | None = None):
    """Induced-metric components and the partials the curvature formula needs.

    Everything is assembled by the product rule from spectral derivatives
    of the smooth scalar G (tensor components themselves are not
    pole-regular, so they are never differentiated spectrally).  With a
    profile the metric is the physical one, F⁴(G) × flat; without, the
    flat-chart metric itself.
    """
    g = surface.grid
    G0 = surface.G
    p = surface.partials(third=True)
    Gt, Gp = p["t"], p["p"]
    Gtt, Gtp, Gpp = p["tt"], p["tp"], p["pp"]
    Gttp, Gtpp = p["ttp"], p["tpp"]
    s = g.sin_theta[:, None]
    c = g.cos_theta[:, None]

    if profile is None:
        f = np.ones_like(G0)
        f1 = np.zeros_like(G0)
        f2 = np.zeros_like(G0)
    else:
        f = profile.F_of_rho(G0)
        f1 = profile.dF_drho(G0)
        f2 = profile.d2F_drho2(G0)

    w4 = f**4
    c4 = 4.0 * f**3 * f1
    c4b = 12.0 * f**2 * f1**2 + 4.0 * f**3 * f2

    def d1(Ga, Q, Qa):
        return c4 * Ga * Q + w4 * Qa

    def d2(Ga, Gb, Gab, Q, Qa, Qb, Qab):
        return c4b * Ga * Gb * Q + c4 * (Gab * Q + Ga * Qb + Gb * Qa) + w4 * Qab

    QE = G0**2 + Gt**2
    QE_u = 2.0 * (G0 * Gt + Gt * Gtt)
    QE_v = 2.0 * (G0 * Gp + Gt * Gtp)
    QE_vv = 2.0 * (Gp**2 + G0 * Gpp + Gtp**2 + Gt * Gtpp)

    QF = Gt * Gp
    QF_u = Gtt * Gp + Gt * Gtp
    QF_v = Gtp * Gp + Gt * Gpp
    QF_uv = Gttp * Gp + Gtt * Gpp + Gtp**2 + Gt * Gtpp

    QG = Gp**2 + (G0 * s) ** 2
    QG_u = 2.0 * (Gp * Gtp + G0 * Gt * s * s + G0 * G0 * s * c)
    QG_v = 2.0 * (Gp * Gpp + G0 * Gp * s * s)
    QG_uu = 2.0 * (Gtp**2 + Gp * Gttp + (Gt**2 + G0 * Gtt) * s * s
                   + 4.0 * G0 * Gt * s * c + G0 * G0 * (c * c - s * s))

    return {
        "E": w4 * QE, "F": w4 * QF, "G": w4 * QG,
        "E_u": d1(Gt, QE, QE_u), "E_v": d1(Gp, QE, QE_v),
        "E_vv": d2(Gp, Gp, Gpp, QE, QE_v, QE_v, QE_vv),
        "F_u": d1(Gt, QF, QF_u), "F_v": d1(Gp, QF, QF_v),
        "F_uv": d2(Gt, Gp, Gtp, QF, QF_u, QF_v, QF_uv),
        "G_u": d1(Gt, QG, QG_u), "G_v": d1(Gp, QG, QG_v),
        "G_uu": d2(Gt, Gt, Gtt, QG, QG_u, QG_u, QG_uu),
    }


def _brioschi_from(parts: dict) -> np.ndarray:
    return brioschi_curvature(
        parts["E"], parts["F"], parts["G"],
        parts["E_u"], parts["E_v"], parts["E_vv"],
        parts["F_u"], parts["F_v"], parts["F_uv"],
        parts["G_u"], parts["G_v"], parts["G_uu"],
    )


# ----------------------------------------------------------------------
# physical geometry

@dataclass
class CurvedGeometry:
    """Physical geometry of a star surface in the reference manifold.

    Carries the flat-chart data it was built from plus the conformally
    rescaled forms and the reference curvature fields along the surface.
    The area density is per unit solid angle (√det σ / sinθ), so surface
    integrals are grid.integrate(field * area_density).
    """

    flat: FlatGeometry
    profile: ConformalProfile
    r: np.ndarray
    F: np.ndarray
    dF_dnu: np.ndarray
    V: np.ndarray
    dV_dnu: np.ndarray
    H0: np.ndarray
    kappa_min: np.ndarray
    kappa_max: np.ndarray
    a0_tt: np.ndarray
    a0_tp: np.ndarray
    a0_pp: np.ndarray
    sig_tt: np.ndarray
    sig_tp: np.ndarray
    sig_pp: np.ndarray
    det_sig: np.ndarray
    area_density: np.ndarray
    det_a0: np.ndarray
    a0_sq: np.ndarray
    ric_nu: np.ndarray
    t_field: np.ndarray
    scalar_curv: np.ndarray
    gauss_k: np.ndarray
    gauss_residual: np.ndarray

    @property
    def grid(self) -> SphereGrid:
        return self.flat.grid

    @property
    def cos_theta(self) -> np.ndarray:
        return self.flat.cos_theta

    def inverse_metric(self):
        return (self.sig_pp / self.det_sig,
                -self.sig_tp / self.det_sig,
                self.sig_tt / self.det_sig)

    def area(self) -> float:
        return self.grid.integrate(self.area_density)

    def area_radius(self) -> float:
        return float(np.sqrt(self.area() / (4.0 * np.pi)))

    def laplacian(self, field: np.ndarray) -> np.ndarray:
        """Laplace-Beltrami of a scalar in the induced physical metric."""
        g = self.grid
        s = g.sin_theta[:, None]
        inv_tt, inv_tp, inv_pp = self.inverse_metric()
        dens = self.area_density * s  # √det σ
        p = g.partials(field)
        flux_t = dens * (inv_tt * p["t"] + inv_tp * p["p"])
        flux_p = dens * (inv_tp * p["t"] + inv_pp * p["p"])
        div = (g.synthesize(g.analyze(flux_t), dtheta=1)
               + g.synthesize(g.analyze(flux_p), dphi=1))
        return div / dens


def curved_geometry(surface: StarSurface, profile: ConformalProfile) -> CurvedGeometry:
    flat = flat_geometry(surface)
    ref = profile.ref
    G = surface.G

    r = profile.r_of_rho(G)
    F = profile.F_of_rho(G)
    dF_dnu = profile.dF_drho(G) * flat.cos_theta
    ratio = 2.0 * dF_dnu / F
    F2 = F * F

    kappa_min = (flat.kappa_min + ratio) / F2
    kappa_max = (flat.kappa_max + ratio) / F2
    H0 = (flat.H + 2.0 * ratio) / F2
    a0_tt = F2 * (flat.a_tt + ratio * flat.sig_tt)
    a0_tp = F2 * (flat.a_tp + ratio * flat.sig_tp)
    a0_pp = F2 * (flat.a_pp + ratio * flat.sig_pp)

    F4 = F2 * F2
    sig_tt = F4 * flat.sig_tt
    sig_tp = F4 * flat.sig_tp
    sig_pp = F4 * flat.sig_pp
    det_sig = F4 * F4 * flat.det_sig
    area_density = F4 * flat.area_density

    V = ref.V(r)
    dV_dnu = np.sqrt(ref.phi(r)) * ref.dV(r) * flat.cos_theta
    ric = ricci_normal(ref, r, flat.cos_theta)
    tfield = t_function(ref, r, flat.cos_theta)
    rbar = scalar_curvature(ref, r)

    gauss_k = _brioschi_from(metric_partials(surface, profile))
    det_a0 = kappa_min * kappa_max
    a0_sq = kappa_min**2 + kappa_max**2
    residual = 2.0 * gauss_k - (rbar - 2.0 * ric + H0**2 - a0_sq)

    return CurvedGeometry(
        flat=flat, profile=profile, r=r, F=F, dF_dnu=dF_dnu,
        V=V, dV_dnu=dV_dnu, H0=H0,
        kappa_min=kappa_min, kappa_max=kappa_max,
        a0_tt=a0_tt, a0_tp=a0_tp, a0_pp=a0_pp,
        sig_tt=sig_tt, sig_tp=sig_tp, sig_pp=sig_pp,
        det_sig=det_sig, area_density=area_density,
        det_a0=det_a0, a0_sq=a0_sq,
        ric_nu=ric, t_field=tfield, scalar_curv=rbar,
        gauss_k=gauss_k, gauss_residual=residual,
    )


# ----------------------------------------------------------------------
# monitors

def _located_min(grid: SphereGrid, field: np.ndarray):
    idx = np.unravel_index(int(np.argmin(field)), field.shape)
    return float(field[idx]), {
        "theta": float(grid.theta[idx[0]]),
        "phi": float(grid.phi[idx[1]]),
    }


def condition_report(geom: CurvedGeometry, tail_tol: float = 1e-6) -> dict:
    """Pointwise health checks for one surface of a prospective foliation.

    Each monitor reports its worst value, where it occurs, and whether the
    sign condition holds; `passed` is the conjunction.  The angle monitor
    compares cosθ against the reference cone bound along the surface.
    """
    grid = geom.grid
    thresh = angle_threshold(geom.profile.ref, geom.r)
    margin = geom.flat.cos_theta - thresh

    h_min, h_loc = _located_min(grid, geom.H0)
    k_min, k_loc = _located_min(grid, geom.flat.kappa_min)
    sup_min, sup_loc = _located_min(grid, geom.flat.support)
    ang_min, ang_loc = _located_min(grid, margin)
    dv_min, dv_loc = _located_min(grid, geom.dV_dnu)
    # a constant potential (flat reference) has dV/dnu identically zero;
    # that degenerate case passes, a genuine sign change does not
    dv_ok = dv_min > 0.0 or float(np.max(np.abs(geom.dV_dnu))) == 0.0
    tail = grid.spectral_tail_fraction(geom.flat.surface.G)

    monitors = {
        "mean_curvature": {"min": h_min, "location": h_loc, "passed": h_min > 0.0},
        "flat_convexity": {"min": k_min, "location": k_loc, "passed": k_min > 0.0},
        "support": {"min": sup_min, "location": sup_loc, "passed": sup_min > 0.0},
        "angle": {
            "min_margin": ang_min,
            "location": ang_loc,
            "threshold_max": float(np.max(thresh)),
            "passed": ang_min > 0.0,
        },
        "potential_slope": {"min": dv_min, "location": dv_loc, "passed": dv_ok},
        "resolution": {"tail_fraction": tail, "passed": tail < tail_tol},
    }
    return {
        "passed": all(m["passed"] for m in monitors.values()),
        "area": geom.area(),
        "area_radius": geom.area_radius(),
        "r_range": [float(np.min(geom.r)), float(np.max(geom.r))],
        "monitors": monitors,
    }
