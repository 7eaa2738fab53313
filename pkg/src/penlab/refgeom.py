"""Static spherically symmetric reference manifolds.

A reference manifold here is the time-symmetric slice of a static
spacetime: a metric gbar = dr²/φ(r) + r² dS² together with a static
potential V(r), positive outside the horizon radius where φ vanishes.
The module provides the curvature of gbar, the direction-dependent
curvature bound t_function defined through the Hessian of V, and the
isothermal (conformally flat) radial coordinate in which gbar takes the
form F⁴(ρ)(dρ² + ρ² dS²).

Builtin kinds cover vacuum (schwarzschild, φ = 1 − 2m/r) and
electrovacuum (reissner_nordstrom, φ = 1 − 2m/r + e²/r²), both with
V = √φ.  Arbitrary profiles enter through tabulated (r, φ, V) data with
monotone-cubic interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import PchipInterpolator

__all__ = [
    "ReferenceManifold",
    "ConformalProfile",
    "make_reference",
    "isothermal_profile",
    "ricci_eigenvalues",
    "ricci_normal",
    "scalar_curvature",
    "t_function",
    "static_check",
    "reference_from_csv",
    "profile_to_csv",
]


@dataclass(frozen=True)
class ReferenceManifold:
    """Immutable bundle of φ, V and their first two derivatives."""

    kind: str
    m: float
    e: float
    r_horizon: float
    r_min: float
    r_max: float
    phi: Callable[[np.ndarray], np.ndarray]
    dphi: Callable[[np.ndarray], np.ndarray]
    d2phi: Callable[[np.ndarray], np.ndarray]
    V: Callable[[np.ndarray], np.ndarray]
    dV: Callable[[np.ndarray], np.ndarray]
    d2V: Callable[[np.ndarray], np.ndarray]

    def require_exterior(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r <= self.r_horizon) or np.any(r < self.r_min):
            raise ValueError("r at or below the horizon / domain floor")
        if np.any(r > self.r_max):
            raise ValueError("r beyond the tabulated domain")
        return r


def make_reference(kind: str, m: float | None = None, e: float = 0.0,
                   tabulated_data=None) -> ReferenceManifold:
    """Build a reference manifold of the given kind.

    Parameters
    ----------
    kind : 'schwarzschild' | 'reissner_nordstrom' | 'tabulated'
    m, e : mass and charge for the analytic kinds (|e| <= m required).
    tabulated_data : (r, phi, V) arrays for kind='tabulated'; r strictly
        increasing, phi and V positive past the first zero of phi.
    """
    if kind == "schwarzschild":
        e = 0.0
    if kind in ("schwarzschild", "reissner_nordstrom"):
        if m is None or m <= 0:
            raise ValueError("mass must be positive")
        if abs(e) > m:
            raise ValueError(
                "extremal violation: reissner_nordstrom requires |e| <= m")
        m_, e_ = float(m), float(e)
        r_h = m_ + np.sqrt(m_**2 - e_**2)

        def phi(r):
            r = np.asarray(r, dtype=float)
            return 1.0 - 2.0 * m_ / r + e_**2 / r**2

        def dphi(r):
            r = np.asarray(r, dtype=float)
            return 2.0 * m_ / r**2 - 2.0 * e_**2 / r**3

        def d2phi(r):
            r = np.asarray(r, dtype=float)
            return -4.0 * m_ / r**3 + 6.0 * e_**2 / r**4

        def V(r):
            return np.sqrt(phi(r))

        def dV(r):
            return dphi(r) / (2.0 * V(r))

        def d2V(r):
            p, dp, d2p = phi(r), dphi(r), d2phi(r)
            return (d2p - dp**2 / (2.0 * p)) / (2.0 * np.sqrt(p))

        return ReferenceManifold(kind, m_, e_, r_h, r_h, np.inf,
                                 phi, dphi, d2phi, V, dV, d2V)

    if kind == "tabulated":
        if tabulated_data is None:
            raise ValueError("tabulated kind needs (r, phi, V) data")
        r_t, phi_t, V_t = (np.asarray(a, dtype=float) for a in tabulated_data)
        if r_t.ndim != 1 or r_t.size < 4:
            raise ValueError("need at least 4 tabulated rows")
        if np.any(np.diff(r_t) <= 0):
            raise ValueError("tabulated r must be strictly increasing")
        interior = slice(1, None) if phi_t[0] <= 0.0 else slice(None)
        if np.any(phi_t[interior] <= 0) or np.any(V_t[interior] <= 0):
            raise ValueError("tabulated phi, V must be positive past the horizon")
        phi_i = PchipInterpolator(r_t, phi_t)
        V_i = PchipInterpolator(r_t, V_t)
        r_h = float(r_t[0]) if phi_t[0] <= 1e-14 else 0.0
        m_eff = float(r_t[-1] * (1.0 - phi_t[-1]) / 2.0)  # asymptotic mass guess
        return ReferenceManifold(
            "tabulated", m_eff, 0.0, r_h, float(r_t[0]), float(r_t[-1]),
            phi_i, phi_i.derivative(1), phi_i.derivative(2),
            V_i, V_i.derivative(1), V_i.derivative(2))

    raise ValueError(f"unknown reference kind: {kind!r}")


def reference_from_csv(path) -> ReferenceManifold:
    """Load a tabulated reference from a CSV file with header r,phi,V."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    for col in ("r", "phi", "V"):
        if col not in (data.dtype.names or ()):
            raise ValueError("CSV must have header r,phi,V")
    return make_reference("tabulated",
                          tabulated_data=(data["r"], data["phi"], data["V"]))


# ----------------------------------------------------------------------
# curvature of gbar = dr²/φ + r² dS²

def ricci_eigenvalues(ref: ReferenceManifold, r):
    """Orthonormal-frame Ricci eigenvalues (radial, tangential)."""
    r = ref.require_exterior(r)
    lam_rad = -ref.dphi(r) / r
    lam_tan = -ref.dphi(r) / (2.0 * r) + (1.0 - ref.phi(r)) / r**2
    return lam_rad, lam_tan


def scalar_curvature(ref: ReferenceManifold, r):
    lam_rad, lam_tan = ricci_eigenvalues(ref, r)
    return lam_rad + 2.0 * lam_tan


def ricci_normal(ref: ReferenceManifold, r, cos_theta):
    """Ric(ν,ν) for a unit normal at angle θ to the radial direction."""
    lam_rad, lam_tan = ricci_eigenvalues(ref, r)
    c2 = np.asarray(cos_theta, dtype=float) ** 2
    return c2 * lam_rad + (1.0 - c2) * lam_tan


def angle_threshold(ref: ReferenceManifold, r):
    """Lower bound on cosθ below which normal convexity can fail.

    For a mixed-sign Ricci tensor (radial eigenvalue negative, tangential
    positive) the normal direction must stay within an angular cone of the
    radial one; the critical cosine is √(λ_tan / (λ_tan − λ_rad)).  A flat
    region has no restriction and reports 0.
    """
    lam_rad, lam_tan = ricci_eigenvalues(ref, r)
    denom = lam_tan - lam_rad
    flat = np.abs(denom) < 1e-300
    ratio = np.where(flat, 0.0, lam_tan / np.where(flat, 1.0, denom))
    return np.sqrt(np.clip(ratio, 0.0, 1.0))


def hessian_potential(ref: ReferenceManifold, r):
    """Orthonormal Hessian components of V and its Laplacian.

    Returns (radial, tangential, laplacian) where the radial component
    is φV″ + ½φ′V′ and each tangential one is (φ/r)V′.
    """
    r = ref.require_exterior(r)
    p, dp = ref.phi(r), ref.dphi(r)
    dv, d2v = ref.dV(r), ref.d2V(r)
    rad = p * d2v + 0.5 * dp * dv
    tan = (p / r) * dv
    return rad, tan, rad + 2.0 * tan


def t_function(ref: ReferenceManifold, r, cos_theta):
    """Direction-dependent curvature quantity T(r, ν).

    Defined through the static potential by
    T = (Δ̄V − D̄²V(ν,ν))/V + Ric(ν,ν), with ν at angle θ to the radial
    direction.  Vanishes identically in vacuum, and for V = √φ also in
    the radial direction; the complement scalar_curvature − T carries
    the remaining null-energy component.
    """
    rad, tan, lap = hessian_potential(ref, r)
    c2 = np.asarray(cos_theta, dtype=float) ** 2
    hess_nu = c2 * rad + (1.0 - c2) * tan
    return (lap - hess_nu) / ref.V(r) + ricci_normal(ref, r, cos_theta)


# ----------------------------------------------------------------------
# isothermal (conformally flat) profile

@dataclass(frozen=True)
class ConformalProfile:
    """Change of radial variable with gbar = F⁴(ρ)(dρ² + ρ² dS²).

    The defining ODE is d ln ρ / d ln r = 1/√φ, anchored so that
    ρ/r → 1 at the outer end (at infinity for analytic kinds, at the
    last tabulated radius otherwise), making F = √(r/ρ) → 1.
    """

    ref: ReferenceManifold
    r_lo: float
    r_hi: float
    rho_lo: float
    rho_hi: float
    rho_horizon: float
    _y_of_tau: Callable      # y = ln(ρ/r) as a function of τ = ln r

    def _y(self, tau):
        # dense ODE output wants a 1-D argument
        tau = np.asarray(tau, dtype=float)
        flat = np.asarray(self._y_of_tau(np.atleast_1d(tau).ravel()), dtype=float)
        return flat.reshape(tau.shape)

    def rho_of_r(self, r):
        r = np.asarray(r, dtype=float)
        self._check_r(r)
        return r * np.exp(self._y(np.log(r)))

    def r_of_rho(self, rho):
        rho = np.asarray(rho, dtype=float)
        if np.any(rho < self.rho_lo * (1 - 1e-12)) or np.any(rho > self.rho_hi * (1 + 1e-12)):
            raise ValueError("rho outside the profile range")
        target = np.log(rho)
        # Newton in ln r: d ln ρ/d ln r = 1/√φ
        tau = np.log(np.clip(rho, self.r_lo, self.r_hi))
        lo, hi = np.log(self.r_lo), np.log(self.r_hi)
        resid = np.inf
        for _ in range(12):
            lnrho = tau + self._y(tau)
            resid = lnrho - target
            if np.max(np.abs(resid)) < 1e-13:
                break
            step = resid * np.sqrt(self.ref.phi(np.exp(tau)))
            tau = np.clip(tau - step, lo, hi)
        if np.max(np.abs(resid)) > 1e-9:
            raise ValueError("r_of_rho failed to converge")
        return np.exp(tau)

    def F_of_rho(self, rho):
        r = self.r_of_rho(rho)
        return np.sqrt(r / np.asarray(rho, dtype=float))

    def dF_drho(self, rho):
        rho = np.asarray(rho, dtype=float)
        r = self.r_of_rho(rho)
        F = np.sqrt(r / rho)
        return r * (np.sqrt(self.ref.phi(r)) - 1.0) / (2.0 * rho**2 * F)

    def d2F_drho2(self, rho):
        rho = np.asarray(rho, dtype=float)
        r = self.r_of_rho(rho)
        F = np.sqrt(r / rho)
        sqp = np.sqrt(self.ref.phi(r))
        dp = self.ref.dphi(r)
        N = r * (sqp - 1.0)
        dNdrho = (r / rho) * (sqp * (sqp - 1.0) + 0.5 * r * dp)
        dF = N / (2.0 * rho**2 * F)
        return dNdrho / (2.0 * rho**2 * F) - dF * (2.0 / rho + dF / F)

    def h_of_rho(self, rho):
        """h = 1/F² = ρ/r, the flat-picture flow speed."""
        rho = np.asarray(rho, dtype=float)
        return rho / self.r_of_rho(rho)

    def dh_drho(self, rho):
        r = self.r_of_rho(rho)
        return (1.0 - np.sqrt(self.ref.phi(r))) / r

    def d2h_drho2(self, rho):
        rho = np.asarray(rho, dtype=float)
        r = self.r_of_rho(rho)
        p = self.ref.phi(r)
        sqp = np.sqrt(p)
        return (-0.5 * r * self.ref.dphi(r) + p - sqp) / (rho * r)

    def drho_dr(self, r):
        r = np.asarray(r, dtype=float)
        self._check_r(r)
        return self.rho_of_r(r) / (r * np.sqrt(self.ref.phi(r)))

    def _check_r(self, r):
        if np.any(r < self.r_lo * (1 - 1e-12)) or np.any(r > self.r_hi * (1 + 1e-12)):
            raise ValueError("r outside the profile range")


def _tail_anchor(ref: ReferenceManifold, r_out: float) -> float:
    """y(r_out) = −∫_{r_out}^∞ (1/√φ − 1) dt/t via the substitution t = r_out/x."""

    def integrand(x):
        t = r_out / x
        return (1.0 / np.sqrt(ref.phi(t)) - 1.0) / x

    val, _ = quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    return -val


def _horizon_rho(ref: ReferenceManifold, y0: float, r0: float) -> float:
    """Continue y from r0 down to the horizon; integrable sqrt singularity."""
    r_h = ref.r_horizon
    if r_h <= 0.0:
        return 0.0

    if ref.dphi(r_h) <= 0.0:
        # degenerate (extremal) horizon: infinite isothermal depth
        return 0.0

    w_series = 1e-4 * np.sqrt(r_h)

    def integrand(w):  # t = r_h + w², dt/t = 2w dw/(r_h + w²)
        t = r_h + w**2
        if w < w_series:
            # series around the simple zero of phi; the direct formula
            # loses phi to cancellation once w² drops near ulp(r_h)
            dp = ref.dphi(t)
            corr = 1.0 - 0.25 * ref.d2phi(t) * w**2 / dp
            return 2.0 * corr / (np.sqrt(dp) * t) - 2.0 * w / t
        return (1.0 / np.sqrt(ref.phi(t)) - 1.0) * 2.0 * w / t

    val, _ = quad(integrand, 0.0, np.sqrt(r0 - r_h),
                  epsabs=1e-12, epsrel=1e-11, limit=200)
    return r_h * np.exp(y0 - val)


def isothermal_profile(ref: ReferenceManifold, r_grid) -> ConformalProfile:
    """Integrate the isothermal coordinate over the span of r_grid.

    The grid sets the represented range only; accuracy comes from the
    adaptive integrator (rtol 1e-11), integrated inward in ln r from
    the outer anchor where the normalization is imposed.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    if r_grid.ndim != 1 or r_grid.size < 2 or np.any(np.diff(r_grid) <= 0):
        raise ValueError("r_grid must be increasing with at least 2 points")
    if r_grid[0] <= ref.r_horizon:
        raise ValueError("r_grid touches the horizon")
    ref.require_exterior(r_grid[[0, -1]])
    r_lo, r_hi = float(r_grid[0]), float(r_grid[-1])

    if ref.kind == "tabulated":
        y_hi = 0.0  # normalize at the last tabulated radius
    else:
        y_hi = _tail_anchor(ref, r_hi)

    def rhs(tau, y):
        return 1.0 / np.sqrt(ref.phi(np.exp(tau))) - 1.0

    sol = solve_ivp(rhs, (np.log(r_hi), np.log(r_lo)), [y_hi],
                    method="RK45", rtol=1e-11, atol=1e-14, dense_output=True)
    if not sol.success:
        raise ValueError(f"profile integration failed: {sol.message}")
    dense = sol.sol
    tau_lo, tau_hi = np.log(r_lo), np.log(r_hi)

    def y_of_tau(tau):
        tau = np.asarray(tau, dtype=float)
        return dense(np.clip(tau, tau_lo, tau_hi))[0]

    y_lo = float(y_of_tau(tau_lo))
    rho_lo = r_lo * np.exp(y_lo)
    rho_hi = r_hi * np.exp(y_hi)
    rho_h = _horizon_rho(ref, y_lo, r_lo)
    return ConformalProfile(ref, r_lo, r_hi, rho_lo, rho_hi, rho_h, y_of_tau)


def profile_to_csv(profile: ConformalProfile, r_values) -> str:
    """Rows r,rho,F for the given radii (deterministic %.17g formatting)."""
    r_values = np.asarray(r_values, dtype=float)
    rho = profile.rho_of_r(r_values)
    F = np.sqrt(r_values / rho)
    lines = ["r,rho,F"]
    for ri, pi, fi in zip(r_values, rho, F):
        lines.append(f"{ri:.17g},{pi:.17g},{fi:.17g}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# static-structure report

def static_check(ref: ReferenceManifold, r_grid, n_angles: int = 21) -> dict:
    """Pointwise structural checks of the reference on a radial grid.

    Verifies dV/dr > 0, dF/dρ < 0, radial Ricci < 0, and the two-sided
    curvature bound 0 ≤ T ≤ R̄ over a grid of normal angles.  Equality
    of T with either bound (within 1e-12 absolute) is flagged, not
    failed: vacuum saturates both, electrovacuum saturates each at the
    extreme angles.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    ref.require_exterior(r_grid)
    checks = {}

    def record(name, values, locations):
        values = np.asarray(values)
        i = int(np.argmin(values))
        checks[name] = {
            "passed": bool(values[i] > 0),
            "min_margin": float(values[i]),
            "location": locations[i],
        }

    locs_r = [float(r) for r in r_grid]
    record("dV_dr_positive", ref.dV(r_grid), locs_r)
    profile = isothermal_profile(ref, r_grid)
    rho = profile.rho_of_r(r_grid)
    record("dF_drho_negative", -profile.dF_drho(rho), locs_r)
    lam_rad, _ = ricci_eigenvalues(ref, r_grid)
    record("radial_ricci_negative", -lam_rad, locs_r)

    cos_grid = np.linspace(0.0, 1.0, n_angles)
    rr, cc = np.meshgrid(r_grid, cos_grid, indexing="ij")
    T = t_function(ref, rr, cc)
    R = scalar_curvature(ref, rr)
    eps = 1e-12
    locs_rc = [(float(r), float(c)) for r in r_grid for c in cos_grid]
    record("t_nonnegative", (T + eps).ravel(), locs_rc)
    record("t_below_scalar_curvature", (R - T + eps).ravel(), locs_rc)

    saturation = {
        "t_zero": bool(np.any(np.abs(T) < 1e-12)),
        "t_equals_scalar_curvature": bool(np.any(np.abs(R - T) < 1e-12)),
    }
    first_violation = None
    for name, c in checks.items():
        if not c["passed"]:
            first_violation = {"check": name, "location": c["location"]}
            break
    return {
        "passed": all(c["passed"] for c in checks.values()),
        "checks": checks,
        "saturation": saturation,
        "first_violation": first_violation,
    }
