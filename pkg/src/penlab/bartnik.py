"""Conformal lapse solver: prescribed scalar curvature along a foliation.

Given a foliation of the reference exterior and boundary mean-curvature
data, solves the parabolic equation

    H0 du/ds = u² Δ_σ u + (u − u³) c,   c = detA0 + T/2 − Ric(ν, ν),

along the leaves.  The resulting metric u² ds² + σ_s has scalar
curvature R̄ + (1/u² − 1) T by construction, which scalar_residual
verifies discretely.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .flow import Foliation, advected_derivative, drift_fields
from .surfgeom import CurvedGeometry

__all__ = [
    "StepRejected",
    "UField",
    "reaction_coefficient",
    "initial_u",
    "advance_u",
    "solve_u",
    "scalar_residual",
]


class StepRejected(RuntimeError):
    """A step left the maximum-principle bounds; retry with a smaller ds."""


def reaction_coefficient(geom: CurvedGeometry) -> np.ndarray:
    """c = detA0 + T/2 − Ric(ν,ν); positivity drives u monotonically to 1."""
    return geom.det_a0 + 0.5 * geom.t_field - geom.ric_nu


def initial_u(h_physical, h_background) -> np.ndarray:
    """Lapse from boundary mean-curvature data: u0 = H0/H.

    The glued metric carries mean curvature H0/u on each leaf, so matching
    the physical boundary data H means u0 = H0/H.  Both fields must be
    strictly positive.
    """
    h = np.asarray(h_physical, dtype=float)
    h0 = np.asarray(h_background, dtype=float)
    if np.any(h <= 0.0):
        raise ValueError("physical mean curvature must be positive")
    if np.any(h0 <= 0.0):
        raise ValueError("background mean curvature must be positive")
    return h0 / h


# ----------------------------------------------------------------------
# coefficient bundles: everything one step needs, interpolable in s

@dataclass
class _Bundle:
    H0: np.ndarray
    c: np.ndarray
    tau_t: np.ndarray
    tau_p: np.ndarray
    p_tt: np.ndarray
    p_tp: np.ndarray
    p_pp: np.ndarray
    inv_root: np.ndarray
    area_radius: float


def _make_bundle(geom: CurvedGeometry) -> _Bundle:
    inv_tt, inv_tp, inv_pp = geom.inverse_metric()
    root = np.sqrt(geom.det_sig)
    tau_t, tau_p = drift_fields(geom)
    return _Bundle(
        H0=geom.H0,
        c=reaction_coefficient(geom),
        tau_t=tau_t,
        tau_p=tau_p,
        p_tt=root * inv_tt,
        p_tp=root * inv_tp,
        p_pp=root * inv_pp,
        inv_root=1.0 / root,
        area_radius=geom.area_radius(),
    )


def _blend(bundles, weights) -> _Bundle:
    def mix(name):
        return sum(w * getattr(b, name) for b, w in zip(bundles, weights))

    return _Bundle(
        H0=mix("H0"), c=mix("c"), tau_t=mix("tau_t"), tau_p=mix("tau_p"),
        p_tt=mix("p_tt"), p_tp=mix("p_tp"), p_pp=mix("p_pp"),
        inv_root=mix("inv_root"),
        area_radius=float(mix("area_radius")),
    )


def _lagrange3(s_nodes, t):
    s0, s1, s2 = s_nodes
    return (
        (t - s1) * (t - s2) / ((s0 - s1) * (s0 - s2)),
        (t - s0) * (t - s2) / ((s1 - s0) * (s1 - s2)),
        (t - s0) * (t - s1) / ((s2 - s0) * (s2 - s1)),
    )


def _laplacian(grid, b: _Bundle, v: np.ndarray) -> np.ndarray:
    C = grid.analyze(v)
    vt = grid.synthesize(C, dtheta=1)
    vp = grid.synthesize(C, dphi=1)
    flux_t = b.p_tt * vt + b.p_tp * vp
    flux_p = b.p_tp * vt + b.p_pp * vp
    div = (grid.synthesize(grid.analyze(flux_t), dtheta=1)
           + grid.synthesize(grid.analyze(flux_p), dphi=1))
    return b.inv_root * div


def _rate(grid, b: _Bundle, u: np.ndarray, advect: bool) -> np.ndarray:
    out = (u**2 * _laplacian(grid, b, u) + (u - u**3) * b.c) / b.H0
    if advect:
        out = out + advected_derivative(grid, u, b.tau_t, b.tau_p)
    return out


def _imex_step(grid, u0, b0, b1, ds, advect, n_fixed=3, gmres_tol=1e-12):
    """One trapezoidal step, Laplacian implicit with frozen u² coefficient."""
    shape = u0.shape
    n = u0.size
    base = u0 + 0.5 * ds * _rate(grid, b0, u0, advect)
    v = u0
    iters = 0
    for _ in range(n_fixed):
        coef = v**2 / b1.H0

        def matvec(x):
            x = x.reshape(shape)
            return (x - 0.5 * ds * coef * _laplacian(grid, b1, x)).ravel()

        rhs = base + 0.5 * ds * ((v - v**3) * b1.c / b1.H0)
        if advect:
            rhs = rhs + 0.5 * ds * advected_derivative(grid, v, b1.tau_t, b1.tau_p)

        alpha = 0.5 * ds * float(np.mean(coef)) / b1.area_radius**2

        def precond(x):
            # the spectral inverse band-limits; act as identity on whatever
            # falls outside the band so the preconditioner stays invertible
            f = x.reshape(shape)
            smooth = grid.round_helmholtz_inverse(f, alpha)
            return (smooth + (f - grid.project(f))).ravel()

        count = [0]

        def cb(_):
            count[0] += 1

        A = LinearOperator((n, n), matvec=matvec)
        M = LinearOperator((n, n), matvec=precond)
        sol, info = gmres(A, rhs.ravel(), x0=v.ravel(), M=M,
                          rtol=gmres_tol, atol=1e-14, restart=30, maxiter=60,
                          callback=cb, callback_type="legacy")
        if info != 0:
            # non-convergence means the step size overwhelmed the
            # frozen-coefficient linearization; callers retry smaller
            raise StepRejected(f"linear solve stalled (gmres info {info})")
        iters = max(iters, count[0])
        v_new = sol.reshape(shape)
        if np.max(np.abs(v_new - v)) < 1e-14:
            v = v_new
            break
        v = v_new
    return v, iters


def advance_u(geom: CurvedGeometry, u, ds: float, bounds=None) -> np.ndarray:
    """One step of the lapse equation along the normal trajectories.

    Coefficients are frozen on the given slice.  When `bounds` is given as
    (lo, hi), the maximum principle is enforced as a postcondition and a
    violation raises StepRejected so the caller can retry with a smaller ds.
    """
    if np.any(geom.H0 <= 0.0):
        raise ValueError("slice mean curvature must be positive")
    u = np.broadcast_to(np.asarray(u, dtype=float), geom.H0.shape).copy()
    if np.any(u <= 0.0):
        raise ValueError("u must be positive")
    b = _make_bundle(geom)
    u1, _ = _imex_step(geom.grid, u, b, b, ds, advect=False)
    if bounds is not None:
        _check_bounds(u1, *bounds)
    return u1


def _check_bounds(u, lo, hi):
    eps = 1e-10 * (1.0 + abs(hi))
    if np.min(u) < lo - eps or np.max(u) > hi + eps:
        raise StepRejected(
            f"u in [{np.min(u):.15g}, {np.max(u):.15g}] left [{lo:.15g}, {hi:.15g}]")


@dataclass
class UField:
    """Lapse solution sampled on the stored slices of a foliation."""

    foliation: Foliation
    s: np.ndarray
    u: list
    decay: np.ndarray
    min_coefficient: np.ndarray
    bounds: tuple
    decay_bounded: bool
    halvings: int
    max_gmres_iters: int
    residual: np.ndarray | None = None

    def max_u_minus_1(self) -> np.ndarray:
        return np.array([float(np.max(np.abs(ui - 1.0))) for ui in self.u])

    def series_csv(self) -> str:
        dev = self.max_u_minus_1()
        res = (np.full(len(self.u), np.nan) if self.residual is None
               else np.max(np.abs(self.residual), axis=(1, 2)))
        lines = ["s,max_u_minus_1,min_u,max_residual"]
        for i in range(len(self.u)):
            lines.append(f"{self.s[i]:.17g},{dev[i]:.17g},"
                         f"{float(np.min(self.u[i])):.17g},{res[i]:.17g}")
        return "\n".join(lines) + "\n"


def solve_u(fol: Foliation, u0, dt_max: float = 0.01, n_fixed: int = 2,
            gmres_tol: float = 1e-12, max_halvings: int = 8,
            adapt: bool = True, with_residual: bool = True) -> UField:
    """March the lapse equation across every stored window of a foliation.

    Coefficients are interpolated quadratically in s through the three
    nearest stored slices, so the substep size dt_max is decoupled from the
    slice spacing.  With adapt on, the substep grows as |u − 1| decays
    (local error scales with the deviation), up to 4x dt_max.  Steps that
    break the maximum-principle bounds are retried with halved substeps.
    """
    n = len(fol)
    if n < 2:
        raise ValueError("foliation must hold at least 2 slices")
    grid = fol.surfaces[0].grid
    u = np.broadcast_to(np.asarray(u0, dtype=float), fol.surfaces[0].G.shape).copy()
    if np.any(u <= 0.0):
        raise ValueError("u0 must be positive")

    lo = min(1.0, float(np.min(u)))
    hi = max(1.0, float(np.max(u)))

    bundles: dict[int, _Bundle] = {}

    def bundle(i):
        if i not in bundles:
            if len(bundles) > 4:
                bundles.pop(min(bundles))
            bundles[i] = _make_bundle(fol.geometry(i))
        return bundles[i]

    us = [u.copy()]
    min_c_list = [float(np.min(bundle(0).c))]
    if min_c_list[0] <= 0.0:
        raise ValueError(
            "coefficient detA0 + T/2 - Ric(nu,nu) not positive on slice 0")
    halvings = 0
    gmax = 0
    dev0 = float(np.max(np.abs(u - 1.0)))
    for k in range(n - 1):
        j = int(np.clip(k, 1, n - 2))
        nodes = (fol.s[j - 1], fol.s[j], fol.s[j + 1])
        nb = (bundle(j - 1), bundle(j), bundle(j + 1))
        c_next = float(np.min(bundle(k + 1).c))
        if c_next <= 0.0:
            raise ValueError(
                f"coefficient detA0 + T/2 - Ric(nu,nu) not positive on slice {k + 1}")

        window = fol.s[k + 1] - fol.s[k]
        dt_allow = dt_max
        if adapt:
            dev = float(np.max(np.abs(u - 1.0)))
            if dev0 == 0.0 or dev == 0.0:
                dt_allow = window
            else:
                dt_allow = dt_max * min(4.0, (dev0 / dev) ** (1.0 / 3.0))
        n_sub = max(1, int(np.ceil(window / dt_allow - 1e-12)))
        for attempt in range(max_halvings + 1):
            try:
                v = u
                dt = window / n_sub
                for i in range(n_sub):
                    t0 = fol.s[k] + i * dt
                    w0 = _lagrange3(nodes, t0)
                    w1 = _lagrange3(nodes, t0 + dt)
                    b0 = _blend(nb, w0)
                    b1 = _blend(nb, w1)
                    v, it = _imex_step(grid, v, b0, b1, dt, advect=True,
                                       n_fixed=n_fixed, gmres_tol=gmres_tol)
                    gmax = max(gmax, it)
                    _check_bounds(v, lo, hi)
                break
            except StepRejected:
                if attempt == max_halvings:
                    raise
                n_sub *= 2
                halvings += 1
        u = v
        us.append(u.copy())
        min_c_list.append(c_next)

    s = np.asarray(fol.s, dtype=float)
    dev = np.array([float(np.max(np.abs(ui - 1.0))) for ui in us])
    decay = s * dev
    bounded = bool(decay[-1] <= 1.25 * float(np.max(decay[:-1], initial=0.0)) + 1e-12)

    out = UField(
        foliation=fol, s=s, u=us, decay=decay,
        min_coefficient=np.asarray(min_c_list), bounds=(lo, hi),
        decay_bounded=bounded, halvings=halvings, max_gmres_iters=gmax)
    if with_residual and n >= 3:
        out.residual = scalar_residual(fol, out)
    return out


# ----------------------------------------------------------------------
# discrete scalar-curvature verification

def scalar_residual(fol: Foliation, ufield: UField,
                    include_coupling: bool = True) -> np.ndarray:
    """Residual of the prescribed-scalar-curvature relation per slice.

    Evaluates the 3D scalar curvature of u²ds² + σ_s through the
    mean-curvature first-variation identity plus the Gauss equation, with
    s-derivatives from second-order differences of the stored slices.  The
    same discrete functional evaluated at u ≡ 1 reproduces the reference
    background, so that case vanishes identically; with include_coupling
    False the matter term (1/u² − 1)T is left in the returned field.
    """
    n = len(fol)
    if n < 3:
        raise ValueError("need at least 3 slices for s-derivatives")
    grid = fol.surfaces[0].grid
    s = np.asarray(fol.s, dtype=float)
    ones = [np.ones_like(ui) for ui in ufield.u]

    out = np.empty((n,) + ufield.u[0].shape)
    for k in range(n):
        if k == 0:
            idx, kind = (0, 1, 2), "left"
        elif k == n - 1:
            idx, kind = (n - 3, n - 2, n - 1), "right"
        else:
            idx, kind = (k - 1, k, k + 1), "center"
        g = fol.geometry(k)
        tau_t, tau_p = drift_fields(g)

        def traj_dh(w):
            h0, h1, h2 = (fol.geometry(i).H0 / w[i] for i in idx)
            s0, s1, s2 = (s[i] for i in idx)
            if kind == "center":
                dsm, dsp = s1 - s0, s2 - s1
                tot = dsm + dsp
                fd = (h2 * dsm / (dsp * tot) - h0 * dsp / (dsm * tot)
                      + h1 * (dsp - dsm) / (dsm * dsp))
            else:
                # 3-point one-sided, second order on a uniform pair
                d = s1 - s0
                if kind == "left":
                    fd = (-3.0 * h0 + 4.0 * h1 - h2) / (2.0 * d)
                else:
                    fd = (3.0 * h2 - 4.0 * h1 + h0) / (2.0 * d)
            here = g.H0 / w[k]
            return fd - advected_derivative(grid, here, tau_t, tau_p)

        def num(w_list):
            # one functional for both fields so the two evaluations cancel
            # bitwise when u is exactly 1
            w = w_list[k]
            return (2.0 * g.gauss_k
                    - (2.0 / w) * (traj_dh(w_list) + g.laplacian(w))
                    - (g.a0_sq + g.H0**2) / w**2)

        u = ufield.u[k]
        target = (1.0 / u**2 - 1.0) * g.t_field if include_coupling else 0.0
        out[k] = (num(ufield.u) - num(ones)) - target
    return out
