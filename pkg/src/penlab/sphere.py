"""Pseudospectral scalar calculus on Gauss-Legendre x uniform sphere grids.

Fields live on a tensor grid of Gauss-Legendre colatitude nodes and
equispaced longitudes.  Longitudinal derivatives are exact Fourier
derivatives.  Colatitude derivatives are evaluated by expanding each
azimuthal Fourier mode in normalized associated Legendre functions and
re-synthesizing with analytically differentiated basis tables, so no
numerical differentiation matrix is ever applied to a non-smooth
composite field.

For a field band-limited to degree n_theta - 1 the first three partial
derivatives are exact to roundoff, and the quadrature rule integrates
spherical harmonics up to degree 2*n_theta - 1 exactly.  Products of
resolved smooth fields alias only in the spectrally small tail, which is
the usual pseudospectral compromise.
"""

from __future__ import annotations

import numpy as np


class SphereGrid:
    """Tensor-product sphere grid with spectral derivative tables.

    Parameters
    ----------
    n_theta : int
        Number of Gauss-Legendre colatitude nodes (>= 4).
    n_phi : int
        Number of uniform longitude nodes (>= 4, even).

    Attributes
    ----------
    theta, x, w : (n_theta,) arrays
        Colatitude nodes (increasing), x = cos(theta) and Gauss-Legendre
        weights for integration in x.
    phi : (n_phi,) array
        Longitude nodes.
    quad : (n_theta, 1) array
        Solid-angle quadrature weights; (field * quad).sum() integrates
        over the unit sphere with measure sin(theta) dtheta dphi.
    """

    def __init__(self, n_theta: int, n_phi: int):
        if n_theta < 4:
            raise ValueError("n_theta must be at least 4")
        if n_phi < 4 or n_phi % 2:
            raise ValueError("n_phi must be even and at least 4")
        self.n_theta = n_theta
        self.n_phi = n_phi

        x, w = np.polynomial.legendre.leggauss(n_theta)
        # descending x = increasing theta, north pole first
        order = np.argsort(-x)
        self.x = x[order]
        self.w = w[order]
        self.theta = np.arccos(self.x)
        self.sin_theta = np.sqrt(1.0 - self.x**2)
        self.cos_theta = self.x
        self.phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
        self.quad = (self.w * 2.0 * np.pi / n_phi)[:, None]

        self.lmax = n_theta - 1
        # rfft keeps modes 0..n_phi/2; the Nyquist mode carries no usable
        # phase so the band limit stops one short of it
        self.mmax = min(self.lmax, n_phi // 2 - 1)
        self._build_tables()

    # ------------------------------------------------------------------
    # basis tables

    def _build_tables(self):
        nt, lmax, mmax = self.n_theta, self.lmax, self.mmax
        x, sin = self.x, self.sin_theta
        cot = self.x / sin
        inv_sin2 = 1.0 / sin**2

        P = np.zeros((mmax + 1, nt, lmax + 1))
        pmm = np.full(nt, 1.0 / np.sqrt(2.0))
        for m in range(mmax + 1):
            if m > 0:
                pmm = pmm * np.sqrt((2 * m + 1) / (2.0 * m)) * sin
            P[m, :, m] = pmm
            if m + 1 <= lmax:
                P[m, :, m + 1] = np.sqrt(2 * m + 3.0) * x * pmm
            for ell in range(m + 2, lmax + 1):
                a = np.sqrt((4.0 * ell**2 - 1.0) / (ell**2 - m**2))
                b = np.sqrt(((2.0 * ell + 1.0) * ((ell - 1.0) ** 2 - m**2))
                            / ((2.0 * ell - 3.0) * (ell**2 - m**2)))
                P[m, :, ell] = a * x * P[m, :, ell - 1] - b * P[m, :, ell - 2]

        ells = np.arange(lmax + 1, dtype=float)
        m2 = np.arange(mmax + 1, dtype=float)[:, None, None] ** 2
        lam = (ells * (ells + 1.0))[None, None, :]

        # dP/dtheta = (l x P_l - d_lm P_{l-1}) / sin
        d = np.zeros((mmax + 1, lmax + 1))
        for m in range(mmax + 1):
            for ell in range(m, lmax + 1):
                if ell >= 1:
                    d[m, ell] = np.sqrt((2.0 * ell + 1.0) / (2.0 * ell - 1.0)
                                        * (ell**2 - m**2))
        Pshift = np.zeros_like(P)
        Pshift[:, :, 1:] = P[:, :, :-1]
        dP = (ells[None, None, :] * x[None, :, None] * P
              - d[:, None, :] * Pshift) / sin[None, :, None]

        # second and third derivatives from the associated Legendre ODE
        c1 = cot[None, :, None]
        s2 = inv_sin2[None, :, None]
        d2P = -c1 * dP - (lam - m2 * s2) * P
        d3P = (-c1 * d2P + (s2 + m2 * s2 - lam) * dP
               - 2.0 * m2 * (cot * inv_sin2)[None, :, None] * P)

        self._tables = (P, dP, d2P, d3P)
        self._analysis = P * self.w[None, :, None]
        # zero out the (l < m) padding defensively
        mask = ells[None, :] >= np.arange(mmax + 1)[:, None]
        self._coeff_mask = mask

    # ------------------------------------------------------------------
    # transforms

    def analyze(self, field: np.ndarray) -> np.ndarray:
        """Expand a real grid field; returns complex coeffs (mmax+1, lmax+1)."""
        fhat = np.fft.rfft(field, axis=1) / self.n_phi
        C = np.einsum('mil,im->ml', self._analysis, fhat[:, : self.mmax + 1])
        return C * self._coeff_mask

    def synthesize(self, C: np.ndarray, dtheta: int = 0, dphi: int = 0) -> np.ndarray:
        """Evaluate (d/dtheta)^a (d/dphi)^b of the expansion on the grid."""
        if not 0 <= dtheta <= 3:
            raise ValueError("dtheta order must be 0..3")
        tab = self._tables[dtheta]
        Cm = C
        if dphi:
            im = (1j * np.arange(self.mmax + 1)) ** dphi
            Cm = C * im[:, None]
        ghat = np.einsum('mil,ml->im', tab, Cm)
        full = np.zeros((self.n_theta, self.n_phi // 2 + 1), dtype=complex)
        full[:, : self.mmax + 1] = ghat
        return np.fft.irfft(full * self.n_phi, n=self.n_phi, axis=1)

    def partials(self, field: np.ndarray, third: bool = False) -> dict:
        """All partial derivatives of a smooth scalar field up to order 2 (or 3).

        Returns a dict keyed by 't', 'p', 'tt', 'tp', 'pp' and, with
        third=True, also 'ttt', 'ttp', 'tpp', 'ppp'.
        """
        C = self.analyze(field)
        out = {
            't': self.synthesize(C, 1, 0),
            'p': self.synthesize(C, 0, 1),
            'tt': self.synthesize(C, 2, 0),
            'tp': self.synthesize(C, 1, 1),
            'pp': self.synthesize(C, 0, 2),
        }
        if third:
            out['ttt'] = self.synthesize(C, 3, 0)
            out['ttp'] = self.synthesize(C, 2, 1)
            out['tpp'] = self.synthesize(C, 1, 2)
            out['ppp'] = self.synthesize(C, 0, 3)
        return out

    def project(self, field: np.ndarray) -> np.ndarray:
        """Band-limit a field to the resolved modes (dealiasing projection)."""
        return self.synthesize(self.analyze(field))

    def spectral_tail_fraction(self, field: np.ndarray) -> float:
        """Fraction of coefficient energy in the top two degrees.

        A resolved smooth field has a tiny tail; values near one mean the
        grid is too coarse for the field and derivatives are unreliable.
        """
        C = self.analyze(field)
        ells = np.arange(self.lmax + 1)
        power = np.abs(C) ** 2
        total = power.sum()
        if total == 0.0:
            return 0.0
        tail = power[:, ells >= self.lmax - 1].sum()
        return float(tail / total)

    def integrate(self, field: np.ndarray) -> float:
        """Solid-angle integral of a grid field."""
        return float((field * self.quad).sum())

    # ------------------------------------------------------------------
    # helmholtz-style solve on the round sphere, used as a preconditioner

    def round_helmholtz_inverse(self, field: np.ndarray, alpha: float) -> np.ndarray:
        """Solve (1 + alpha * L) u = field with L = -Laplacian of the unit sphere."""
        C = self.analyze(field)
        ells = np.arange(self.lmax + 1, dtype=float)
        C = C / (1.0 + alpha * ells * (ells + 1.0))[None, :]
        return self.synthesize(C)
