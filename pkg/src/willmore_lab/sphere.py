"""Scalar spectral calculus on the unit sphere.

Grid: Gauss-Legendre nodes in the polar angle (poles excluded) crossed with a
uniform azimuthal grid.  Scalar fields are represented either by node values
or by coefficients in the real, fully normalized spherical-harmonic basis up
to degree ``lmax``.  Transforms are dense projections: with ``lmax <= n_theta-1``
the quadrature integrates products of basis functions exactly, so
analyze/synthesize is an exact round trip on band-limited fields (up to
roundoff).

Chart derivatives (d/dtheta, d/dphi, and second derivatives) are synthesized
directly from coefficients using associated-Legendre recurrences evaluated at
the interior nodes.  Fields that need differentiating must therefore be smooth
functions on the sphere; derivative values are never themselves re-analyzed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


def degree_of_index(k):
    """Spherical-harmonic degree l of flat coefficient index k = l*l + (m+l)."""
    return np.floor(np.sqrt(k)).astype(int)


class SphereGrid:
    """Gauss-Legendre x uniform quadrature grid with a harmonic transform plan.

    Parameters
    ----------
    n_theta : number of Gauss-Legendre nodes in theta (interior of (0, pi)).
    lmax    : maximum harmonic degree; must satisfy lmax <= n_theta - 1.
    n_phi   : azimuthal nodes, default 2*n_theta.
    """

    def __init__(self, n_theta=25, lmax=24, n_phi=None):
        if lmax > n_theta - 1:
            raise ValueError(f"lmax={lmax} needs n_theta >= lmax+1, got {n_theta}")
        self.n_theta = int(n_theta)
        self.n_phi = int(n_phi) if n_phi is not None else 2 * self.n_theta
        self.lmax = int(lmax)

        x, wgl = np.polynomial.legendre.leggauss(self.n_theta)
        order = np.argsort(-x)             # theta increasing away from north pole
        self.cos_theta = x[order]
        self.theta = np.arccos(self.cos_theta)
        self.sin_theta = np.sqrt(1.0 - self.cos_theta**2)
        self.wtheta = wgl[order]
        self.phi = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi

        # node weights for \int_{S^2} f dSigma0 (unit-sphere measure)
        self.node_weight = np.outer(self.wtheta, np.full(self.n_phi, 2.0 * np.pi / self.n_phi))

        self.n_nodes = self.n_theta * self.n_phi
        self.n_coef = (self.lmax + 1) ** 2
        ls = degree_of_index(np.arange(self.n_coef))
        self.degrees = ls
        self.eig_laplace = -ls * (ls + 1.0)
        # eigenvalues of Delta(Delta+2): l(l+1)(l(l+1)-2); zero on l <= 1
        self.eig_bilap = ls * (ls + 1.0) * (ls * (ls + 1.0) - 2.0)
        self.kernel_mask = ls <= 1

        st, ct = self.sin_theta[:, None], self.cos_theta[:, None]
        cp, sp = np.cos(self.phi)[None, :], np.sin(self.phi)[None, :]
        self.dirs = np.stack([st * cp, st * sp, ct * np.ones_like(cp)], axis=-1)
        # coordinate frame of the polar chart and its normalized azimuthal leg
        self.e_theta = np.stack([ct * cp, ct * sp, -st * np.ones_like(cp)], axis=-1)
        self.e_phi_hat = np.stack([-sp * np.ones_like(ct), cp * np.ones_like(ct),
                                   np.zeros((self.n_theta, self.n_phi))], axis=-1)

        self._legendre_tables()
        self._syn = self._build_matrix(self._pbar, kind="f")
        self._ana = (self._syn * self.node_weight.reshape(-1, 1)).T
        self._deriv_cache = {}

    # -- basis construction -------------------------------------------------

    def _legendre_tables(self):
        """Normalized associated Legendre P̄_lm and d/dtheta, d2/dtheta2 tables."""
        L = self.lmax
        nt = self.n_theta
        x, st = self.cos_theta, self.sin_theta
        pbar = np.zeros((nt, L + 1, L + 1))
        pbar[:, 0, 0] = 1.0 / np.sqrt(4.0 * np.pi)
        for m in range(1, L + 1):
            pbar[:, m, m] = np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * st * pbar[:, m - 1, m - 1]
        for m in range(0, L):
            pbar[:, m + 1, m] = np.sqrt(2.0 * m + 3.0) * x * pbar[:, m, m]
            for l in range(m + 2, L + 1):
                a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
                b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
                pbar[:, l, m] = a * (x * pbar[:, l - 1, m] - b * pbar[:, l - 2, m])

        dpbar = np.zeros_like(pbar)
        for m in range(0, L + 1):
            for l in range(m, L + 1):
                c = np.sqrt((l * l - m * m) * (2.0 * l + 1.0) / (2.0 * l - 1.0)) if l > 0 else 0.0
                prev = pbar[:, l - 1, m] if l - 1 >= m else 0.0
                dpbar[:, l, m] = (l * x * pbar[:, l, m] - c * prev) / st

        d2pbar = np.zeros_like(pbar)
        for m in range(0, L + 1):
            for l in range(m, L + 1):
                ll1 = l * (l + 1.0)
                d2pbar[:, l, m] = (-x / st) * dpbar[:, l, m] - (ll1 - (m / st) ** 2) * pbar[:, l, m]

        self._pbar, self._dpbar, self._d2pbar = pbar, dpbar, d2pbar

    def _build_matrix(self, ptab, kind):
        """Dense synthesis matrix [n_nodes, n_coef] for the value or a derivative.

        kind: 'f' values, 'dphi' phi-derivative trig factor, 'dphi2' second.
        """
        L = self.lmax
        cols = np.empty((self.n_theta, self.n_phi, self.n_coef))
        mphi = np.outer(np.arange(L + 1), self.phi)
        cosm, sinm = np.cos(mphi), np.sin(mphi)
        for l in range(L + 1):
            for m in range(-l, l + 1):
                k = l * l + (m + l)
                am = abs(m)
                rad = ptab[:, l, am][:, None]
                if kind == "f":
                    if m == 0:
                        ang = np.ones(self.n_phi)[None, :]
                    elif m > 0:
                        ang = np.sqrt(2.0) * cosm[m][None, :]
                    else:
                        ang = np.sqrt(2.0) * sinm[am][None, :]
                elif kind == "dphi":
                    if m == 0:
                        ang = np.zeros(self.n_phi)[None, :]
                    elif m > 0:
                        ang = -m * np.sqrt(2.0) * sinm[m][None, :]
                    else:
                        ang = am * np.sqrt(2.0) * cosm[am][None, :]
                elif kind == "dphi2":
                    if m == 0:
                        ang = np.zeros(self.n_phi)[None, :]
                    elif m > 0:
                        ang = -(m * m) * np.sqrt(2.0) * cosm[m][None, :]
                    else:
                        ang = -(m * m) * np.sqrt(2.0) * sinm[am][None, :]
                else:
                    raise ValueError(kind)
                cols[:, :, k] = rad * ang
        return cols.reshape(self.n_nodes, self.n_coef)

    def _deriv_matrix(self, which):
        """Lazily built synthesis matrices for chart derivatives."""
        if which not in self._deriv_cache:
            if which == "dth":
                mat = self._build_matrix(self._dpbar, "f")
            elif which == "dph":
                mat = self._build_matrix(self._pbar, "dphi")
            elif which == "dth2":
                mat = self._build_matrix(self._d2pbar, "f")
            elif which == "dthph":
                mat = self._build_matrix(self._dpbar, "dphi")
            elif which == "dph2":
                mat = self._build_matrix(self._pbar, "dphi2")
            else:
                raise ValueError(which)
            self._deriv_cache[which] = mat
        return self._deriv_cache[which]

    # -- transforms ----------------------------------------------------------

    def analyze(self, values):
        """Project node values onto harmonic coefficients (exact if band-limited)."""
        return self._ana @ np.asarray(values).reshape(self.n_nodes)

    def synthesize(self, coeffs, which="f"):
        """Evaluate a coefficient vector (or one of its chart derivatives) on the grid."""
        mat = self._syn if which == "f" else self._deriv_matrix(which)
        return (mat @ np.asarray(coeffs)).reshape(self.n_theta, self.n_phi)

    def integrate(self, values):
        """Quadrature of node values against the unit-sphere area element."""
        return float(np.sum(self.node_weight * np.asarray(values)))

    def basis_values(self, l, m):
        k = l * l + (m + l)
        return self._syn[:, k].reshape(self.n_theta, self.n_phi)

    def synthesize_at(self, coeffs, theta, phi):
        """Evaluate a coefficient vector at arbitrary off-grid angles."""
        L = self.lmax
        theta = np.asarray(theta, dtype=float).reshape(-1)
        phi = np.asarray(phi, dtype=float).reshape(-1)
        x = np.cos(theta)
        st = np.sin(theta)
        npts = len(theta)
        pbar = np.zeros((npts, L + 1, L + 1))
        pbar[:, 0, 0] = 1.0 / np.sqrt(4.0 * np.pi)
        for m in range(1, L + 1):
            pbar[:, m, m] = np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * st * pbar[:, m - 1, m - 1]
        for m in range(0, L):
            pbar[:, m + 1, m] = np.sqrt(2.0 * m + 3.0) * x * pbar[:, m, m]
            for l in range(m + 2, L + 1):
                a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
                b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
                pbar[:, l, m] = a * (x * pbar[:, l - 1, m] - b * pbar[:, l - 2, m])
        coeffs = np.asarray(coeffs)
        out = np.zeros(npts)
        for l in range(L + 1):
            for m in range(-l, l + 1):
                c = coeffs[l * l + (m + l)]
                if c == 0.0:
                    continue
                am = abs(m)
                if m == 0:
                    out += c * pbar[:, l, 0]
                elif m > 0:
                    out += c * np.sqrt(2.0) * pbar[:, l, m] * np.cos(m * phi)
                else:
                    out += c * np.sqrt(2.0) * pbar[:, l, am] * np.sin(am * phi)
        return out

    def synthesize_at_dirs(self, coeffs, dirs):
        """Evaluate a coefficient vector at arbitrary unit directions."""
        dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
        theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
        phi = np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2.0 * np.pi)
        return self.synthesize_at(coeffs, theta, phi)


@dataclass
class SphericalFunction:
    """Scalar field on the sphere, carried as grid values and/or coefficients."""

    grid: SphereGrid
    _values: np.ndarray | None = None
    _coeffs: np.ndarray | None = None

    @classmethod
    def from_values(cls, grid, values):
        return cls(grid, _values=np.asarray(values, dtype=float))

    @classmethod
    def from_coeffs(cls, grid, coeffs):
        return cls(grid, _coeffs=np.asarray(coeffs, dtype=float))

    @classmethod
    def zero(cls, grid):
        return cls(grid, _coeffs=np.zeros(grid.n_coef))

    @property
    def values(self):
        if self._values is None:
            self._values = self.grid.synthesize(self._coeffs)
        return self._values

    @property
    def coeffs(self):
        if self._coeffs is None:
            self._coeffs = self.grid.analyze(self._values)
        return self._coeffs

    def grad(self):
        """Chart derivatives (f_theta, f_phi) at the nodes."""
        c = self.coeffs
        return self.grid.synthesize(c, "dth"), self.grid.synthesize(c, "dph")

    def hess_chart(self):
        """Plain chart second derivatives (f_tt, f_tp, f_pp) at the nodes."""
        c = self.coeffs
        return (self.grid.synthesize(c, "dth2"),
                self.grid.synthesize(c, "dthph"),
                self.grid.synthesize(c, "dph2"))

    def sup(self):
        return float(np.max(np.abs(self.values)))

    def l2(self):
        return float(np.sqrt(np.sum(self.coeffs**2)))

    def __add__(self, other):
        if isinstance(other, SphericalFunction):
            return SphericalFunction.from_coeffs(self.grid, self.coeffs + other.coeffs)
        return SphericalFunction.from_values(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, SphericalFunction):
            return SphericalFunction.from_coeffs(self.grid, self.coeffs - other.coeffs)
        return SphericalFunction.from_values(self.grid, self.values - other)

    def __mul__(self, scalar):
        return SphericalFunction.from_coeffs(self.grid, self.coeffs * float(scalar))

    __rmul__ = __mul__


# -- diagonal operators -------------------------------------------------------


def _warn_if_saturated(f):
    c, ls = f.coeffs, f.grid.degrees
    top = np.sqrt(np.sum(c[ls >= f.grid.lmax - 1] ** 2))
    tot = np.sqrt(np.sum(c**2))
    if tot > 0 and top > 1e-6 * tot:
        log.warning("field has %.1e relative energy at the truncation degree", top / tot)


def laplace_beltrami(f: SphericalFunction) -> SphericalFunction:
    """Round-sphere Laplacian: coefficients scaled by -l(l+1)."""
    _warn_if_saturated(f)
    return SphericalFunction.from_coeffs(f.grid, f.grid.eig_laplace * f.coeffs)


def willmore_operator(f: SphericalFunction) -> SphericalFunction:
    """Apply Delta(Delta+2); kernel is the l <= 1 band."""
    return SphericalFunction.from_coeffs(f.grid, f.grid.eig_bilap * f.coeffs)


def project_perp(f: SphericalFunction) -> SphericalFunction:
    """L2-orthogonal projection off the l <= 1 kernel band."""
    c = f.coeffs.copy()
    c[f.grid.kernel_mask] = 0.0
    return SphericalFunction.from_coeffs(f.grid, c)


def invert_on_perp(f: SphericalFunction) -> SphericalFunction:
    """Inverse of Delta(Delta+2) on the orthogonal complement of its kernel."""
    g = f.grid
    c = np.zeros(g.n_coef)
    m = ~g.kernel_mask
    c[m] = f.coeffs[m] / g.eig_bilap[m]
    return SphericalFunction.from_coeffs(g, c)


# -- quadrature identities for quadratic forms in a symmetric matrix ----------


@dataclass
class IdentityReport:
    name: str
    lhs: float
    rhs: float
    abs_err: float = field(init=False)

    def __post_init__(self):
        self.abs_err = abs(self.lhs - self.rhs)


def ricci_integral_identities(grid: SphereGrid, ric) -> list[IdentityReport]:
    """Check the four closed-form sphere averages of a symmetric bilinear form.

    With T the radial direction, T1 the polar coordinate leg and P2 the
    normalized azimuthal leg, returns lhs/rhs pairs for

      (i)   int (x^mu)^2            = 4 pi / 3   (each mu; lhs is the worst one)
      (ii)  int q(T,T)              = (4 pi / 3) tr q
      (iii) int q(T,T)^2            = (4 pi / 15)(2|q|^2 + (tr q)^2)
      (iv)  int [q(T1,P2)^2 - q(T1,T1) q(P2,P2)] = (2 pi / 3)(|q|^2 - (tr q)^2)
    """
    q = np.asarray(ric, dtype=float)
    if q.shape != (3, 3) or not np.allclose(q, q.T, atol=1e-12):
        raise ValueError("expected a symmetric 3x3 matrix")
    tr = np.trace(q)
    sq = float(np.sum(q * q))

    T, T1, P2 = grid.dirs, grid.e_theta, grid.e_phi_hat
    quad = grid.integrate

    def form(u, v):
        return np.einsum("...i,ij,...j->...", u, q, v)

    worst = max((quad(T[..., mu] ** 2) for mu in range(3)),
                key=lambda v: abs(v - 4.0 * np.pi / 3.0))
    reports = [
        IdentityReport("coordinate_square", worst, 4.0 * np.pi / 3.0),
        IdentityReport("radial_mean", quad(form(T, T)), 4.0 * np.pi / 3.0 * tr),
        IdentityReport("radial_square",
                       quad(form(T, T) ** 2),
                       4.0 * np.pi / 15.0 * (2.0 * sq + tr * tr)),
        IdentityReport("tangent_cross",
                       quad(form(T1, P2) ** 2 - form(T1, T1) * form(P2, P2)),
                       2.0 * np.pi / 3.0 * (sq - tr * tr)),
    ]
    return reports
