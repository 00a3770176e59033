"""Fundamental forms, curvatures and the Willmore integrand of immersed spheres.

Surfaces are parametrized over a SphereGrid.  Graph kinds hold their radial
graph function u (surface = p + rho*(1-u)*Theta) as harmonic coefficients, so
tangents and chart second derivatives are analytic in the truncated basis.
Other kinds carry node positions/tangents; chart second derivatives fall back
to spectral differentiation of the position components.

The normal is the inward g-unit normal; with it round spheres have H = 2/rho
and D = 1/rho^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateImmersion, OrientationAmbiguous
from .metrics import AmbientMetric
from .sphere import SphereGrid, SphericalFunction

GRAPH_KINDS = ("standard_graph", "geodesic_graph", "blended")


def _dir_derivs(grid: SphereGrid):
    """Theta and its chart derivatives up to second order, cached on the grid."""
    if not hasattr(grid, "_dirvecs"):
        st, ct = grid.sin_theta[:, None], grid.cos_theta[:, None]
        cp, sp = np.cos(grid.phi)[None, :], np.sin(grid.phi)[None, :]
        one = np.ones_like(st * cp)
        T = grid.dirs
        T_t = grid.e_theta
        T_p = np.stack([-st * sp, st * cp, 0 * one], axis=-1)
        T_tt = -T
        T_tp = np.stack([-ct * sp, ct * cp, 0 * one], axis=-1)
        T_pp = np.stack([-st * cp, -st * sp, 0 * one], axis=-1)
        grid._dirvecs = (T, T_t, T_p, T_tt, T_tp, T_pp)
    return grid._dirvecs


@dataclass
class ImmersedSphere:
    """Map S^2 -> R^3 sampled on a SphereGrid, with tangent data.

    kind: standard_graph | geodesic_graph | blended | moebius_image.
    For graph kinds, ``reference`` is (p, rho, u) with u a SphericalFunction.
    """

    kind: str
    grid: SphereGrid
    X: np.ndarray                       # [nt, nphi, 3]
    Z: np.ndarray                       # [nt, nphi, 2, 3] chart tangents
    d2X: np.ndarray | None = None       # [nt, nphi, 2, 2, 3]
    reference: tuple | None = None      # (p, rho, u) for graph kinds

    @property
    def center(self):
        if self.reference is not None:
            return self.reference[0]
        return np.einsum("tp,tpi->i", self.grid.node_weight, self.X) / (4.0 * np.pi)

    def second_derivatives(self):
        """Chart second derivatives of the position, spectral fallback."""
        if self.d2X is None:
            g = self.grid
            d2 = np.empty(self.X.shape[:2] + (2, 2, 3))
            for mu in range(3):
                f = SphericalFunction.from_values(g, self.X[..., mu])
                ftt, ftp, fpp = f.hess_chart()
                d2[..., 0, 0, mu] = ftt
                d2[..., 0, 1, mu] = ftp
                d2[..., 1, 0, mu] = ftp
                d2[..., 1, 1, mu] = fpp
            self.d2X = d2
        return self.d2X


def standard_graph(grid: SphereGrid, p, rho, u=None, kind="standard_graph") -> ImmersedSphere:
    """Radial graph p + rho*(1-u(Theta))*Theta over the standard sphere."""
    p = np.asarray(p, dtype=float).reshape(3)
    rho = float(rho)
    if u is None:
        u = SphericalFunction.zero(grid)
    T, T_t, T_p, T_tt, T_tp, T_pp = _dir_derivs(grid)
    uv = u.values
    if np.any(1.0 - uv <= 0.0):
        raise DegenerateImmersion("graph function reaches 1: not a radial graph")
    ut, up = u.grad()
    utt, utp, upp = u.hess_chart()
    r = rho * (1.0 - uv)
    X = p + r[..., None] * T
    Z = np.empty(X.shape[:2] + (2, 3))
    Z[..., 0, :] = rho * ((1.0 - uv)[..., None] * T_t - ut[..., None] * T)
    Z[..., 1, :] = rho * ((1.0 - uv)[..., None] * T_p - up[..., None] * T)
    d2X = np.empty(X.shape[:2] + (2, 2, 3))
    d2X[..., 0, 0, :] = rho * (-utt[..., None] * T - 2 * ut[..., None] * T_t
                               + (1 - uv)[..., None] * T_tt)
    mixed = rho * (-utp[..., None] * T - ut[..., None] * T_p - up[..., None] * T_t
                   + (1 - uv)[..., None] * T_tp)
    d2X[..., 0, 1, :] = mixed
    d2X[..., 1, 0, :] = mixed
    d2X[..., 1, 1, :] = rho * (-upp[..., None] * T - 2 * up[..., None] * T_p
                               + (1 - uv)[..., None] * T_pp)
    return ImmersedSphere(kind=kind, grid=grid, X=X, Z=Z, d2X=d2X, reference=(p, rho, u))


@dataclass
class SurfaceGeometry:
    """Per-node first/second fundamental forms and derived curvature data."""

    surf: ImmersedSphere
    metric: AmbientMetric
    g_amb: np.ndarray          # ambient metric at the nodes [.., 3, 3]
    gamma_amb: np.ndarray | None
    g1: np.ndarray             # first fundamental form [.., 2, 2]
    g1inv: np.ndarray
    h2: np.ndarray             # second fundamental form [.., 2, 2]
    normal: np.ndarray         # inward unit normal [.., 3]
    H: np.ndarray
    D: np.ndarray
    lam1: np.ndarray
    lam2: np.ndarray
    q: np.ndarray              # (lam1-lam2)^2/4 = H^2/4 - D, stable form
    e1: np.ndarray             # unit principal directions, ambient components
    e2: np.ndarray
    umbilic: np.ndarray        # bool mask where directions were tie-broken
    dens: np.ndarray           # area element relative to the unit-sphere measure
    covd2: np.ndarray | None = None   # nabla_{Z_i} Z_j, ambient components

    _H_fun: SphericalFunction | None = None

    @property
    def grid(self):
        return self.surf.grid

    def covariant_second(self):
        """nabla_{Z_i} Z_j at the nodes (chart d2X plus ambient connection)."""
        if self.covd2 is None:
            d2X = self.surf.second_derivatives()
            self.covd2 = d2X if self.gamma_amb is None else d2X + np.einsum(
                "...mab,...ia,...jb->...ijm", self.gamma_amb, self.surf.Z, self.surf.Z)
        return self.covd2

    def H_function(self) -> SphericalFunction:
        if self._H_fun is None:
            self._H_fun = SphericalFunction.from_values(self.grid, self.H)
        return self._H_fun

    def integrate(self, values):
        """Surface integral of a node field against dSigma."""
        return self.grid.integrate(values * self.dens)


def surface_geometry(metric: AmbientMetric, surf: ImmersedSphere) -> SurfaceGeometry:
    grid = surf.grid
    X, Z = surf.X, surf.Z

    g_amb = metric.metric(X)
    gamma_amb = None if metric.flat else metric.christoffel(X)

    g1 = np.einsum("...mn,...im,...jn->...ij", g_amb, Z, Z)
    detg1 = g1[..., 0, 0] * g1[..., 1, 1] - g1[..., 0, 1] ** 2
    if np.any(detg1 <= 0.0):
        raise DegenerateImmersion("det of first fundamental form <= 0 at a node")
    g1inv = np.empty_like(g1)
    g1inv[..., 0, 0] = g1[..., 1, 1] / detg1
    g1inv[..., 1, 1] = g1[..., 0, 0] / detg1
    g1inv[..., 0, 1] = -g1[..., 0, 1] / detg1
    g1inv[..., 1, 0] = g1inv[..., 0, 1]

    # normal: flat cross product gives a covector annihilating the tangents
    omega = np.cross(Z[..., 0, :], Z[..., 1, :])
    nvec = np.linalg.solve(g_amb, omega[..., None])[..., 0]
    nn = np.sqrt(np.einsum("...mn,...m,...n->...", g_amb, nvec, nvec))
    nvec = nvec / nn[..., None]
    to_center = surf.center - X
    inward = np.einsum("...mn,...m,...n->...", g_amb, nvec, to_center)
    scale = np.sqrt(np.einsum("...mn,...m,...n->...", g_amb, to_center, to_center))
    if np.any(np.abs(inward) < 1e-10 * scale):
        raise OrientationAmbiguous("inward test inconclusive at a node")
    nvec = np.where((inward > 0)[..., None], nvec, -nvec)

    # second fundamental form.  For graph kinds the chart second derivatives
    # are analytic and h_ij = g(nabla_{Z_i} Z_j, N) avoids differentiating the
    # (non-band-limited) normal; otherwise use Weingarten with dN spectral.
    covd2 = None
    if surf.kind in GRAPH_KINDS:
        covd2 = surf.second_derivatives().copy()
        if gamma_amb is not None:
            covd2 = covd2 + np.einsum("...mab,...ia,...jb->...ijm", gamma_amb, Z, Z)
        h2 = np.einsum("...mn,...ijm,...n->...ij", g_amb, covd2, nvec)
    else:
        dN = np.empty(X.shape[:2] + (2, 3))
        for mu in range(3):
            f = SphericalFunction.from_values(grid, nvec[..., mu])
            ft, fp = f.grad()
            dN[..., 0, mu] = ft
            dN[..., 1, mu] = fp
        covdN = dN
        if gamma_amb is not None:
            covdN = dN + np.einsum("...mab,...ia,...b->...im", gamma_amb, Z, nvec)
        h2 = -np.einsum("...mn,...im,...jn->...ij", g_amb, covdN, Z)
    h2 = 0.5 * (h2 + np.swapaxes(h2, -1, -2))

    H = np.einsum("...ij,...ij->...", g1inv, h2)
    deth2 = h2[..., 0, 0] * h2[..., 1, 1] - h2[..., 0, 1] ** 2
    D = deth2 / detg1
    # (lam1-lam2)^2/4 = H^2/4 - D computed as -det of the trace-free part of
    # the shape operator: algebraically identical, but the roundoff of the
    # direct difference (~eps_mach H^2) is replaced by one quadratic in the
    # trace-free entries, so near-umbilic surfaces evaluate cleanly
    M = np.einsum("...ik,...kj->...ij", g1inv, h2)
    e00 = M[..., 0, 0] - H / 2.0
    e11 = M[..., 1, 1] - H / 2.0
    q = np.maximum(-(e00 * e11 - M[..., 0, 1] * M[..., 1, 0]), 0.0)
    umb = q <= np.maximum((1e-8 * H) ** 2, 1e-13 * (H * H / 4.0 + np.abs(D)))
    disc = np.sqrt(q)
    lam1, lam2 = H / 2.0 + disc, H / 2.0 - disc

    e1, e2 = _principal_directions(g_amb, g1inv, h2, Z, lam1, H, umb)

    dens = np.sqrt(detg1) / grid.sin_theta[:, None]

    return SurfaceGeometry(surf=surf, metric=metric, g_amb=g_amb, gamma_amb=gamma_amb,
                           g1=g1, g1inv=g1inv, h2=h2, normal=nvec, H=H, D=D,
                           lam1=lam1, lam2=lam2, q=q, e1=e1, e2=e2, umbilic=umb,
                           dens=dens, covd2=covd2)


def _principal_directions(g_amb, g1inv, h2, Z, lam1, H, umb):
    """Eigenvectors of the shape operator, g-orthonormalized; ties broken
    with the coordinate frame (the (lam1-lam2) factor downstream vanishes there)."""
    M = np.einsum("...ik,...kj->...ij", g1inv, h2)

    # rows of (M - lam1 I) are orthogonal to the eigenvector in the chart
    r1 = np.stack([M[..., 0, 1], lam1 - M[..., 0, 0]], axis=-1)
    r2 = np.stack([lam1 - M[..., 1, 1], M[..., 1, 0]], axis=-1)
    pick = (np.abs(r1[..., 0]) + np.abs(r1[..., 1])
            >= np.abs(r2[..., 0]) + np.abs(r2[..., 1]))
    v1 = np.where(pick[..., None], r1, r2)
    v1 = np.where(umb[..., None], np.stack([np.ones_like(H), np.zeros_like(H)], -1), v1)

    e1 = np.einsum("...i,...im->...m", v1, Z)
    n1 = np.sqrt(np.einsum("...mn,...m,...n->...", g_amb, e1, e1))
    e1 = e1 / n1[..., None]

    # second direction: g-orthogonal complement within the tangent plane
    e2 = Z[..., 1, :] - np.einsum("...mn,...m,...n->...", g_amb, Z[..., 1, :], e1)[..., None] * e1
    small = np.sqrt(np.einsum("...mn,...m,...n->...", g_amb, e2, e2)) \
        < 1e-8 * np.sqrt(np.einsum("...mn,...m,...n->...", g_amb, Z[..., 1, :], Z[..., 1, :]))
    alt = Z[..., 0, :] - np.einsum("...mn,...m,...n->...", g_amb, Z[..., 0, :], e1)[..., None] * e1
    e2 = np.where(small[..., None], alt, e2)
    n2 = np.sqrt(np.einsum("...mn,...m,...n->...", g_amb, e2, e2))
    e2 = e2 / n2[..., None]
    return e1, e2


def willmore_integrand(geom: SurfaceGeometry) -> SphericalFunction:
    """Node field H^2/4 - D (equals (lam1-lam2)^2/4, evaluated stably)."""
    return SphericalFunction.from_values(geom.grid, geom.q)
