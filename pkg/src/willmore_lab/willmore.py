"""Energy, Euler-Lagrange field, conformal transforms, eps-expansion, re-graphing.

The energy is I = int (H^2/4 - D) dSigma (and W = int H^2/4 dSigma).  The
Euler-Lagrange field is the normal-variation gradient

    1/2 Lap_M H + H (H^2/4 - D)
    + (lam1-lam2)/2 [R(N,e1,N,e1) - R(N,e2,N,e2)]
    + sum_ij (nabla_{e_i} R)(N,e_j,e_j,e_i)

paired so that d/dt I(S(w+tv))|_0 = int field * (rho v) dSigma for radial
graphs of radius rho.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (CatalogDerivativeMissing, CenterTooClose,
                     FitIllConditioned, NewtonDiverged)
from .metrics import AmbientMetric
from .sphere import SphereGrid, SphericalFunction, project_perp
from .surfaces import (GRAPH_KINDS, ImmersedSphere, SurfaceGeometry,
                       standard_graph, surface_geometry)


@dataclass
class EnergyReport:
    I: float
    W: float
    area: float
    n_theta: int
    lmax: int
    quad_error: float | None = None


def energy(metric: AmbientMetric, surf, quad_error=False) -> EnergyReport:
    """Quadrature of the Willmore integrands over the surface.

    With quad_error=True (graph kinds only) the surface is resampled on a
    grid with n_theta+8 nodes and the change in I is reported.
    """
    geom = surf if isinstance(surf, SurfaceGeometry) else surface_geometry(metric, surf)
    grid = geom.grid
    I = geom.integrate(geom.q)
    W = geom.integrate(geom.H**2 / 4.0)
    area = geom.integrate(np.ones_like(geom.H))
    qerr = None
    if quad_error and geom.surf.kind in GRAPH_KINDS:
        p, rho, u = geom.surf.reference
        fine = SphereGrid(grid.n_theta + 8, grid.lmax, n_phi=2 * (grid.n_theta + 8))
        uf = SphericalFunction.from_coeffs(fine, u.coeffs)
        gf = surface_geometry(metric, standard_graph(fine, p, rho, uf, kind=geom.surf.kind))
        qerr = abs(gf.integrate(gf.q) - I)
    return EnergyReport(I=I, W=W, area=area, n_theta=grid.n_theta, lmax=grid.lmax,
                        quad_error=qerr)


def surface_laplacian(geom: SurfaceGeometry, f: SphericalFunction):
    """Laplace-Beltrami of a scalar through the induced metric, spectrally.

    Lap f = g1^ij (f_ij - Gam^k_ij f_k) with the surface Christoffels taken
    from nabla_{Z_i} Z_j projected onto the tangents.
    """
    ft, fp = f.grad()
    ftt, ftp, fpp = f.hess_chart()
    hess = np.stack([np.stack([ftt, ftp], -1), np.stack([ftp, fpp], -1)], -2)
    covd2 = geom.covariant_second()
    # Gam^k_ij = g1^{kl} g(nabla_{Z_i} Z_j, Z_l)
    proj = np.einsum("...mn,...ijm,...ln->...ijl", geom.g_amb, covd2, geom.surf.Z)
    gam_surf = np.einsum("...kl,...ijl->...ijk", geom.g1inv, proj)
    df = np.stack([ft, fp], -1)
    return np.einsum("...ij,...ij->...", geom.g1inv,
                     hess - np.einsum("...ijk,...k->...ij", gam_surf, df))


def euler_lagrange(metric: AmbientMetric, surf, form="printed") -> SphericalFunction:
    """Euler-Lagrange field of the conformal Willmore energy at the nodes.

    form="printed": the classical conformal-Willmore-surface expression

        1/2 Lap_M H + H (H^2/4 - D)
        + (lam1-lam2)/2 [R(N,e1,N,e1) - R(N,e2,N,e2)]
        + sum_ij (nabla_{e_i} R)(N,e_j,e_j,e_i)

    (curvature slots in the convention R(X,Y,Z,W) = g(R(Z,W)Y,X)).  This is
    the form whose projected zero set carries the explicit small-radius
    expansions (the w ~ rho^2 law and the (pi/5)|S|^2 rho^4 reduced energy).

    form="gradient": the exact normal-variation gradient density

        1/2 Lap_M H + H (H^2/4 - D) + 1/2 H Ric(N,N) - H Ksec(T_x M)
        + (nabla_N Rm)(e1,e2,e2,e1) - div_M( 2 Ric(N,.)^tangential )

    derived from the first variations of H and dSigma plus Gauss-Bonnet and
    validated against central-difference gradients of the energy.  The two
    forms agree in flat space and share the flat linearization, but differ at
    first order in the curvature: only "gradient" vanishes identically on
    critical surfaces, and only its kernel components track derivatives of
    the reduced functional.

    For graph kinds the field is weighted by the cosine -g(Theta, N) between
    the radial graph direction and the inward normal, so that (in gradient
    form) d/dt I(S(u + t v))|_0 = int field * (rho v) dSigma holds exactly.
    """
    geom = surf if isinstance(surf, SurfaceGeometry) else surface_geometry(metric, surf)
    grid = geom.grid
    lapH = surface_laplacian(geom, geom.H_function())
    field = 0.5 * lapH + geom.H * geom.q
    if not metric.flat:
        if metric.perturbation.catalog_id == "custom" and metric.perturbation.max_order < 3:
            raise CatalogDerivativeMissing("Euler-Lagrange needs third metric derivatives")
        X = geom.surf.X
        riem, ric, _, _, nabla = metric.curvature_tensors(X, need_grad=True)
        N, e1, e2 = geom.normal, geom.e1, geom.e2
        if form == "printed":
            r11 = np.einsum("...mnst,...m,...n,...s,...t->...", riem, N, e1, N, e1)
            r22 = np.einsum("...mnst,...m,...n,...s,...t->...", riem, N, e2, N, e2)
            field = field + 0.5 * (geom.lam1 - geom.lam2) * (r11 - r22)
            frame = np.stack([e1, e2], axis=-2)
            field = field + np.einsum("...amnst,...ia,...m,...jn,...js,...it->...",
                                      nabla, frame, N, frame, frame, frame)
        elif form == "gradient":
            # standard-convention Riemann Rm[a,b,c,d] = g(R(e_a,e_b)e_c, e_d)
            Rm = np.einsum("...dcab->...abcd", riem)
            dRm = np.einsum("...xdcab->...xabcd", nabla)
            Z = geom.surf.Z
            ginv = np.linalg.inv(geom.g_amb)
            ric_nn = np.einsum("...mn,...m,...n->...", ric, N, N)
            ksec = np.einsum("...abcd,...a,...b,...c,...d->...", Rm, e1, e2, e2, e1)
            dnk = np.einsum("...xabcd,...x,...a,...b,...c,...d->...", dRm, N, e1, e2, e2, e1)
            vfull = 2.0 * np.einsum("...mn,...nk,...k->...m", ginv, ric, N)
            vnorm = np.einsum("...mn,...m,...n->...", geom.g_amb, vfull, N)
            vtan = vfull - vnorm[..., None] * N
            dv = np.empty(vtan.shape[:2] + (2, 3))
            for mu in range(3):
                f = SphericalFunction.from_values(grid, vtan[..., mu])
                ft, fp = f.grad()
                dv[..., 0, mu] = ft
                dv[..., 1, mu] = fp
            covdv = dv + np.einsum("...mab,...ia,...b->...im", geom.gamma_amb, Z, vtan)
            divv = np.einsum("...ij,...mn,...im,...jn->...", geom.g1inv, geom.g_amb,
                             covdv, Z)
            field = field + 0.5 * geom.H * ric_nn - geom.H * ksec + dnk - divv
        else:
            raise ValueError(f"unknown form {form!r}")
    if geom.surf.kind in GRAPH_KINDS:
        cosw = -np.einsum("...mn,...m,...n->...", geom.g_amb, grid.dirs, geom.normal)
        field = field * cosw
    return SphericalFunction.from_values(grid, field)


# -- Moebius transforms --------------------------------------------------------


class SphereInversion:
    """x -> c + r^2 (x - c)/|x - c|^2."""

    def __init__(self, center, radius=1.0):
        self.center = np.asarray(center, dtype=float).reshape(3)
        self.radius = float(radius)

    def __call__(self, x):
        d = x - self.center
        n2 = np.sum(d * d, axis=-1, keepdims=True)
        return self.center + self.radius**2 * d / n2

    def jacobian(self, x):
        d = x - self.center
        n2 = np.sum(d * d, axis=-1)
        u = d / np.sqrt(n2)[..., None]
        eye = np.broadcast_to(np.eye(3), x.shape + (3,))
        return self.radius**2 / n2[..., None, None] * (
            eye - 2.0 * np.einsum("...m,...n->...mn", u, u))

    def min_distance(self, X):
        return float(np.min(np.linalg.norm(X - self.center, axis=-1)))


class Similarity:
    """x -> scale * Q x + shift with Q orthogonal."""

    def __init__(self, scale=1.0, shift=(0.0, 0.0, 0.0), rotation=None):
        self.scale = float(scale)
        self.shift = np.asarray(shift, dtype=float).reshape(3)
        self.rotation = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)

    def __call__(self, x):
        return self.scale * np.einsum("mn,...n->...m", self.rotation, x) + self.shift

    def jacobian(self, x):
        return np.broadcast_to(self.scale * self.rotation, x.shape + (3,))

    def min_distance(self, X):
        return np.inf


def moebius_transform(surf: ImmersedSphere, transform) -> ImmersedSphere:
    """Push the surface through a conformal map; tangents via the Jacobian.

    A rotation-free similarity maps a radial graph to a radial graph around
    the mapped center, so that case keeps the analytic graph representation.
    """
    if transform.min_distance(surf.X) < 1e-3:
        raise CenterTooClose("inversion center within 1e-3 of the surface")
    if (isinstance(transform, Similarity) and surf.kind in GRAPH_KINDS
            and np.array_equal(transform.rotation, np.eye(3))):
        p, rho, u = surf.reference
        return standard_graph(surf.grid, transform(p), transform.scale * rho, u,
                              kind=surf.kind)
    X = transform(surf.X)
    J = transform.jacobian(surf.X)
    Z = np.einsum("...mn,...in->...im", J, surf.Z)
    return ImmersedSphere(kind="moebius_image", grid=surf.grid, X=X, Z=Z)


# -- expansion of the energy in the metric perturbation ------------------------


@dataclass
class EpsilonFit:
    I0: float
    G1: float
    G2: float
    residual: float
    eps: np.ndarray
    values: np.ndarray

    def slope(self):
        """log-log slope of |I_eps| between the two largest eps samples."""
        v, e = np.abs(self.values), self.eps
        return float(np.log(v[0] / v[1]) / np.log(e[0] / e[1]))


def epsilon_fit(perturbation, surface_builder, eps_list, grid=None) -> EpsilonFit:
    """Least-squares fit of I_eps to I0 + G1*eps + G2*eps^2.

    surface_builder(metric) -> ImmersedSphere evaluated at each eps sample.
    """
    eps = np.asarray(sorted(eps_list, reverse=True), dtype=float)
    if len(eps) < 4:
        raise FitIllConditioned("need at least 4 eps samples")
    vals = []
    for e in eps:
        m = AmbientMetric(perturbation, e)
        vals.append(energy(m, surface_builder(m)).I)
    vals = np.asarray(vals)
    A = np.stack([np.ones_like(eps), eps, eps**2], axis=-1)
    cond = np.linalg.cond(A)
    if cond > 1e12:
        raise FitIllConditioned(f"eps design matrix cond={cond:.2e}")
    coef, _, _, _ = np.linalg.lstsq(A, vals, rcond=None)
    resid = float(np.max(np.abs(A @ coef - vals)))
    return EpsilonFit(I0=float(coef[0]), G1=float(coef[1]), G2=float(coef[2]),
                      residual=resid, eps=eps, values=vals)


# -- re-graphing onto a kernel-orthogonal perturbation --------------------------


def _regraph_values(ref, p_new, rho_new, grid):
    """Graph function of an existing radial graph seen from (p_new, rho_new).

    Per node direction, finds the original chart direction whose surface
    point lies on the new ray (fixed point, contraction O(|p_new-p| + sup u)).
    """
    p, rho, u = ref
    target = grid.dirs.reshape(-1, 3)
    theta = target.copy()
    miss = np.inf
    for _ in range(200):
        Xs = p + rho * (1.0 - grid.synthesize_at_dirs(u.coeffs, theta))[:, None] * theta
        rel = Xs - p_new
        dist = np.linalg.norm(rel, axis=-1)
        hat = rel / dist[:, None]
        miss = np.max(np.linalg.norm(hat - target, axis=-1))
        if miss < 1e-13:
            break
        theta = theta + (target - hat)
        theta /= np.linalg.norm(theta, axis=-1, keepdims=True)
    else:
        raise NewtonDiverged(f"ray re-graphing stalled at miss={miss:.2e}")
    return 1.0 - dist.reshape(grid.n_theta, grid.n_phi) / rho_new


def regraph_orthogonal(metric: AmbientMetric, surf: ImmersedSphere,
                       tol=1e-10, max_iter=30):
    """Re-express a radial graph with a kernel-orthogonal graph function.

    Newton iteration on the 4 unknowns (rho, p) zeroing the l=0 and l=1
    coefficients of the re-graphed function; returns (p_new, rho_new, w_perp)
    with project_perp(w_perp) = w_perp.
    """
    if surf.kind not in GRAPH_KINDS or surf.reference is None:
        raise ValueError("regraph_orthogonal needs a radial graph surface")
    p0, rho0, u = surf.reference
    grid = surf.grid
    if u.sup() >= 0.2:
        raise ValueError("graph function too large for re-graphing (sup >= 0.2)")

    ref = (np.asarray(p0, dtype=float), float(rho0), u)
    p_new, rho_new = np.array(p0, dtype=float), float(rho0)
    # linear response of the kernel coefficients: a00 = sqrt(4pi)(1 - rho0/rho)
    # responds to rho, and a shift dp of the center adds dp.Theta/rho, i.e.
    # sqrt(4pi/3)/rho times dp in the (Y_1m ~ y, z, x) coefficients.
    kc = None
    for _ in range(max_iter):
        vals = _regraph_values(ref, p_new, rho_new, grid)
        f = SphericalFunction.from_values(grid, vals)
        kc = f.coeffs[grid.kernel_mask]
        if np.max(np.abs(kc)) < tol:
            c = f.coeffs.copy()
            c[grid.kernel_mask] = 0.0
            return p_new, rho_new, SphericalFunction.from_coeffs(grid, c)
        rho_new = rho_new - kc[0] * rho_new / np.sqrt(4.0 * np.pi)
        cst = rho_new * np.sqrt(3.0 / (4.0 * np.pi))
        p_new = p_new - cst * np.array([kc[3], kc[1], kc[2]])
    raise NewtonDiverged(f"kernel coefficients still {np.max(np.abs(kc)):.2e} "
                         f"after {max_iter} iterations")


# -- torus chart (flat metric only) ---------------------------------------------
#
# The sphere-spectral machinery does not apply to genus-1 surfaces; tori get a
# doubly periodic chart with FFT differentiation.  Used for the closed-form
# Willmore-torus oracle and for conformal-invariance trials on a non-sphere.


class TorusChart:
    """Immersion of a torus over a periodic (u, v) grid in flat ambient space."""

    def __init__(self, X):
        self.X = np.asarray(X, dtype=float)
        self.nu, self.nv = self.X.shape[0], self.X.shape[1]

    @classmethod
    def of_revolution(cls, R=np.sqrt(2.0), r=1.0, nu=64, nv=64):
        u = 2.0 * np.pi * np.arange(nu) / nu
        v = 2.0 * np.pi * np.arange(nv) / nv
        uu, vv = np.meshgrid(u, v, indexing="ij")
        ring = R + r * np.cos(vv)
        X = np.stack([ring * np.cos(uu), ring * np.sin(uu), r * np.sin(vv)], axis=-1)
        return cls(X)

    def _fft_deriv(self, f, axis):
        n = f.shape[axis]
        k = np.fft.fftfreq(n, d=1.0 / n) * 1j
        shape = [1, 1]
        shape[axis] = n
        return np.real(np.fft.ifft(np.fft.fft(f, axis=axis) * k.reshape(shape), axis=axis))

    def energies(self):
        """(I, W, area) by spectral differentiation of the chart."""
        X = self.X
        d = self._fft_deriv
        Zu = np.stack([d(X[..., m], 0) for m in range(3)], -1)
        Zv = np.stack([d(X[..., m], 1) for m in range(3)], -1)
        E = np.einsum("...m,...m->...", Zu, Zu)
        F = np.einsum("...m,...m->...", Zu, Zv)
        G = np.einsum("...m,...m->...", Zv, Zv)
        det1 = E * G - F * F
        N = np.cross(Zu, Zv)
        N /= np.linalg.norm(N, axis=-1, keepdims=True)
        Xuu = np.stack([d(d(X[..., m], 0), 0) for m in range(3)], -1)
        Xuv = np.stack([d(d(X[..., m], 0), 1) for m in range(3)], -1)
        Xvv = np.stack([d(d(X[..., m], 1), 1) for m in range(3)], -1)
        e = np.einsum("...m,...m->...", Xuu, N)
        f = np.einsum("...m,...m->...", Xuv, N)
        g = np.einsum("...m,...m->...", Xvv, N)
        H = (e * G - 2 * f * F + g * E) / det1
        D = (e * g - f * f) / det1
        w = (2.0 * np.pi / self.nu) * (2.0 * np.pi / self.nv) * np.sqrt(det1)
        return (float(np.sum((H**2 / 4.0 - D) * w)),
                float(np.sum(H**2 / 4.0 * w)),
                float(np.sum(w)))

    def transformed(self, transform):
        if transform.min_distance(self.X) < 1e-3:
            raise CenterTooClose("inversion center within 1e-3 of the torus")
        return TorusChart(transform(self.X))


def torus_willmore_oracle(R, r, n=2048):
    """W of a torus of revolution by 1d quadrature of the closed-form H.

    k1 = cos(v)/(R + r cos(v)), k2 = 1/r, dSigma = r (R + r cos(v)) du dv.
    """
    v = 2.0 * np.pi * np.arange(n) / n
    ring = R + r * np.cos(v)
    H = np.cos(v) / ring + 1.0 / r
    return float(np.sum(H**2 / 4.0 * r * ring) * (2.0 * np.pi / n) * (2.0 * np.pi))
