"""Perturbed ambient metrics g = delta + eps*h and their curvature tensors.

Index conventions used throughout (all arrays batched over leading axes):

  h[..., m, n]                    symmetric perturbation
  d1[..., a, m, n]                d_a h_mn
  d2[..., a, b, m, n]             d_a d_b h_mn
  d3[..., a, b, c, m, n]          d_a d_b d_c h_mn
  gamma[..., s, m, n]             Gamma^s_mn
  riemann[..., m, n, s, t]        R(E_m, E_n, E_s, E_t) = g(R(E_s, E_t) E_n, E_m)
  nabla_riemann[..., a, m,n,s,t]  (nabla_a R)_mnst

The four-index curvature uses the convention R(X,Y,Z,W) = g(R(Z,W)Y,X) with
R(X,Y)Z = nab_X nab_Y Z - nab_Y nab_X Z - nab_[X,Y] Z; the Ricci tensor is the
frame trace Ric(u,v) = sum_k R(E_k, u, E_k, v), which is positive on round
spheres.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (CatalogDerivativeMissing, ExtrapolationDiverged,
                     NonPositiveDefinite)

CATALOG_IDS = ("gaussian_bump", "conformal_bump", "anisotropic_bump", "custom")


def _sym(a):
    a = np.asarray(a, dtype=float)
    if a.shape != (3, 3) or not np.allclose(a, a.T, atol=1e-12):
        raise ValueError("amplitude must be a symmetric 3x3 matrix")
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class MetricPerturbation:
    """Bilinear form h with analytic derivatives to order 3.

    Catalog entries are Gaussian bumps h_mn(x) = a_mn * exp(-sum_k (x-c)_k^2 / s_k^2);
    they decay fast at infinity together with all derivatives.  ``custom``
    entries supply their own callables and may omit high-order derivatives.
    """

    catalog_id: str
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma: np.ndarray = field(default_factory=lambda: np.ones(3))
    amplitude: np.ndarray = field(default_factory=lambda: np.eye(3))
    custom_funcs: tuple[Callable, ...] | None = None
    max_order: int = 3

    def __post_init__(self):
        if self.catalog_id not in CATALOG_IDS:
            raise ValueError(f"unknown catalog id {self.catalog_id!r}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        sig = np.asarray(self.sigma, dtype=float).reshape(-1)
        if sig.size == 1:
            sig = np.full(3, sig[0])
        if np.any(sig <= 0):
            raise ValueError("width sigma must be positive")
        object.__setattr__(self, "sigma", sig)
        object.__setattr__(self, "amplitude", _sym(self.amplitude))
        if self.catalog_id == "conformal_bump":
            a = self.amplitude
            if not np.allclose(a, a[0, 0] * np.eye(3), atol=1e-12):
                raise ValueError("conformal_bump needs amplitude c*I")
        if self.catalog_id == "custom" and self.custom_funcs is None:
            raise ValueError("custom perturbation needs callables")

    # profile helpers: phi = exp(-q), b_a = d_a q, B_ab = d_a b_b (constant)
    def _profile(self, x):
        x = np.asarray(x, dtype=float)
        u = (x - self.center) / self.sigma
        q = np.sum(u * u, axis=-1)
        phi = np.exp(-q)
        b = 2.0 * u / self.sigma
        B = np.diag(2.0 / self.sigma**2)
        return phi, b, B

    def eval(self, x):
        if self.catalog_id == "custom":
            return self.custom_funcs[0](np.asarray(x, dtype=float))
        phi, _, _ = self._profile(x)
        return phi[..., None, None] * self.amplitude

    def deriv1(self, x):
        if self.catalog_id == "custom":
            if len(self.custom_funcs) < 2 or self.custom_funcs[1] is None:
                raise CatalogDerivativeMissing("custom perturbation lacks deriv1")
            return self.custom_funcs[1](np.asarray(x, dtype=float))
        phi, b, _ = self._profile(x)
        return (-phi[..., None] * b)[..., :, None, None] * self.amplitude

    def deriv2(self, x):
        if self.catalog_id == "custom":
            if len(self.custom_funcs) < 3 or self.custom_funcs[2] is None:
                raise CatalogDerivativeMissing("custom perturbation lacks deriv2")
            return self.custom_funcs[2](np.asarray(x, dtype=float))
        phi, b, B = self._profile(x)
        core = np.einsum("...a,...b->...ab", b, b) - B
        return (phi[..., None, None] * core)[..., :, :, None, None] * self.amplitude

    def deriv3(self, x):
        if self.catalog_id == "custom":
            if len(self.custom_funcs) < 4 or self.custom_funcs[3] is None:
                raise CatalogDerivativeMissing("custom perturbation lacks deriv3")
            return self.custom_funcs[3](np.asarray(x, dtype=float))
        phi, b, B = self._profile(x)
        bB = (np.einsum("...a,bc->...abc", b, B)
              + np.einsum("...b,ac->...abc", b, B)
              + np.einsum("...c,ab->...abc", b, B))
        bbb = np.einsum("...a,...b,...c->...abc", b, b, b)
        return (phi[..., None, None, None] * (bB - bbb))[..., :, :, :, None, None] * self.amplitude

    def sup_norm(self):
        """Spectral-norm bound of h over R^3 (profile peaks at 1)."""
        if self.catalog_id == "custom":
            pts = self.center + np.linspace(-3, 3, 13)[:, None] * np.ones(3)
            return max(np.linalg.norm(self.eval(p), 2) for p in pts)
        return float(np.linalg.norm(self.amplitude, 2))

    def probe_points(self, rng=None):
        """Center, effective support boundary, and 8 random points."""
        rng = rng or np.random.default_rng(7)
        pts = [self.center]
        for k in range(3):
            for s in (-1.0, 1.0):
                e = np.zeros(3)
                e[k] = s * self.sigma[k]
                pts.append(self.center + e)
        pts.extend(self.center + rng.uniform(-2, 2, size=(8, 3)) * self.sigma)
        return np.array(pts)


def gaussian_bump(center=(0.0, 0.0, 0.0), sigma=1.0, amplitude=None):
    amp = np.diag([1.0, 0.0, 0.0]) if amplitude is None else amplitude
    return MetricPerturbation("gaussian_bump", center, float(np.asarray(sigma).reshape(())), amp)


def conformal_bump(center=(0.0, 0.0, 0.0), sigma=1.0, scale=1.0):
    return MetricPerturbation("conformal_bump", center, sigma, scale * np.eye(3))


def anisotropic_bump(center=(0.0, 0.0, 0.0), sigma=(1.0, 0.75, 0.5), amplitude=None):
    amp = np.diag([1.0, 0.0, 0.0]) if amplitude is None else amplitude
    sig = np.asarray(sigma, dtype=float).reshape(3)
    return MetricPerturbation("anisotropic_bump", center, sig, amp)


def custom_perturbation(h, d1=None, d2=None, d3=None, center=(0, 0, 0)):
    order = 0 + (d1 is not None) + (d2 is not None) + (d3 is not None)
    return MetricPerturbation("custom", center, 1.0, np.eye(3),
                              custom_funcs=(h, d1, d2, d3), max_order=order)


@dataclass(frozen=True)
class AmbientMetric:
    """g = delta + eps*h; immutable, shareable across workers."""

    perturbation: MetricPerturbation
    epsilon: float

    def __post_init__(self):
        eps = float(self.epsilon)
        object.__setattr__(self, "epsilon", eps)
        if self.perturbation.catalog_id != "custom":
            if abs(eps) * self.perturbation.sup_norm() >= 0.5:
                raise NonPositiveDefinite(
                    f"|eps|*sup|h| = {abs(eps) * self.perturbation.sup_norm():.3g} >= 1/2")
        for p in self.perturbation.probe_points():
            g = self.metric(p)
            try:
                np.linalg.cholesky(g)
            except np.linalg.LinAlgError:
                raise NonPositiveDefinite(f"metric not positive definite at probe {p}")

    @property
    def flat(self):
        return self.epsilon == 0.0

    def metric(self, x):
        h = self.perturbation.eval(x)
        return np.eye(3) + self.epsilon * h

    def inverse_metric(self, x):
        return np.linalg.inv(self.metric(x))

    def christoffel(self, x):
        """Gamma^s_mn at x (batched)."""
        gamma, _ = self._gamma_dgamma(x, need_dgamma=False)
        return gamma

    def _gamma_dgamma(self, x, need_dgamma=True, need_d2gamma=False):
        eps = self.epsilon
        ginv = np.linalg.inv(self.metric(x))
        dg = eps * self.perturbation.deriv1(x)
        # T[a,m,n] = d_m g_an + d_n g_am - d_a g_mn
        T = (np.einsum("...man->...amn", dg) + np.einsum("...nam->...amn", dg)
             - np.einsum("...amn->...amn", dg))
        gamma = 0.5 * np.einsum("...sa,...amn->...smn", ginv, T)
        if not need_dgamma:
            return gamma, None
        d2g = eps * self.perturbation.deriv2(x)
        dginv = -np.einsum("...sb,...kbc,...ca->...ksa", ginv, dg, ginv)
        dT = (np.einsum("...kman->...kamn", d2g) + np.einsum("...knam->...kamn", d2g)
              - np.einsum("...kamn->...kamn", d2g))
        dgamma = 0.5 * (np.einsum("...ksa,...amn->...ksmn", dginv, T)
                        + np.einsum("...sa,...kamn->...ksmn", ginv, dT))
        if not need_d2gamma:
            return gamma, dgamma
        d3g = eps * self.perturbation.deriv3(x)
        d2ginv = -(np.einsum("...lsb,...kbc,...ca->...lksa", dginv, dg, ginv)
                   + np.einsum("...sb,...lkbc,...ca->...lksa", ginv, d2g, ginv)
                   + np.einsum("...sb,...kbc,...lca->...lksa", ginv, dg, dginv))
        d2T = (np.einsum("...lkman->...lkamn", d3g) + np.einsum("...lknam->...lkamn", d3g)
               - np.einsum("...lkamn->...lkamn", d3g))
        d2gamma = 0.5 * (np.einsum("...lksa,...amn->...lksmn", d2ginv, T)
                         + np.einsum("...ksa,...lamn->...lksmn", dginv, dT)
                         + np.einsum("...lsa,...kamn->...lksmn", dginv, dT)
                         + np.einsum("...sa,...lkamn->...lksmn", ginv, d2T))
        return gamma, (dgamma, d2gamma)

    def curvature_tensors(self, x, need_grad=False):
        """Batched curvature: (riemann4, ricci, scalar, traceless[, nabla_riemann])."""
        g = self.metric(x)
        ginv = np.linalg.inv(g)
        if need_grad:
            gamma, (dgamma, d2gamma) = self._gamma_dgamma(x, True, True)
        else:
            gamma, dgamma = self._gamma_dgamma(x, True)
        # R^l_smn = d_m Gamma^l_ns - d_n Gamma^l_ms + G^l_ma G^a_ns - G^l_na G^a_ms
        r31 = (np.einsum("...mlns->...lsmn", dgamma) - np.einsum("...nlms->...lsmn", dgamma)
               + np.einsum("...lma,...ans->...lsmn", gamma, gamma)
               - np.einsum("...lna,...ams->...lsmn", gamma, gamma))
        riem = np.einsum("...ml,...lnst->...mnst", g, r31)
        ricci = np.einsum("...lalb->...ab", r31)
        scalar = np.einsum("...ab,...ab->...", ginv, ricci)
        traceless = ricci - scalar[..., None, None] * g / 3.0
        if not need_grad:
            return riem, ricci, scalar, traceless
        dg = self.epsilon * self.perturbation.deriv1(x)
        dr31 = (np.einsum("...kmlns->...klsmn", d2gamma) - np.einsum("...knlms->...klsmn", d2gamma)
                + np.einsum("...klma,...ans->...klsmn", dgamma, gamma)
                + np.einsum("...lma,...kans->...klsmn", gamma, dgamma)
                - np.einsum("...klna,...ams->...klsmn", dgamma, gamma)
                - np.einsum("...lna,...kams->...klsmn", gamma, dgamma))
        driem = (np.einsum("...kml,...lnst->...kmnst", dg, r31)
                 + np.einsum("...ml,...klnst->...kmnst", g, dr31))
        nabla = (driem
                 - np.einsum("...lkm,...lnst->...kmnst", gamma, riem)
                 - np.einsum("...lkn,...mlst->...kmnst", gamma, riem)
                 - np.einsum("...lks,...mnlt->...kmnst", gamma, riem)
                 - np.einsum("...lkt,...mnsl->...kmnst", gamma, riem))
        return riem, ricci, scalar, traceless, nabla


@dataclass
class CurvaturePack:
    """All ambient curvature data of g at one point, in the coordinate frame."""

    point: np.ndarray
    metric: np.ndarray
    inverse: np.ndarray
    gamma: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: float
    traceless: np.ndarray
    nabla_riemann: np.ndarray | None = None

    def norm2_ricci(self):
        return float(np.einsum("ab,cd,ac,bd->", self.ricci, self.ricci,
                               self.inverse, self.inverse))

    def norm2_traceless(self):
        return float(np.einsum("ab,cd,ac,bd->", self.traceless, self.traceless,
                               self.inverse, self.inverse))


def curvature_pack(metric: AmbientMetric, p, need_grad=True) -> CurvaturePack:
    """Evaluate Christoffel symbols and curvature tensors of g at p.

    Raises CatalogDerivativeMissing if nabla Riemann is requested but the
    perturbation has no third derivatives, and NonPositiveDefinite if g(p)
    fails Cholesky.
    """
    p = np.asarray(p, dtype=float).reshape(3)
    g = metric.metric(p)
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise NonPositiveDefinite(f"metric not positive definite at {p}")
    if need_grad and metric.perturbation.catalog_id == "custom" \
            and metric.perturbation.max_order < 3:
        raise CatalogDerivativeMissing("nabla Riemann needs order-3 derivatives")
    gamma = metric.christoffel(p)
    out = metric.curvature_tensors(p, need_grad=need_grad)
    if need_grad:
        riem, ricci, scalar, traceless, nabla = out
    else:
        riem, ricci, scalar, traceless = out
        nabla = None
    return CurvaturePack(point=p, metric=g, inverse=np.linalg.inv(g), gamma=gamma,
                         riemann=riem, ricci=ricci, scalar=float(scalar),
                         traceless=traceless, nabla_riemann=nabla)


def s_tilde(perturbation: MetricPerturbation, p, eps0=1e-2, levels=4) -> float:
    """Leading quadratic coefficient of |S|^2 in eps, by Richardson extrapolation.

    Samples |S_p(eps)|^2 / eps^2 at eps0, eps0/2, ... and eliminates the
    eps, eps^2, ... error terms.  The result is clamped to 0 when it is zero
    to tolerance; it is a nonnegative quadratic function of the second
    derivatives of h.
    """
    p = np.asarray(p, dtype=float).reshape(3)
    eps_list = [eps0 / 2**k for k in range(levels)]
    t = []
    for eps in eps_list:
        pack = curvature_pack(AmbientMetric(perturbation, eps), p, need_grad=False)
        t.append(pack.norm2_traceless() / eps**2)
    tab = [np.array(t)]
    for lev in range(1, levels):
        prev = tab[-1]
        fac = 2.0**lev
        tab.append((fac * prev[1:] - prev[:-1]) / (fac - 1.0))
    best = float(tab[-1][-1])
    check = float(tab[-2][-1])
    scale = max(abs(best), abs(check), 1e-30)
    if abs(best - check) > 0.01 * scale and scale > 1e-13:
        raise ExtrapolationDiverged(
            f"Richardson levels disagree: {check:.6g} vs {best:.6g}")
    if best < -1e-10:
        raise ExtrapolationDiverged(f"negative limit {best:.3g}")
    if abs(best) < 1e-10 * max(1.0, abs(t[0])):
        best = max(best, 0.0)
    return best
