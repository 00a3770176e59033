import numpy as np
import pytest

from oracles import ellipsoid_mean_curvature
from willmore_lab.errors import DegenerateImmersion
from willmore_lab.geodesics import geodesic_sphere_graph
from willmore_lab.metrics import curvature_pack
from willmore_lab.sphere import SphereGrid, SphericalFunction
from willmore_lab.surfaces import standard_graph, surface_geometry, willmore_integrand


def ellipsoid_graph(grid, semi_axes):
    a, b, c = semi_axes
    T = grid.dirs
    r = 1.0 / np.sqrt((T[..., 0] / a)**2 + (T[..., 1] / b)**2 + (T[..., 2] / c)**2)
    rho = max(semi_axes)
    return standard_graph(grid, [0.0, 0.0, 0.0], rho,
                          SphericalFunction.from_values(grid, 1.0 - r / rho))


def test_round_sphere_curvatures(flat, grid24):
    geom = surface_geometry(flat, standard_graph(grid24, [0.3, -0.1, 0.2], 2.0))
    assert np.max(np.abs(geom.H - 1.0)) < 1e-12
    assert np.max(np.abs(geom.D - 0.25)) < 1e-12
    assert geom.umbilic.all()
    # normal invariants
    n_orth = np.einsum("...mn,...m,...in->...i", geom.g_amb, geom.normal, geom.surf.Z)
    n_unit = np.einsum("...mn,...m,...n->...", geom.g_amb, geom.normal, geom.normal)
    assert np.max(np.abs(n_orth)) < 1e-10
    assert np.max(np.abs(n_unit - 1.0)) < 1e-10


def test_ellipsoid_matches_closed_form(flat):
    grid = SphereGrid(45, 44)
    geom = surface_geometry(flat, ellipsoid_graph(grid, (1.0, 1.0, 2.0)))
    oracle = ellipsoid_mean_curvature(geom.surf.X, (1.0, 1.0, 2.0))
    assert np.max(np.abs(geom.H - oracle)) < 1e-6
    wi = willmore_integrand(geom)
    assert wi.values.min() >= 0.0


def test_h_d_lambda_consistency(flat, curved, grid16):
    rng = np.random.default_rng(0)
    c = rng.standard_normal(grid16.n_coef) * (grid16.degrees <= 5)
    c *= 0.1 / np.sqrt(np.sum(c * c))
    surf = standard_graph(grid16, [0.1, 0.0, -0.2], 1.1,
                          SphericalFunction.from_coeffs(grid16, c))
    for met in (flat, curved):
        geom = surface_geometry(met, surf)
        assert np.max(np.abs(geom.lam1 + geom.lam2 - geom.H)) < 1e-10
        rel = np.abs(geom.lam1 * geom.lam2 - geom.D) / np.maximum(np.abs(geom.D), 1e-10)
        assert np.max(rel) < 1e-8
        wi = willmore_integrand(geom)
        assert np.max(np.abs(wi.values - (geom.lam1 - geom.lam2)**2 / 4.0)) < 1e-10
        # principal directions are g-orthonormal and tangent
        for e in (geom.e1, geom.e2):
            unit = np.einsum("...mn,...m,...n->...", geom.g_amb, e, e)
            assert np.max(np.abs(unit - 1.0)) < 1e-9
        cross = np.einsum("...mn,...m,...n->...", geom.g_amb, geom.e1, geom.e2)
        assert np.max(np.abs(cross)) < 1e-9


def test_geodesic_sphere_mean_curvature_expansion(curved, grid16):
    """H = 2/rho - (rho/3) Ric(That, That) + O(rho^2) node-wise on true
    geodesic spheres; residual decays with slope >= 2."""
    p = np.array([0.1, -0.2, 0.15])
    pack = curvature_pack(curved, p)
    gp = curved.metric(p)
    tn = grid16.dirs / np.sqrt(np.einsum("mn,...m,...n->...", gp, grid16.dirs,
                                         grid16.dirs))[..., None]
    ric_t = np.einsum("...i,ij,...j->...", tn, pack.ricci, tn)
    errs = []
    for rho in (0.2, 0.1, 0.05):
        gr = geodesic_sphere_graph(curved, p, rho, grid16)
        geom = surface_geometry(curved, gr.surface())
        errs.append(np.max(np.abs(geom.H - (2.0 / rho - rho / 3.0 * ric_t))))
    slopes = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(slopes) >= 2.0


def test_integrand_round_sphere_zero(flat, grid16):
    geom = surface_geometry(flat, standard_graph(grid16, [0, 0, 0], 1.5))
    assert willmore_integrand(geom).sup() < 1e-12


def test_integrand_expansion_with_constrained_w(curved, grid16):
    """With w = rho^2 [-Ric/12 + R/36] the integrand matches the quadratic
    curvature expression at order rho^2; the residual decays one power
    faster (slope >= 3 fit)."""
    p = np.array([0.1, -0.2, 0.15])
    pack = curvature_pack(curved, p)
    g = grid16
    gp = curved.metric(p)
    tn = g.dirs / np.sqrt(np.einsum("mn,...m,...n->...", gp, g.dirs, g.dirs))[..., None]
    ric_t = np.einsum("...i,ij,...j->...", tn, pack.ricci, tn)
    wbar = SphericalFunction.from_values(g, -ric_t / 12.0 + pack.scalar / 36.0)

    # order-rho^2 field: quadratic curvature terms plus the wbar couplings,
    # assembled from the curvature pack in the paper's frame contractions
    e_t, e_p = g.e_theta, g.e_phi_hat
    R4 = pack.riemann

    def rr(a, b, c, d):
        return np.einsum("mnst,...m,...n,...s,...t->...", R4, d, c, a, b)

    T = tn  # use the g-unit radial field for the curvature contractions
    r0101 = rr(T, e_t, T, e_t)
    r0202 = rr(T, e_p, T, e_p)
    r0102 = rr(T, e_t, T, e_p)
    lapw = -6.0 * wbar.values
    wtt, wtp, wpp = wbar.hess_chart()
    st, ct = g.sin_theta[:, None], g.cos_theta[:, None]
    # covariant Hessian on the unit sphere in polar coordinates
    h11 = wtt
    h12 = wtp - (ct / st) * (wbar.grad()[1])
    h22 = wpp + st * ct * (wbar.grad()[0])
    s2 = st**2
    field2 = (0.25 * lapw**2 - (h11 * h22 - h12**2) / s2
              + (2.0 * r0102 * h12 / st - r0101 * h22 / s2 - r0202 * h11) / 3.0
              + (0.25 * ric_t**2 - r0101 * r0202 + r0102**2) / 9.0
              - ric_t * lapw / 6.0)

    errs = []
    for rho in (0.2, 0.1, 0.05):
        gr = geodesic_sphere_graph(curved, p, rho, g)
        u = SphericalFunction.from_coeffs(g, gr.v.coeffs + rho**2 * wbar.coeffs)
        surf = standard_graph(g, p, rho, u, kind="blended")
        geom = surface_geometry(curved, surf)
        wi = willmore_integrand(geom)
        errs.append(np.max(np.abs(wi.values - rho**2 * field2)))
    slope = np.polyfit(np.log([0.2, 0.1, 0.05]), np.log(errs), 1)[0]
    assert slope >= 2.9


def test_spectral_convergence_under_refinement(flat):
    """Doubling n_theta moves H (through the integrals it enters) by < 1e-8
    on a band-limited graph; the graph H itself is analytic in u, so the
    grid dependence is purely the quadrature resolving the integrand."""
    rng = np.random.default_rng(1)
    g1 = SphereGrid(25, 24)
    c = rng.standard_normal(g1.n_coef) * (g1.degrees <= 6)
    c *= 0.02 / np.sqrt(np.sum(c * c))
    geom1 = surface_geometry(flat, standard_graph(g1, [0, 0, 0], 1.0,
                                                  SphericalFunction.from_coeffs(g1, c)))
    g2 = SphereGrid(50, 24)
    c2 = np.zeros(g2.n_coef)
    c2[:g1.n_coef] = c
    geom2 = surface_geometry(flat, standard_graph(g2, [0, 0, 0], 1.0,
                                                  SphericalFunction.from_coeffs(g2, c2)))
    W1 = geom1.integrate(geom1.H**2 / 4.0)
    W2 = geom2.integrate(geom2.H**2 / 4.0)
    assert abs(W1 - W2) < 1e-8


def test_degenerate_immersion_raises(flat, grid16):
    u = SphericalFunction.from_values(
        grid16, 1.3 * np.exp(-((grid16.theta[:, None] - 1.5) ** 2) * 40)
        * np.ones((1, grid16.n_phi)))
    with pytest.raises(DegenerateImmersion):
        surface_geometry(flat, standard_graph(grid16, [0, 0, 0], 1.0, u))
