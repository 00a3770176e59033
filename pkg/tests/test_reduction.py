import numpy as np
import pytest

from willmore_lab.metrics import AmbientMetric, curvature_pack
from willmore_lab.reduction import (ReductionSetup, reduced_functional,
                                    scan_and_locate, small_rho_fit, solve_auxiliary)
from willmore_lab.sphere import SphericalFunction


@pytest.fixture(scope="module")
def setup16(bump):
    return ReductionSetup(metric=AmbientMetric(bump, 1e-2), n_theta=17, lmax=16)


def test_flat_solution_is_zero(bump, grid16):
    setup = ReductionSetup(metric=AmbientMetric(bump, 0.0), n_theta=17, lmax=16)
    aux = solve_auxiliary(setup, [0.1, 0.2, 0.3], 1.2)
    assert aux.iterations == 1
    assert aux.w.sup() < 1e-12


def test_solution_is_kernel_orthogonal(setup16):
    aux = solve_auxiliary(setup16, [0.2, -0.1, 0.3], 1.1)
    assert np.max(np.abs(aux.w.coeffs[setup16.grid().kernel_mask])) == 0.0
    assert aux.residual < 1e-8


def test_w_expansion_small_radius(setup16, bump):
    """w ~ rho^2 [-Ric/12 + R/36] with slope >= 3 decay of the distance."""
    metric = setup16.metric
    p = np.zeros(3)
    pack = curvature_pack(metric, p)
    g = setup16.grid()
    gp = metric.metric(p)
    tn = g.dirs / np.sqrt(np.einsum("mn,...m,...n->...", gp, g.dirs, g.dirs))[..., None]
    ric_t = np.einsum("...i,ij,...j->...", tn, pack.ricci, tn)
    errs = []
    for rho in (0.2, 0.1):
        aux = solve_auxiliary(setup16, p, rho)
        target = rho**2 * (-ric_t / 12.0 + pack.scalar / 36.0)
        errs.append(np.max(np.abs(aux.w.values - target)))
    assert np.log2(errs[0] / errs[1]) >= 3.0


def test_w_scales_linearly_in_eps(bump):
    sups = []
    for eps in (1e-2, 5e-3, 2.5e-3):
        setup = ReductionSetup(metric=AmbientMetric(bump, eps), n_theta=17, lmax=16)
        sups.append(solve_auxiliary(setup, [0.1, 0.0, 0.2], 1.2).w.sup())
    slopes = [np.log2(sups[i] / sups[i + 1]) for i in range(2)]
    assert all(abs(s - 1.0) < 0.05 for s in slopes)


def test_uniqueness_in_ball(setup16):
    """Restarts from random small initial w land on the same solution."""
    g = setup16.grid()
    rng = np.random.default_rng(8)
    base = solve_auxiliary(setup16, [0.2, 0.1, -0.1], 1.15)
    for _ in range(5):
        c = rng.standard_normal(g.n_coef) * (g.degrees <= 5)
        c *= 0.01 / np.sqrt(np.sum(c * c))
        w0 = SphericalFunction.from_coeffs(g, c)
        aux = solve_auxiliary(setup16, [0.2, 0.1, -0.1], 1.15, w0=w0)
        assert np.max(np.abs(aux.w.coeffs - base.w.coeffs)) < 1e-8


def test_reduced_functional_trivial(bump, setup16):
    flat_setup = ReductionSetup(metric=AmbientMetric(bump, 0.0), n_theta=17, lmax=16)
    phi, _ = reduced_functional(flat_setup, [0.3, 0.0, 0.0], 1.0)
    assert abs(phi) < 1e-12
    phi_far, _ = reduced_functional(setup16, [11.0, 0.0, 0.0], 1.0)
    assert abs(phi_far) < 1e-10


def test_phi_scales_quadratically_in_eps(bump):
    phis = []
    for eps in (1e-2, 5e-3, 2.5e-3):
        setup = ReductionSetup(metric=AmbientMetric(bump, eps), n_theta=17, lmax=16)
        phis.append(reduced_functional(setup, [0.3, -0.2, 0.1], 1.1)[0])
    slopes = [np.log2(phis[i] / phis[i + 1]) for i in range(2)]
    assert all(abs(s - 2.0) < 0.05 for s in slopes)


def test_small_rho_fit_flat_is_zero(bump):
    setup = ReductionSetup(metric=AmbientMetric(bump, 0.0), n_theta=17, lmax=16)
    fit = small_rho_fit(setup, [0, 0, 0], rho_list=np.geomspace(0.08, 0.25, 4))
    assert abs(fit.c4) < 1e-12
    assert fit.s_null


def test_small_rho_fit_matches_traceless_norm(setup16):
    fit = small_rho_fit(setup16, [0, 0, 0], rho_list=np.geomspace(0.05, 0.25, 5))
    assert fit.rel_err < 5e-2
    assert fit.ddrho_coeff_sq == pytest.approx(4 * np.pi / 5 * fit.s_norm2)
    assert np.all(np.diff(fit.phis) > 0)


def test_small_rho_fit_window_validation(setup16):
    with pytest.raises(ValueError):
        small_rho_fit(setup16, [0, 0, 0], rho_list=[0.2, 0.6])


def test_scan_flat_no_maxima(bump):
    setup = ReductionSetup(metric=AmbientMetric(bump, 0.0), n_theta=13, lmax=12)
    res = scan_and_locate(setup, [[-1, 1]] * 3, [1.1, 1.9], n_p=3, n_rho=3,
                          threads=1, el_norm_at_max=False)
    assert len(res.maxima) == 0
    assert len(res.phis) == 27 * 3


def test_scan_finds_interior_maximum_and_is_deterministic(bump, tmp_path):
    setup = ReductionSetup(metric=AmbientMetric(bump, 5e-3), n_theta=13, lmax=12,
                           el_form="gradient")
    # rho range above R2: every cell is a pure standard-sphere solve
    kw = dict(n_p=5, n_rho=4, refine_tol=5e-3, el_norm_at_max=False, max_refine=1)
    res1 = scan_and_locate(setup, [[-1.6, 1.6]] * 3, [1.05, 2.7], threads=1, **kw)
    res2 = scan_and_locate(setup, [[-1.6, 1.6]] * 3, [1.05, 2.7], threads=2, **kw)
    assert len(res1.maxima) >= 1
    assert res1.maxima[0].phi > res1.boundary_sup
    # identical across worker counts
    assert np.array_equal(res1.phis, res2.phis)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    res1.to_csv(p1)
    res2.to_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()
    res1.to_json(tmp_path / "a.json")
    assert (tmp_path / "a.json").exists()


def test_natural_constraint_at_maximum(bump):
    """At an interior maximum of the exact-gradient reduced functional the
    full Euler-Lagrange gradient norm is at the refinement-error scale.
    (The tight-tolerance version runs in the acceptance suite.)"""
    eps = 5e-3
    setup = ReductionSetup(metric=AmbientMetric(bump, eps), n_theta=13, lmax=12,
                           el_form="gradient")
    res = scan_and_locate(setup, [[-1.6, 1.6]] * 3, [1.1, 2.3], n_p=5, n_rho=3,
                          threads=2, refine_tol=2e-3, max_refine=1)
    assert res.maxima
    best = res.maxima[0]
    assert best.el_norm < 10 * 2e-3 * eps**2
