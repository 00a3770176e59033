"""Auxiliary-equation solver, reduced functional, small-radius fit, and scans.

The auxiliary equation projects the Euler-Lagrange field of the blended
surface off the l <= 1 kernel band; its unique small solution w(p, rho) is
found by quasi-Newton iteration with the exact flat-space linearization
(1/(2 rho^3)) Delta(Delta+2) frozen, i.e.

    w_{n+1} = w_n - 2 rho^3 * K[ P field(Sigma(w_n)) ].

The reduced functional Phi(p, rho) is the energy of the constrained surface;
its interior maxima over a (p, rho) box certify critical surfaces.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FitIllConditioned, NoContraction, StepLimit, WillmoreLabError
from .geodesics import cutoff, geodesic_sphere_graph
from .metrics import AmbientMetric, curvature_pack
from .sphere import SphereGrid, SphericalFunction
from .surfaces import standard_graph, surface_geometry
from .willmore import energy, euler_lagrange

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReductionSetup:
    """Everything a reduced-functional evaluation needs besides (p, rho).

    el_form selects the Euler-Lagrange field driving the auxiliary equation:
    "printed" reproduces the explicit small-radius laws (w ~ rho^2 expansion,
    (pi/5)|S|^2 rho^4 energy); "gradient" is the exact first variation, whose
    constrained solutions are true stationary points (and, in symmetric
    configurations, reach the I = 0 umbilic minimizers).
    """

    metric: AmbientMetric
    n_theta: int = 25
    lmax: int = 24
    r1: float = 0.5
    r2: float = 1.0
    solver_tol: float = 1e-10
    max_iter: int = 50
    integrator_tol: float = 1e-10
    el_form: str = "printed"

    def grid(self) -> SphereGrid:
        if not hasattr(self, "_grid"):
            object.__setattr__(self, "_grid", SphereGrid(self.n_theta, self.lmax))
        return self._grid


@dataclass
class AuxiliarySolution:
    p: np.ndarray
    rho: float
    epsilon: float
    w: SphericalFunction
    residual: float          # natural-normalization ||P rho^3 field||_L2
    iterations: int
    contraction: float
    surface: object = None
    geometry: object = None
    el_coeffs: np.ndarray | None = None

    def full_gradient_norm(self):
        """|| rho^3 field ||_L2(S^2) including the kernel band."""
        return float(self.rho**3 * np.sqrt(np.sum(self.el_coeffs**2)))


def solve_auxiliary(setup: ReductionSetup, p, rho,
                    v_eps: SphericalFunction | None = None,
                    w0: SphericalFunction | None = None) -> AuxiliarySolution:
    """Solve P[field(Sigma(w))] = 0 for w orthogonal to the l <= 1 band."""
    grid = setup.grid()
    metric = setup.metric
    p = np.asarray(p, dtype=float).reshape(3)
    rho = float(rho)
    chi = cutoff(rho, setup.r1, setup.r2)
    if chi > 0.0 and not metric.flat and v_eps is None:
        v_eps = geodesic_sphere_graph(metric, p, rho, grid,
                                      tol=setup.integrator_tol).v
    base = np.zeros(grid.n_coef) if (chi == 0.0 or metric.flat) else chi * v_eps.coeffs

    perp = ~grid.kernel_mask
    wc = np.zeros(grid.n_coef) if w0 is None else w0.coeffs * perp
    prev_delta = None
    contraction = 0.0
    bad = 0
    aux = None
    for it in range(1, setup.max_iter + 1):
        u = SphericalFunction.from_coeffs(grid, base + wc)
        surf = standard_graph(grid, p, rho, u, kind="blended")
        geom = surface_geometry(metric, surf)
        el = euler_lagrange(metric, geom, form=setup.el_form)
        elc = el.coeffs
        rc = elc * perp
        step = np.zeros(grid.n_coef)
        step[perp] = 2.0 * rho**3 * rc[perp] / grid.eig_bilap[perp]
        delta = float(np.max(np.abs(step)))
        wc = wc - step
        if it == 1 and float(np.max(np.abs(grid.synthesize(wc)))) >= 0.3:
            raise NoContraction("first iterate has sup|w| >= 0.3")
        if prev_delta is not None and prev_delta > 0:
            ratio = delta / prev_delta
            contraction = max(contraction, ratio) if it > 2 else contraction
            bad = bad + 1 if ratio > 0.9 else 0
            if bad >= 5:
                raise NoContraction(f"contraction ratio > 0.9 for 5 steps at (p={p}, rho={rho})")
        prev_delta = delta
        if delta < setup.solver_tol:
            aux = AuxiliarySolution(
                p=p, rho=rho, epsilon=metric.epsilon,
                w=SphericalFunction.from_coeffs(grid, wc),
                residual=float(rho**3 * np.sqrt(np.sum(rc * rc))),
                iterations=it, contraction=contraction,
                surface=surf, geometry=geom, el_coeffs=elc)
            break
    if aux is None:
        raise StepLimit(f"auxiliary solver hit {setup.max_iter} iterations at "
                        f"(p={p}, rho={rho}), last step {delta:.2e}")
    return aux


def reduced_functional(setup: ReductionSetup, p, rho,
                       v_eps=None) -> tuple[float, AuxiliarySolution]:
    """Phi(p, rho) = I(Sigma(w(p, rho))) on the converged constrained surface."""
    aux = solve_auxiliary(setup, p, rho, v_eps=v_eps)
    # geometry of the final iterate is converged to solver tolerance; one more
    # surface build with the final w would change I below roundoff
    rep = energy(setup.metric, aux.geometry)
    return rep.I, aux


@dataclass
class SmallRhoFit:
    c4: float
    c5: float
    predicted_c4: float         # (pi/5) |S_p|^2
    rel_err: float
    s_norm2: float
    s_null: bool
    rhos: np.ndarray
    phis: np.ndarray
    resid_slope: float
    # both readings of the d(Phi)/d(rho) leading coefficient (the paper's
    # printed exponent disagrees with differentiating its own expansion)
    ddrho_coeff_sq: float       # (4 pi / 5) |S_p|^2
    ddrho_coeff_lin: float      # (4 pi / 5) |S_p|


def small_rho_fit(setup: ReductionSetup, p, rho_list=None) -> SmallRhoFit:
    """Fit Phi ~ c4 rho^4 + c5 rho^5 on a small-radius window.

    The fit runs on Phi/rho^4 against {1, rho} (same least squares with
    relative weights, conditioned at the tiny rho^4 scales).
    """
    p = np.asarray(p, dtype=float).reshape(3)
    if rho_list is None:
        rho_list = np.geomspace(0.05, 0.25, 9)
    rhos = np.asarray(sorted(rho_list), dtype=float)
    if rhos[-1] > setup.r1 + 1e-12:
        raise ValueError("small-rho window must stay inside the geodesic regime")
    pack = curvature_pack(setup.metric, p, need_grad=False)
    curv = np.max(np.abs(pack.riemann))
    if curv > 0 and rhos[-1] > 0.3 / np.sqrt(curv):
        raise ValueError("window exceeds 0.3 / sqrt(|Riem|)")
    phis = np.array([reduced_functional(setup, p, r)[0] for r in rhos])

    y = phis / rhos**4
    A = np.stack([np.ones_like(rhos), rhos], axis=-1)
    if np.linalg.cond(A) > 1e12:
        raise FitIllConditioned("small-rho design matrix singular")
    (c4, c5), _, _, _ = np.linalg.lstsq(A, y, rcond=None)
    s2 = pack.norm2_traceless()
    predicted = np.pi / 5.0 * s2
    s_null = s2 < 1e-14
    if s_null:
        err = abs(c4 - predicted)
    else:
        err = abs(c4 - predicted) / predicted
    # residual-slope diagnostic with an unbiased c4: the two-term fit leaks the
    # rho^6 content into c4, which would flatten |Phi - c4 rho^4| near rho -> 0
    A3 = np.stack([np.ones_like(rhos), rhos, rhos**2], axis=-1)
    c3, _, _, _ = np.linalg.lstsq(A3, y, rcond=None)
    resid = np.abs(phis - c3[0] * rhos**4)
    ok = resid > 1e-18
    slope = 0.0
    if np.sum(ok) >= 2:
        slope = float(np.polyfit(np.log(rhos[ok]), np.log(resid[ok]), 1)[0])
    return SmallRhoFit(c4=float(c4), c5=float(c5), predicted_c4=float(predicted),
                       rel_err=float(err), s_norm2=float(s2), s_null=bool(s_null),
                       rhos=rhos, phis=phis, resid_slope=slope,
                       ddrho_coeff_sq=float(4 * np.pi / 5 * s2),
                       ddrho_coeff_lin=float(4 * np.pi / 5 * np.sqrt(s2)))


# -- scanning -------------------------------------------------------------------


@dataclass
class ScanMaximum:
    p: np.ndarray
    rho: float
    phi: float
    hessian_diag: np.ndarray
    hessian_negative: bool
    el_norm: float


@dataclass
class ScanResult:
    points: np.ndarray          # [n_cells, 4] (px, py, pz, rho)
    phis: np.ndarray
    converged: np.ndarray
    residuals: np.ndarray
    boundary_mask: np.ndarray
    boundary_sup: float
    maxima: list[ScanMaximum]
    params: dict

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["px", "py", "pz", "rho", "phi", "converged", "residual"])
            for row, phi, conv, res in zip(self.points, self.phis,
                                           self.converged, self.residuals):
                wr.writerow([f"{row[0]:.17g}", f"{row[1]:.17g}", f"{row[2]:.17g}",
                             f"{row[3]:.17g}", f"{phi:.17g}", int(conv), f"{res:.17g}"])

    def summary(self):
        return {
            "boundary_sup": self.boundary_sup,
            "n_cells": int(len(self.phis)),
            "n_failed": int(np.sum(~self.converged)),
            "maxima": [
                {"p": list(map(float, m.p)), "rho": float(m.rho), "phi": float(m.phi),
                 "hessian_diag": list(map(float, m.hessian_diag)),
                 "hessian_negative": bool(m.hessian_negative),
                 "el_norm": float(m.el_norm)}
                for m in self.maxima
            ],
            "parameters": self.params,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


_WORKER_SETUP = None


def _worker_init(setup_args):
    global _WORKER_SETUP
    _WORKER_SETUP = ReductionSetup(**setup_args)


def _scan_cell(args):
    idx, p, rho = args
    try:
        phi, aux = reduced_functional(_WORKER_SETUP, p, rho)
        return idx, phi, True, aux.residual
    except WillmoreLabError as exc:  # failed cells are excluded with a warning
        log.warning("scan cell %s at p=%s rho=%.3f failed: %s", idx, p, rho, exc)
        return idx, np.nan, False, np.nan


def scan_and_locate(setup: ReductionSetup, box, rho_range, n_p=5, n_rho=6,
                    threads=1, refine_tol=1e-3, el_norm_at_max=True,
                    max_refine=3) -> ScanResult:
    """Evaluate Phi on a (p, rho) grid, locate and refine interior maxima.

    box: [[x0,x1],[y0,y1],[z0,z1]]; rho_range: [rho_min, rho_max].  Interior
    maxima are grid-local maxima away from the grid boundary, refined by
    cyclic coordinate-wise golden-section to refine_tol; each refined maximum
    reports a central-difference Hessian diagonal and the full Euler-Lagrange
    gradient norm of its constrained surface.
    """
    box = np.asarray(box, dtype=float).reshape(3, 2)
    rho_range = np.asarray(rho_range, dtype=float).reshape(2)
    axes = [np.linspace(box[k, 0], box[k, 1], n_p) for k in range(3)]
    rho_axis = np.linspace(rho_range[0], rho_range[1], n_rho)
    shape = (n_p, n_p, n_p, n_rho)
    cells = []
    for i in range(n_p):
        for j in range(n_p):
            for k in range(n_p):
                for r in range(n_rho):
                    cells.append(((i, j, k, r),
                                  np.array([axes[0][i], axes[1][j], axes[2][k]]),
                                  rho_axis[r]))

    setup_args = dict(metric=setup.metric, n_theta=setup.n_theta, lmax=setup.lmax,
                      r1=setup.r1, r2=setup.r2, solver_tol=setup.solver_tol,
                      max_iter=setup.max_iter, integrator_tol=setup.integrator_tol,
                      el_form=setup.el_form)
    if threads > 1:
        import multiprocessing as mp
        ctx = mp.get_context("fork")
        with ctx.Pool(threads, initializer=_worker_init, initargs=(setup_args,)) as pool:
            results = pool.map(_scan_cell, cells, chunksize=4)
    else:
        _worker_init(setup_args)
        results = [_scan_cell(c) for c in cells]

    phi = np.full(shape, np.nan)
    conv = np.zeros(shape, dtype=bool)
    resid = np.full(shape, np.nan)
    for idx, val, ok, rs in results:
        phi[idx] = val
        conv[idx] = ok
        resid[idx] = rs

    boundary = np.zeros(shape, dtype=bool)
    for ax in range(4):
        sl = [slice(None)] * 4
        sl[ax] = 0
        boundary[tuple(sl)] = True
        sl[ax] = shape[ax] - 1
        boundary[tuple(sl)] = True
    finite = conv & np.isfinite(phi)
    boundary_sup = float(np.nanmax(np.where(boundary & finite, phi, -np.inf)))

    # grid-local maxima over axis neighbors, interior cells only
    local_max = []
    it = np.ndindex(shape)
    for idx in it:
        if boundary[idx] or not finite[idx]:
            continue
        val = phi[idx]
        is_max = True
        for ax in range(4):
            for dd in (-1, 1):
                nb = list(idx)
                nb[ax] += dd
                nbv = phi[tuple(nb)]
                if np.isfinite(nbv) and nbv > val:
                    is_max = False
                    break
            if not is_max:
                break
        if is_max and val > boundary_sup:
            local_max.append(idx)

    spacing = np.array([axes[0][1] - axes[0][0] if n_p > 1 else 1.0] * 3
                       + [rho_axis[1] - rho_axis[0] if n_rho > 1 else 1.0])
    full_axes = axes + [rho_axis]
    # refine the best grid-local maxima only: symmetric perturbations produce
    # whole orbits of equal maxima, and refining each costs a line search
    local_max.sort(key=lambda idx: -phi[idx])
    maxima = []
    ev = _PhiEvaluator(setup)
    for idx in local_max[:max_refine]:
        x0 = np.array([full_axes[ax][idx[ax]] for ax in range(4)])
        xr, phir = _refine_max(ev, x0, spacing, refine_tol,
                               lo=np.array([a[0] for a in full_axes]),
                               hi=np.array([a[-1] for a in full_axes]))
        hd = _hessian_diag(ev, xr, step=max(4.0 * refine_tol, 1e-3))
        eln = np.nan
        if el_norm_at_max:
            xr, phir, eln = _kernel_polish(setup, xr, phir,
                                           cap=0.5 * np.min(spacing))
        maxima.append(ScanMaximum(p=xr[0:3], rho=float(xr[3]), phi=float(phir),
                                  hessian_diag=hd, hessian_negative=bool(np.all(hd < 0)),
                                  el_norm=float(eln)))
    # multiple symmetric maxima: keep everything strictly above the boundary
    maxima.sort(key=lambda m: -m.phi)
    maxima = [m for m in maxima if m.phi > boundary_sup]
    points = np.array([[c[1][0], c[1][1], c[1][2], c[2]] for c in cells])
    flat_idx = [np.ravel_multi_index(c[0], shape) for c in cells]
    order = np.argsort(flat_idx)
    return ScanResult(points=points[order],
                      phis=phi.reshape(-1), converged=conv.reshape(-1),
                      residuals=resid.reshape(-1),
                      boundary_mask=boundary.reshape(-1),
                      boundary_sup=boundary_sup, maxima=maxima,
                      params={"box": box.tolist(), "rho_range": rho_range.tolist(),
                              "n_p": n_p, "n_rho": n_rho, "threads": threads,
                              "refine_tol": refine_tol,
                              "epsilon": setup.metric.epsilon,
                              "n_theta": setup.n_theta, "lmax": setup.lmax,
                              "r1": setup.r1, "r2": setup.r2})


class _PhiEvaluator:
    """Reduced-functional evaluations with warm-started solves.

    During refinement, consecutive evaluation points are close, so seeding
    the quasi-Newton with the previous solution roughly halves the solver
    iterations.
    """

    def __init__(self, setup):
        self.setup = setup
        self.last_w = None

    def __call__(self, x):
        try:
            aux = solve_auxiliary(self.setup, x[0:3], x[3], w0=self.last_w)
            self.last_w = aux.w
            return energy(self.setup.metric, aux.geometry).I
        except WillmoreLabError:
            return -np.inf


def _refine_max(ev, x0, spacing, tol, lo, hi, max_cycles=3):
    """Cyclic coordinate-wise golden-section ascent within one grid spacing."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    x = np.array(x0, dtype=float)
    fx = ev(x)
    for _ in range(max_cycles):
        moved = 0.0
        for ax in range(4):
            half = 0.75 * spacing[ax]
            a = max(x[ax] - half, lo[ax])
            b = min(x[ax] + half, hi[ax])
            if ax == 3:
                a = max(a, 1e-3)

            def f1d(t):
                xt = x.copy()
                xt[ax] = t
                return ev(xt)

            c = b - invphi * (b - a)
            d = a + invphi * (b - a)
            fc, fd = f1d(c), f1d(d)
            while b - a > tol:
                if fc >= fd:
                    b, d, fd = d, c, fc
                    c = b - invphi * (b - a)
                    fc = f1d(c)
                else:
                    a, c, fc = c, d, fd
                    d = a + invphi * (b - a)
                    fd = f1d(d)
            tbest = 0.5 * (a + b)
            fbest = f1d(tbest)
            if fbest > fx:
                moved = max(moved, abs(tbest - x[ax]))
                x[ax] = tbest
                fx = fbest
        if moved < tol:
            break
    return x, fx


def _hessian_diag(ev, x, step):
    f0 = ev(x)
    out = np.empty(4)
    for ax in range(4):
        xp, xm = x.copy(), x.copy()
        xp[ax] += step
        xm[ax] -= step
        out[ax] = (ev(xp) - 2.0 * f0 + ev(xm)) / step**2
    return out


def _kernel_polish(setup, x, phi_x, cap, steps=3, fd_step=2e-3):
    """Newton steps on the kernel band of the gradient field.

    At a constrained solution the l <= 1 coefficients of the field are the
    reduced-gradient components; zeroing them by a finite-difference Newton
    iteration puts the full Euler-Lagrange norm at the solver-residual floor
    instead of the line-search location error.
    """
    grid = setup.grid()
    kmask = grid.kernel_mask

    def kernel_coeffs(y):
        _, aux = reduced_functional(setup, y[0:3], y[3])
        return aux.el_coeffs[kmask], aux

    x = np.array(x, dtype=float)
    kc, aux = kernel_coeffs(x)
    best = (x, aux)
    for _ in range(steps):
        if np.linalg.norm(kc) == 0.0:
            break
        jac = np.empty((4, 4))
        for ax in range(4):
            xp, xm = x.copy(), x.copy()
            xp[ax] += fd_step
            xm[ax] -= fd_step
            jac[:, ax] = (kernel_coeffs(xp)[0] - kernel_coeffs(xm)[0]) / (2 * fd_step)
        delta, *_ = np.linalg.lstsq(jac, -kc, rcond=None)
        norm = np.linalg.norm(delta)
        if norm > cap:
            delta *= cap / norm
        x_new = x + delta
        x_new[3] = max(x_new[3], 1e-3)
        kc_new, aux_new = kernel_coeffs(x_new)
        if np.linalg.norm(kc_new) >= np.linalg.norm(kc):
            break
        x, kc, aux = x_new, kc_new, aux_new
        best = (x, aux)
    x, aux = best
    phi = energy(setup.metric, aux.geometry).I
    return x, phi, aux.full_gradient_norm()
