"""Batch front-end: config-driven subcommands with CI-friendly exit codes.

Exit codes: 0 success, 1 invariant/check failure, 2 config error,
3 --expect-max set but the scan found no interior maximum.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import RunConfig
from .errors import ConfigError, WillmoreLabError


def _threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("WILLMORE_LAB_THREADS")
    return max(1, int(env)) if env else 1


def _outdir(args, cfg):
    out = args.out or cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _dump(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_curvature(args, cfg):
    from .metrics import curvature_pack, s_tilde
    p = np.array([float(v) for v in args.point.split(",")]) if args.point \
        else np.asarray(cfg["metric"]["center"], dtype=float)
    metric = cfg.metric()
    pack = curvature_pack(metric, p, need_grad=True)
    riem = pack.riemann
    scale = 1.0 + float(np.max(np.abs(riem)))
    res = {
        "antisym_12": float(np.max(np.abs(riem + np.einsum("mnst->nmst", riem)))) / scale,
        "antisym_34": float(np.max(np.abs(riem + np.einsum("mnst->mnts", riem)))) / scale,
        "pair_exchange": float(np.max(np.abs(riem - np.einsum("mnst->stmn", riem)))) / scale,
        "first_bianchi": float(np.max(np.abs(
            riem + np.einsum("mnst->mstn", riem) + np.einsum("mnst->mtns", riem)))) / scale,
        "ricci_symmetry": float(np.max(np.abs(pack.ricci - pack.ricci.T))),
        "traceless_trace": abs(float(np.einsum("ab,ab->", pack.inverse, pack.traceless))),
    }
    ok = (res["antisym_12"] < 1e-9 and res["antisym_34"] < 1e-9
          and res["pair_exchange"] < 1e-9 and res["first_bianchi"] < 1e-9
          and res["ricci_symmetry"] < 1e-12 and res["traceless_trace"] < 1e-10)
    payload = {
        "point": p.tolist(),
        "epsilon": metric.epsilon,
        "gamma": pack.gamma.tolist(),
        "ricci": pack.ricci.tolist(),
        "scalar": pack.scalar,
        "traceless": pack.traceless.tolist(),
        "norm2_traceless": pack.norm2_traceless(),
        "s_tilde": s_tilde(cfg.perturbation, p),
        "identity_residuals": res,
        "invariants_pass": bool(ok),
    }
    out = _outdir(args, cfg)
    _dump(os.path.join(out, "curvature.json"), payload)
    print(json.dumps(payload["identity_residuals"], indent=2))
    print(f"s_tilde = {payload['s_tilde']:.6g}  |S|^2 = {payload['norm2_traceless']:.6g}")
    return 0 if ok else 1


def cmd_surface(args, cfg):
    from .geodesics import approximate_surface
    from .surfaces import surface_geometry, willmore_integrand
    from .willmore import energy
    metric = cfg.metric()
    p = np.array([float(v) for v in args.point.split(",")]) if args.point \
        else np.asarray(cfg["metric"]["center"], dtype=float)
    setup = cfg.reduction_setup()
    surf = approximate_surface(metric, p, args.rho, setup.r1, setup.r2,
                               grid=setup.grid(), tol=setup.integrator_tol)
    geom = surface_geometry(metric, surf)
    rep = energy(metric, geom)
    wi = willmore_integrand(geom)
    north = float(np.max(np.abs(np.einsum("...mn,...m,...in->...i",
                                          geom.g_amb, geom.normal, surf.Z))))
    payload = {"p": p.tolist(), "rho": args.rho, "I": rep.I, "W": rep.W,
               "area": rep.area, "H_min": float(geom.H.min()),
               "H_max": float(geom.H.max()),
               "integrand_min": float(wi.values.min()),
               "normal_orthogonality": north}
    _dump(os.path.join(_outdir(args, cfg), "surface.json"), payload)
    print(json.dumps(payload, indent=2))
    return 0 if north < 1e-10 else 1


def cmd_willmore(args, cfg):
    from .surfaces import standard_graph
    from .willmore import energy, euler_lagrange
    metric = cfg.metric()
    setup = cfg.reduction_setup()
    p = np.array([float(v) for v in args.point.split(",")]) if args.point \
        else np.asarray(cfg["metric"]["center"], dtype=float)
    surf = standard_graph(setup.grid(), p, args.rho)
    rep = energy(metric, surf)
    el = euler_lagrange(metric, surf, form=cfg["solver"]["el_form"])
    payload = {"p": p.tolist(), "rho": args.rho, "I": rep.I, "W": rep.W,
               "area": rep.area, "el_sup": el.sup()}
    _dump(os.path.join(_outdir(args, cfg), "willmore.json"), payload)
    print(json.dumps(payload, indent=2))
    return 0


def cmd_solve_w(args, cfg):
    from .reduction import small_rho_fit, solve_auxiliary
    setup = cfg.reduction_setup()
    p = np.array([float(v) for v in args.point.split(",")]) if args.point \
        else np.asarray(cfg["metric"]["center"], dtype=float)
    aux = solve_auxiliary(setup, p, args.rho)
    rf = cfg["rho_fit"]
    fit = small_rho_fit(setup, p, rho_list=np.geomspace(rf["rho_min"], rf["rho_max"],
                                                        rf["n_rho"]))
    payload = {
        "p": p.tolist(), "rho": args.rho, "epsilon": setup.metric.epsilon,
        "w_sup": aux.w.sup(), "residual": aux.residual,
        "iterations": aux.iterations, "contraction": aux.contraction,
        "rho_fit": {
            "rhos": fit.rhos.tolist(), "phis": fit.phis.tolist(),
            "c4": fit.c4, "c5": fit.c5, "predicted_c4": fit.predicted_c4,
            "rel_err": fit.rel_err, "s_norm2": fit.s_norm2,
            "resid_slope": fit.resid_slope,
            "ddrho_coeff_sq": fit.ddrho_coeff_sq,
            "ddrho_coeff_lin": fit.ddrho_coeff_lin,
        },
    }
    path = os.path.join(_outdir(args, cfg), "solve_w.json")
    _dump(path, payload)
    print(f"w solved: sup={aux.w.sup():.3e} residual={aux.residual:.3e} "
          f"iters={aux.iterations}; rho-fit c4={fit.c4:.4e} "
          f"predicted={fit.predicted_c4:.4e} rel_err={fit.rel_err:.3f} -> {path}")
    return 0


def cmd_scan(args, cfg):
    from .reduction import scan_and_locate
    el_form = cfg["scan"]["el_form"]
    setup = cfg.reduction_setup(el_form=el_form)
    res = scan_and_locate(setup, cfg["scan"]["box"], cfg["scan"]["rho_range"],
                          n_p=cfg["scan"]["n_p"], n_rho=cfg["scan"]["n_rho"],
                          threads=_threads(args),
                          refine_tol=cfg["scan"]["refine_tol"])
    out = _outdir(args, cfg)
    res.to_csv(os.path.join(out, "scan.csv"))
    res.to_json(os.path.join(out, "scan.json"))
    print(f"scan: {len(res.phis)} cells, boundary sup {res.boundary_sup:.4e}, "
          f"{len(res.maxima)} interior maxima -> {out}/scan.csv")
    for m in res.maxima:
        print(f"  max phi={m.phi:.4e} at p={np.round(m.p, 4).tolist()} "
              f"rho={m.rho:.4f} el_norm={m.el_norm:.2e}")
    if args.expect_max and not res.maxima:
        return 3
    return 0


def cmd_invariance(args, cfg):
    from .checks import check_moebius_invariance
    res = check_moebius_invariance(cfg["grid"]["n_theta"], cfg["grid"]["lmax"],
                                   trials=20, seed=cfg["seed"])
    payload = {"status": res.status, "max_delta_I": res.measured,
               "threshold": res.threshold, **res.detail}
    _dump(os.path.join(_outdir(args, cfg), "invariance.json"), payload)
    print(json.dumps(payload, indent=2))
    return 0 if res.status == "pass" else 1


def cmd_verify(args, cfg):
    from .checks import run_verify
    results = run_verify(cfg, quick=args.quick)
    rows = []
    all_ok = True
    for r in results:
        rows.append({"name": r.name, "status": r.status, "measured": r.measured,
                     "threshold": r.threshold, "seconds": round(r.seconds, 2),
                     "detail": r.detail})
        all_ok = all_ok and r.ok
        meas = "" if r.measured is None else f" measured={r.measured:.3g}"
        thr = "" if r.threshold is None else f" threshold={r.threshold:.3g}"
        print(f"[{r.status.upper():7s}] {r.name:22s}{meas}{thr} ({r.seconds:.1f}s)")
    _dump(os.path.join(_outdir(args, cfg), "verify.json"),
          {"all_pass": all_ok, "checks": rows})
    return 0 if all_ok else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="willmore-lab",
                                 description="Conformal Willmore workbench")
    ap.add_argument("--config", required=True, help="path to the JSON run config")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker count (fallback: WILLMORE_LAB_THREADS)")
    ap.add_argument("--seed", type=int, default=None, help="override config seed")
    sub = ap.add_subparsers(dest="command", required=True)

    sc = sub.add_parser("curvature", help="curvature pack and s-tilde at a point")
    sc.add_argument("--point", default=None, help="x,y,z (default: bump center)")

    ss = sub.add_parser("surface", help="blended surface geometry summary")
    ss.add_argument("--point", default=None)
    ss.add_argument("--rho", type=float, default=1.0)

    sw = sub.add_parser("willmore", help="energy report for a standard sphere")
    sw.add_argument("--point", default=None)
    sw.add_argument("--rho", type=float, default=1.0)

    so = sub.add_parser("solve-w", help="auxiliary solve and small-radius fit")
    so.add_argument("--point", default=None)
    so.add_argument("--rho", type=float, default=1.0)

    sn = sub.add_parser("scan", help="reduced-functional scan over (p, rho)")
    sn.add_argument("--expect-max", action="store_true",
                    help="exit 3 when no interior maximum is found")

    sub.add_parser("invariance", help="Moebius invariance trials")

    sv = sub.add_parser("verify", help="run all registered identity checks")
    sv.add_argument("--quick", action="store_true", help="reduced trial counts")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg.raw["seed"] = args.seed
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    handlers = {
        "curvature": cmd_curvature,
        "surface": cmd_surface,
        "willmore": cmd_willmore,
        "solve-w": cmd_solve_w,
        "scan": cmd_scan,
        "invariance": cmd_invariance,
        "verify": cmd_verify,
    }
    try:
        return handlers[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except WillmoreLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
