"""plot-scan / plot-rho-fit front end."""

from __future__ import annotations

import argparse
import sys

from .figures import FigureInputError, FigureSpec, plot_rho_fit, plot_scan


def build_parser():
    ap = argparse.ArgumentParser(prog="willmore-plots",
                                 description="Figures from willmore-lab outputs")
    sub = ap.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("plot-scan", help="heatmap of a scan CSV with maxima markers")
    ps.add_argument("--in", dest="csv_in", required=True, help="scan CSV path")
    ps.add_argument("--json", dest="json_in", default=None,
                    help="scan JSON summary (for the maxima markers)")
    ps.add_argument("--slice", dest="slice_axis", default="x", choices=["x", "y", "z"])
    ps.add_argument("--out", dest="out", required=True, help="output image path")
    ps.add_argument("--dpi", type=int, default=150)

    pr = sub.add_parser("plot-rho-fit", help="small-radius fit figure from JSON")
    pr.add_argument("--in", dest="json_in", required=True, help="solve-w/verify JSON")
    pr.add_argument("--out", dest="out", required=True)
    pr.add_argument("--dpi", type=int, default=150)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plot-scan":
            spec = FigureSpec(csv_path=args.csv_in, json_path=args.json_in,
                              slice_axis=args.slice_axis, out_path=args.out,
                              dpi=args.dpi)
            info = plot_scan(spec)
        else:
            spec = FigureSpec(json_path=args.json_in, out_path=args.out,
                              dpi=args.dpi)
            info = plot_rho_fit(spec)
    except FigureInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {info['out']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
