"""Render willmore-lab CSV/JSON outputs into figures.

Read-only consumer: nothing is recomputed, every plotted quantity comes
straight out of the input files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SCAN_COLUMNS = ["px", "py", "pz", "rho", "phi", "converged", "residual"]
AXES = {"x": 0, "y": 1, "z": 2}


class FigureInputError(ValueError):
    """Missing file, column or key in a figure input."""


@dataclass
class FigureSpec:
    csv_path: str | None = None
    json_path: str | None = None
    slice_axis: str = "x"
    out_path: str = "figure.png"
    dpi: int = 150

    def __post_init__(self):
        if self.slice_axis not in AXES:
            raise FigureInputError(f"slice axis must be one of {sorted(AXES)}")
        for path in (self.csv_path, self.json_path):
            if path is not None and not Path(path).exists():
                raise FigureInputError(f"input not found: {path}")


def _read_scan_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FigureInputError(f"{path}: empty CSV")
    header = rows[0]
    missing = [c for c in SCAN_COLUMNS if c not in header]
    if missing:
        raise FigureInputError(f"{path}: missing columns {missing}")
    if len(rows) < 2:
        raise FigureInputError(f"{path}: no data rows")
    idx = [header.index(c) for c in SCAN_COLUMNS]
    data = np.array([[float(r[i]) for i in idx] for r in rows[1:]])
    return data


def plot_scan(spec: FigureSpec):
    """Heatmap of the reduced functional over (slice coordinate, rho).

    The two remaining center coordinates are max-projected; interior maxima
    from the companion JSON are overplotted as markers.
    """
    data = _read_scan_csv(spec.csv_path)
    ax_i = AXES[spec.slice_axis]
    coord = data[:, ax_i]
    rho = data[:, 3]
    phi = data[:, 4]
    cvals = np.unique(coord)
    rvals = np.unique(rho)
    grid = np.full((len(rvals), len(cvals)), np.nan)
    for c, r, ph in zip(coord, rho, phi):
        i = np.searchsorted(rvals, r)
        j = np.searchsorted(cvals, c)
        if np.isnan(grid[i, j]) or ph > grid[i, j]:
            grid[i, j] = ph

    maxima = []
    if spec.json_path is not None:
        with open(spec.json_path) as fh:
            summary = json.load(fh)
        if "maxima" not in summary:
            raise FigureInputError(f"{spec.json_path}: missing 'maxima' key")
        maxima = summary["maxima"]

    fig, ax = plt.subplots(figsize=(7, 5))
    mesh = ax.pcolormesh(cvals, rvals, grid, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="reduced functional")
    for m in maxima:
        ax.plot(m["p"][ax_i], m["rho"], marker="*", markersize=16,
                markerfacecolor="white", markeredgecolor="black")
    ax.set_xlabel(f"center {spec.slice_axis} (others max-projected)")
    ax.set_ylabel("radius")
    ax.set_title(f"scan: {len(maxima)} interior maxima")
    fig.tight_layout()
    fig.savefig(spec.out_path, dpi=spec.dpi, metadata={"Software": None})
    plt.close(fig)
    return {"out": spec.out_path, "n_markers": len(maxima),
            "grid_shape": list(grid.shape)}


def plot_rho_fit(spec: FigureSpec):
    """Small-radius energies with the fitted c4 rho^4 curve and the
    (pi/5)|S_p|^2 rho^4 reference built from the file's own fields."""
    with open(spec.json_path) as fh:
        payload = json.load(fh)
    fit = payload.get("rho_fit", payload)
    for key in ("rhos", "phis", "c4", "s_norm2"):
        if key not in fit:
            raise FigureInputError(f"{spec.json_path}: missing '{key}'")
    rhos = np.asarray(fit["rhos"], dtype=float)
    phis = np.asarray(fit["phis"], dtype=float)
    dense = np.geomspace(rhos.min(), rhos.max(), 200)
    reference = np.pi / 5.0 * fit["s_norm2"] * dense**4

    fig, ax = plt.subplots(figsize=(6.5, 5))
    ax.loglog(rhos, np.abs(phis), "o", label="measured")
    ax.loglog(dense, np.abs(fit["c4"]) * dense**4, "-",
              label=f"fit c4 rho^4 (c4 = {fit['c4']:.3e})")
    ax.loglog(dense, reference, "--",
              label="(pi/5) |S|^2 rho^4 reference")
    ax.set_xlabel("radius")
    ax.set_ylabel("reduced functional")
    ax.legend()
    if "rel_err" in fit:
        ax.set_title(f"small-radius fit, rel err {fit['rel_err']:.3f}")
    fig.tight_layout()
    fig.savefig(spec.out_path, dpi=spec.dpi, metadata={"Software": None})
    plt.close(fig)
    return {"out": spec.out_path, "n_points": len(rhos)}
