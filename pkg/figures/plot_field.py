#!/usr/bin/env python3
"""Triangulated pseudocolor panels of exported nodal fields.

Usage:
  plot_field.py --mesh mesh_coarse.txt --field mean.csv --out mean.png \
      [--field std.csv] [--overlay-gamma1] [--kind conductivity] \
      [--vmin V --vmax V] [--title T ...]

Multiple --field arguments render side by side (e.g. a posterior mean/std
pair).  `--kind conductivity` pins the color range to [4, 8]; the red
boundary curve marks the extent of the applied boundary input.
"""

from __future__ import annotations

import argparse
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.tri import Triangulation

import figlib

KIND_RANGES = {
    "conductivity": (4.0, 8.0),
    "auto": (None, None),
}


def render(mesh: figlib.MeshData, fields, titles=None, vmin=None, vmax=None,
           overlay_gamma1=False, cmap="viridis"):
    """Pseudocolor panels; returns the matplotlib figure."""
    figlib.check_same_mesh(mesh, *fields)
    n = len(fields)
    fig, axes = plt.subplots(1, n, figsize=(4.4 * n, 4.0), squeeze=False)
    tri = Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1],
                        mesh.triangles)
    for k, (ax, values) in enumerate(zip(axes[0], fields)):
        pc = ax.tripcolor(tri, values, shading="gouraud", cmap=cmap,
                          vmin=vmin, vmax=vmax)
        fig.colorbar(pc, ax=ax, shrink=0.85)
        if overlay_gamma1:
            for (a, b) in mesh.boundary_edges[mesh.gamma1_edge]:
                ax.plot(mesh.vertices[[a, b], 0], mesh.vertices[[a, b], 1],
                        color="red", linewidth=2.5, zorder=5,
                        solid_capstyle="round")
        if titles and k < len(titles):
            ax.set_title(titles[k])
        ax.set_aspect("equal")
        ax.set_axis_off()
    fig.tight_layout()
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--mesh", required=True)
    parser.add_argument("--field", action="append", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--overlay-gamma1", action="store_true")
    parser.add_argument("--kind", choices=sorted(KIND_RANGES), default="auto")
    parser.add_argument("--vmin", type=float, default=None)
    parser.add_argument("--vmax", type=float, default=None)
    parser.add_argument("--title", action="append", default=None)
    parser.add_argument("--dpi", type=int, default=150)
    args = parser.parse_args(argv)

    mesh = figlib.read_mesh(args.mesh)
    fields = [figlib.read_field(p) for p in args.field]
    vmin, vmax = KIND_RANGES[args.kind]
    if args.vmin is not None:
        vmin = args.vmin
    if args.vmax is not None:
        vmax = args.vmax

    fig = render(mesh, fields, titles=args.title, vmin=vmin, vmax=vmax,
                 overlay_gamma1=args.overlay_gamma1)
    fig.savefig(args.out, dpi=args.dpi)
    plt.close(fig)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
