"""Divergence-magnitude maps of the leading velocity modes.

The CSV carries vertex coordinates and one column per field sample
(mode_1..mode_k plus snapshot_last); each panel is a filled contour of
the absolute value on a Delaunay triangulation of the vertices.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import matplotlib.tri as mtri
import numpy as np

from plot_common import cli, load_csv


def main(csv_path, out_path):
    data = load_csv(csv_path, required=("x", "y"))
    fields = [c for c in data if c not in ("x", "y")]
    if not fields:
        raise SystemExit(f"{csv_path}: no field columns besides x, y")
    tri = mtri.Triangulation(data["x"], data["y"])
    ncol = 3
    nrow = (len(fields) + ncol - 1) // ncol
    fig, axes = plt.subplots(nrow, ncol, figsize=(4 * ncol, 3.4 * nrow), squeeze=False)
    for ax in axes.ravel():
        ax.set_axis_off()
    for ax, name in zip(axes.ravel(), fields):
        vals = np.abs(data[name])
        m = ax.tricontourf(tri, vals, levels=24, cmap="viridis")
        ax.set_title(f"|{name}|", fontsize=9)
        ax.set_aspect("equal")
        ax.set_axis_on()
        fig.colorbar(m, ax=ax, shrink=0.8)
    # expose the plotted arrays for the read-back assertions in the tests
    fig.plotted_data = {name: data[name] for name in fields}
    fig.plotted_points = (data["x"], data["y"])
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    return fig


if __name__ == "__main__":
    cli(main)
