"""Semilog-y decay of the velocity and pressure correlation spectra."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from plot_common import cli, load_csv


def main(csv_path, out_path):
    data = load_csv(csv_path, required=("index", "velocity_lambda", "pressure_sigma"))
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, col, title in zip(axes, ("velocity_lambda", "pressure_sigma"),
                              ("velocity", "pressure")):
        ax.semilogy(data["index"], data[col], "o-", ms=3, label=col)
        ax.set_xlabel("mode index")
        ax.set_ylabel("eigenvalue")
        ax.set_title(f"{title} spectrum")
        ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    return fig


if __name__ == "__main__":
    cli(main)
