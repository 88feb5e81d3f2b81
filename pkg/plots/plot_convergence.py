"""Log-log time-step convergence with a first-order guide line."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from plot_common import cli, load_csv


def main(csv_path, out_path):
    data = load_csv(csv_path, required=("dt", "err_velocity", "err_pressure"))
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    ax.loglog(data["dt"], data["err_velocity"], "o-", label="velocity")
    ax.loglog(data["dt"], data["err_pressure"], "s-", label="pressure")
    # slope-1 guide anchored at the largest velocity point
    dt = np.sort(data["dt"])
    anchor = data["err_velocity"][np.argmax(data["dt"])]
    guide = anchor * dt / dt.max()
    ax.loglog(dt, guide, "k--", lw=1, label="first order")
    ax.set_xlabel("time step")
    ax.set_ylabel("relative error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    return fig


if __name__ == "__main__":
    cli(main)
