"""Energy, drag, and lift traces: one line per series in the bundle.

Series are column prefixes: ref_energy, R3_M3_energy, ... as written by
the report stage.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from plot_common import cli, load_csv

QUANTITIES = ("energy", "drag", "lift")


def series_names(data):
    names = []
    for col in data:
        for q in QUANTITIES:
            suffix = f"_{q}"
            if col.endswith(suffix):
                base = col[: -len(suffix)]
                if base not in names:
                    names.append(base)
    return names


def main(csv_path, out_path):
    data = load_csv(csv_path, required=("time",))
    series = series_names(data)
    if not series:
        raise SystemExit(f"{csv_path}: no <series>_energy/_drag/_lift columns found")
    fig, axes = plt.subplots(3, 1, figsize=(8, 9), sharex=True)
    for ax, q in zip(axes, QUANTITIES):
        for s in series:
            col = f"{s}_{q}"
            if col in data:
                style = "k-" if s == "ref" else "-"
                ax.plot(data["time"], data[col], style, lw=1.2, label=s)
        ax.set_ylabel(q)
        ax.grid(alpha=0.3)
    axes[0].legend(loc="best", fontsize=8)
    axes[-1].set_xlabel("time")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    return fig


if __name__ == "__main__":
    cli(main)
