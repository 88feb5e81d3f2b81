"""Squared principal-angle cosine and inf-sup constant against mode count."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from plot_common import cli, load_csv


def main(csv_path, out_path):
    data = load_csv(csv_path, required=("R", "alpha_sq", "beta"))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.semilogy(data["R"], data["alpha_sq"], "o-", ms=4)
    ax1.set_xlabel("modes (velocity = pressure)")
    ax1.set_ylabel("alpha^2")
    ax1.set_title("squared divergence/pressure correlation")
    ax1.grid(True, which="both", alpha=0.3)
    ax2.semilogy(data["R"], data["beta"], "s-", ms=4, color="tab:red")
    ax2.set_xlabel("modes (velocity = pressure)")
    ax2.set_ylabel("beta")
    ax2.set_title("discrete inf-sup constant")
    ax2.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    return fig


if __name__ == "__main__":
    cli(main)
