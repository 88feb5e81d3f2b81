"""Read-back tests: every plotted array equals its CSV column exactly."""

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import plot_angle_infsup
import plot_convergence
import plot_divergence_modes
import plot_singular_values
import plot_traces
from plot_common import load_csv

FIX = Path(__file__).parent / "fixtures"


def lines_by_label(ax):
    return {ln.get_label(): ln for ln in ax.get_lines()}


def test_singular_values_readback(tmp_path):
    out = tmp_path / "sv.png"
    fig = plot_singular_values.main(FIX / "singular_values.csv", out)
    assert out.exists() and out.stat().st_size > 0
    data = load_csv(FIX / "singular_values.csv")
    for ax, col in zip(fig.axes, ("velocity_lambda", "pressure_sigma")):
        assert ax.get_yscale() == "log"
        line = ax.get_lines()[0]
        assert np.array_equal(line.get_xdata(), data["index"])
        assert np.array_equal(line.get_ydata(), data[col])
        # spectra are sorted, so the plotted curves decrease monotonically
        assert np.all(np.diff(line.get_ydata()) < 0)


def test_singular_values_missing_column(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("index,velocity_lambda\n1,2.0\n")
    with pytest.raises(SystemExit, match="pressure_sigma"):
        plot_singular_values.main(bad, tmp_path / "x.png")


def test_singular_values_empty_csv(tmp_path):
    bad = tmp_path / "empty.csv"
    bad.write_text("index,velocity_lambda,pressure_sigma\n")
    with pytest.raises(SystemExit, match="no data"):
        plot_singular_values.main(bad, tmp_path / "x.png")


def test_traces_readback_one_line_per_series(tmp_path):
    out = tmp_path / "traces.png"
    fig = plot_traces.main(FIX / "traces.csv", out)
    assert out.exists()
    data = load_csv(FIX / "traces.csv")
    series = ("ref", "R3_M3", "R5_M5", "R7_M7")
    for ax, quantity in zip(fig.axes, ("energy", "drag", "lift")):
        labels = lines_by_label(ax)
        assert set(labels) == set(series)
        for s in series:
            assert np.array_equal(labels[s].get_xdata(), data["time"])
            assert np.array_equal(labels[s].get_ydata(), data[f"{s}_{quantity}"])


def test_angle_infsup_readback(tmp_path):
    out = tmp_path / "angles.png"
    fig = plot_angle_infsup.main(FIX / "angle_infsup.csv", out)
    assert out.exists()
    data = load_csv(FIX / "angle_infsup.csv")
    ax_alpha, ax_beta = fig.axes
    assert ax_alpha.get_yscale() == "log"  # squared angle rendered on log scale
    line = ax_alpha.get_lines()[0]
    assert np.array_equal(line.get_xdata(), data["R"])
    assert np.array_equal(line.get_ydata(), data["alpha_sq"])
    line_b = ax_beta.get_lines()[0]
    assert np.array_equal(line_b.get_ydata(), data["beta"])


def test_convergence_readback_and_guide(tmp_path):
    out = tmp_path / "conv.png"
    fig = plot_convergence.main(FIX / "convergence.csv", out)
    assert out.exists()
    data = load_csv(FIX / "convergence.csv")
    ax = fig.axes[0]
    labels = lines_by_label(ax)
    assert np.array_equal(labels["velocity"].get_ydata(), data["err_velocity"])
    assert np.array_equal(labels["pressure"].get_ydata(), data["err_pressure"])
    guide = labels["first order"]
    gx, gy = np.asarray(guide.get_xdata(), dtype=float), np.asarray(guide.get_ydata(), dtype=float)
    ratios = gy / gx
    assert np.allclose(ratios, ratios[0], rtol=1e-12)  # slope exactly one
    # fixture data are exactly first order, so points parallel the guide
    assert np.allclose(data["err_velocity"] / data["dt"],
                       data["err_velocity"][0] / data["dt"][0], rtol=1e-12)


def test_divergence_modes_readback(tmp_path):
    out = tmp_path / "div.png"
    fig = plot_divergence_modes.main(FIX / "divergence_modes.csv", out)
    assert out.exists()
    data = load_csv(FIX / "divergence_modes.csv")
    assert set(fig.plotted_data) == {"mode_1", "mode_2", "snapshot_last"}
    for name, vals in fig.plotted_data.items():
        assert np.array_equal(vals, data[name])
    assert np.array_equal(fig.plotted_points[0], data["x"])
    assert np.array_equal(fig.plotted_points[1], data["y"])


@pytest.mark.parametrize("script,fixture", [
    ("plot_singular_values.py", "singular_values.csv"),
    ("plot_traces.py", "traces.csv"),
    ("plot_angle_infsup.py", "angle_infsup.csv"),
    ("plot_convergence.py", "convergence.csv"),
    ("plot_divergence_modes.py", "divergence_modes.csv"),
])
def test_script_entry_point(tmp_path, script, fixture):
    out = tmp_path / "fig.png"
    proc = subprocess.run(
        [sys.executable, str(Path(__file__).parents[1] / script), str(FIX / fixture), str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists() and out.stat().st_size > 0


def test_script_usage_error():
    proc = subprocess.run(
        [sys.executable, str(Path(__file__).parents[1] / "plot_convergence.py")],
        capture_output=True, text=True,
    )
    assert proc.returncode != 0
    assert "usage" in proc.stderr.lower()
