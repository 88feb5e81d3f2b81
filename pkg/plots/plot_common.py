"""Shared helpers for the figure scripts: CSV loading and CLI plumbing."""

import sys

import matplotlib

matplotlib.use("Agg")

import numpy as np


def load_csv(path, required=()):
    """Read named columns; floats where possible, strings otherwise."""
    with open(path) as f:
        header = f.readline().strip()
        if not header:
            raise SystemExit(f"{path}: empty CSV")
        names = header.split(",")
        rows = [ln.strip().split(",") for ln in f if ln.strip()]
    if not rows:
        raise SystemExit(f"{path}: CSV has a header but no data rows")
    data = {}
    for i, name in enumerate(names):
        cells = [r[i] for r in rows]
        try:
            data[name] = np.array([float(c) for c in cells])
        except ValueError:
            data[name] = np.array(cells)
    missing = [c for c in required if c not in data]
    if missing:
        raise SystemExit(f"{path}: missing required columns {missing} (found {names})")
    return data


def cli(main, argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        raise SystemExit(f"usage: {sys.argv[0]} <input.csv> <output.png>")
    fig = main(argv[0], argv[1])
    return fig
