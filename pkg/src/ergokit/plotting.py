"""Deterministic SVG figures.

Every figure plots only columns of the CSV it names in its description, and
is byte-identical across runs: the SVG id salt is fixed and no date is
embedded.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "ergokit", "svg.fonttype": "none", "figure.figsize": (6.0, 4.0)}


def _save(fig, dest, title, csv_name):
    meta = {"Date": None, "Creator": "ergokit", "Title": title,
            "Description": f"data: {csv_name}"}
    fig.savefig(dest, format="svg", metadata=meta)
    plt.close(fig)


def line_figure(dest, x, series, title, xlabel, ylabel, csv_name, logy=False, markers=True):
    """Lines of ``series`` (label -> y values) against ``x``.

    Non-positive values are dropped on a log axis.
    """
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        x = np.asarray(x, dtype=float)
        for label, y in series.items():
            y = np.asarray(y, dtype=float)
            keep = np.isfinite(y) & ((y > 0) if logy else True)
            ax.plot(x[keep], y[keep], "o-" if markers else "-", ms=3, lw=1, label=label)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if len(series) > 1:
            ax.legend(fontsize=8)
        fig.tight_layout()
        _save(fig, dest, title, csv_name)


def scatter_figure(dest, x, y, title, xlabel, ylabel, csv_name, diagonal=False):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ax.plot(x, y, "o", ms=3)
        if diagonal and len(x):
            lo, hi = float(min(x.min(), y.min())), float(max(x.max(), y.max()))
            ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        fig.tight_layout()
        _save(fig, dest, title, csv_name)


def path_figure(dest, t, paths, title, csv_name, coord=0):
    """Coordinate ``coord`` of a few paths, shape (n, len(t), d)."""
    series = {f"path {i}": p[:, coord] for i, p in enumerate(paths)}
    line_figure(dest, t, series, title, "t", f"x{coord + 1}", csv_name, markers=False)
