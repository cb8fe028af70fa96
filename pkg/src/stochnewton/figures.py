"""File-based rendering of convergence curves (headless backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_STYLES = ["-", "--", "-.", ":"]


def save_convergence_plot(path, series, xlabel: str, ylabel: str,
                          title: str = "", y_log: bool = True) -> None:
    """Render one curve per entry of series to a PNG file.

    series: iterable of dicts with keys label, x, y. Nonpositive values are
    masked on a log axis rather than dropped silently into warnings.
    """
    fig, ax = plt.subplots(figsize=(7.0, 4.6))
    for i, s in enumerate(series):
        x = np.asarray(s["x"], dtype=float)
        y = np.asarray(s["y"], dtype=float)
        if y_log:
            y = np.where(y > 0, y, np.nan)
        ax.plot(x, y, _STYLES[i % len(_STYLES)], label=s["label"], linewidth=1.6)
    if y_log:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
