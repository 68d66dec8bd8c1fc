"""Figure rendering for evaluation reports.

Figures are written as SVG with the date field stripped so repeated runs
produce byte-identical files.  Only the object-oriented matplotlib API is
used; no pyplot global state.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("svg", force=False)

from matplotlib.backends.backend_svg import FigureCanvasSVG  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from .evaluation import EvalCurve  # noqa: E402

_SAVE_KWARGS = {"format": "svg", "metadata": {"Date": None}}


def _new_axes(width: float = 6.0, height: float = 4.5):
    fig = Figure(figsize=(width, height))
    FigureCanvasSVG(fig)
    return fig, fig.add_subplot(111)


def save_curve_plot(
    path: str | Path,
    curves: Sequence[tuple[str, EvalCurve]],
    title: str = "Detection performance",
) -> None:
    """Recall over FPPI (log x), one line per labeled curve."""
    fig, ax = _new_axes()
    for label, curve in curves:
        order = curve.fppi.argsort(kind="stable")
        ax.plot(curve.fppi[order], curve.recall[order], marker=".", markersize=3, label=label)
    if any((curve.fppi > 0).any() for _, curve in curves):
        ax.set_xscale("log")  # log axis needs at least one positive fppi
    ax.set_xlabel("false positives per image")
    ax.set_ylabel("recall")
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(loc="lower right")
    ax.set_title(title)
    fig.savefig(path, **_SAVE_KWARGS)


def save_sweep_plot(
    path: str | Path,
    rows: Sequence[tuple[float, float, float]],
    title: str = "Soft threshold sweep",
) -> None:
    """Log-average miss rate as a function of the soft threshold."""
    fig, ax = _new_axes()
    ths = [r[0] for r in rows]
    lamr = [r[1] for r in rows]
    ax.plot(ths, lamr, marker="o")
    ax.set_xlabel("soft threshold")
    ax.set_ylabel("log-average miss rate")
    ax.grid(True, alpha=0.3)
    ax.set_title(title)
    fig.savefig(path, **_SAVE_KWARGS)


def save_silhouette_plot(
    path: str | Path,
    rows: Sequence[tuple[int, float]],
    title: str = "Cluster count selection",
) -> None:
    """Mean silhouette per candidate cluster count."""
    fig, ax = _new_axes()
    ks = [r[0] for r in rows]
    scores = [r[1] for r in rows]
    ax.plot(ks, scores, marker="o")
    ax.set_xticks(ks)
    ax.set_xlabel("cluster count k")
    ax.set_ylabel("mean silhouette")
    ax.grid(True, alpha=0.3)
    ax.set_title(title)
    fig.savefig(path, **_SAVE_KWARGS)
