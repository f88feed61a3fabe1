"""SVG figures: population heatmaps and exploitability curves.

Figures are drawn on bare ``Figure`` objects (no pyplot state), with a fixed
SVG hash salt and no date stamp, so identical inputs give identical bytes.
"""

from __future__ import annotations

import json

import matplotlib
import numpy as np
from matplotlib.figure import Figure

HASH_SALT = "mftrpo"
HEATMAP_CMAP = "viridis"
WALL_COLOR = "#bdbdbd"


def _save(fig: Figure, path, description: str, title: str) -> None:
    with matplotlib.rc_context({"svg.hashsalt": HASH_SALT, "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={
            "Date": None, "Creator": "mftrpo", "Title": title, "Description": description})


def heatmap_svg(image: np.ndarray, path, title: str = "", values=None) -> None:
    """Linear viridis heatmap with the scale pinned to ``[0, max]``.

    Walls (NaN cells) are drawn grey. The raw per-state ``values`` (or the
    finite image cells in row-major order) are embedded as JSON in the SVG
    description so the figure can be audited without re-running.
    """
    image = np.asarray(image, dtype=float)
    finite = image[np.isfinite(image)]
    vmax = float(finite.max()) if finite.size and finite.max() > 0 else 1.0
    raw = list(finite) if values is None else list(np.asarray(values, dtype=float))
    description = json.dumps({"scale": "linear", "cmap": HEATMAP_CMAP, "vmin": 0.0,
                              "vmax": vmax, "values": [repr(float(v)) for v in raw]})
    cmap = matplotlib.colormaps[HEATMAP_CMAP].with_extremes(bad=WALL_COLOR)
    fig = Figure(figsize=(4.0, 3.4))
    ax = fig.add_subplot()
    im = ax.imshow(np.ma.masked_invalid(image), cmap=cmap, vmin=0.0, vmax=vmax,
                   interpolation="nearest")
    ax.set_xticks(range(image.shape[1]))
    ax.set_yticks(range(image.shape[0]))
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label="population mass")
    fig.tight_layout()
    _save(fig, path, description, title)


def bar_svg(values, path, title: str = "") -> None:
    """Per-state bar chart, used for non-grid environments."""
    values = np.asarray(values, dtype=float)
    description = json.dumps({"values": [repr(float(v)) for v in values]})
    fig = Figure(figsize=(4.5, 3.0))
    ax = fig.add_subplot()
    ax.bar(np.arange(values.size), values, color=matplotlib.colormaps[HEATMAP_CMAP](0.35))
    ax.set_xlabel("state")
    ax.set_ylabel("population mass")
    ax.set_ylim(bottom=0.0)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path, description, title)


def curve_svg(curves: dict, path, title: str = "", ylabel: str = "exploitability") -> None:
    """Line plot of ``{label: (ks, values)}`` on a log y-axis when all values are positive."""
    fig = Figure(figsize=(5.0, 3.4))
    ax = fig.add_subplot()
    positive = True
    for label, (ks, ys) in curves.items():
        ys = np.asarray(ys, dtype=float)
        positive &= bool(np.all(ys > 0))
        ax.plot(ks, ys, label=label, linewidth=1.2)
    if positive:
        ax.set_yscale("log")
    ax.set_xlabel("iteration k")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(curves) > 1:
        ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path, json.dumps({"series": sorted(curves)}), title)
