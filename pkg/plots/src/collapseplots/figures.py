"""Non-interactive figure rendering from collapselab output files.

Figures are deterministic: fixed style, no timestamps in image metadata,
so a rerun over the same inputs is byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "collapseplots"  # deterministic SVG ids

import matplotlib.pyplot as plt
import numpy as np

from .csvio import CellHistogram, read_hist_csv, read_rates_json

_BAR_COLOR = "#4878a8"
_MARKER_COLOR = "#b0413e"


@dataclass(frozen=True)
class FigureSpec:
    """Layout for a histogram grid: columns sweep d, rows sweep n.

    Rows are ordered with the largest n on top so the collapse diagonal runs
    lower-left to upper-right.  Unless ``sparse`` is set, every (d, n) pair
    of the layout must be present in the input.
    """

    hist_csv: Path
    out_path: Path
    title: str = ""
    dims: tuple[int, ...] | None = None
    sizes: tuple[int, ...] | None = None
    mean_marker: bool = True
    sparse: bool = False


def _save_deterministic(fig, out_path: Path) -> None:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    suffix = out_path.suffix.lower()
    if suffix == ".svg":
        metadata = {"Date": None}
    elif suffix == ".png":
        metadata = {"Software": None}
    else:
        raise ValueError(f"unsupported image format {suffix!r} (use .png or .svg)")
    fig.savefig(out_path, metadata=metadata)
    plt.close(fig)


def _draw_cell(ax, cell: CellHistogram, mean_marker: bool) -> None:
    left = np.asarray(cell.bin_left)
    width = np.asarray(cell.bin_right) - left
    ax.bar(left, cell.counts, width=width, align="edge", color=_BAR_COLOR, edgecolor="white")
    if mean_marker:
        ax.axvline(cell.mean_wmax, color=_MARKER_COLOR, linewidth=1.4)
    ax.set_xlim(0.0, 1.0)
    ax.set_title(f"d = {cell.d}, n = {cell.n}", fontsize=9)


def render_histogram_grid(spec: FigureSpec) -> Path:
    """Render the per-cell max-weight histograms as one grid image."""
    cells = read_hist_csv(spec.hist_csv)
    dims = tuple(spec.dims) if spec.dims else tuple(sorted({d for d, _ in cells}))
    sizes = tuple(spec.sizes) if spec.sizes else tuple(sorted({n for _, n in cells}))
    wanted = [(d, n) for d in dims for n in sizes]
    missing = [cell for cell in wanted if cell not in cells]
    if missing and not spec.sparse:
        raise ValueError(f"cells missing from {spec.hist_csv}: {missing}")

    rows = tuple(sorted(sizes, reverse=True))  # largest n on top
    fig, axes = plt.subplots(
        len(rows), len(dims),
        figsize=(3.0 * len(dims), 2.4 * len(rows)),
        squeeze=False,
    )
    for i, n in enumerate(rows):
        for j, d in enumerate(dims):
            ax = axes[i][j]
            cell = cells.get((d, n))
            if cell is None:
                ax.set_axis_off()
                continue
            _draw_cell(ax, cell, spec.mean_marker)
            if i == len(rows) - 1:
                ax.set_xlabel("max weight")
            if j == 0:
                ax.set_ylabel("count")
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    _save_deterministic(fig, spec.out_path)
    return Path(spec.out_path)


def render_rate_curves(report, out_path, title: str = "") -> Path:
    """Log-log plot of observed mean T versus dimension with the predicted
    rate overlaid and the fitted slope annotated."""
    if isinstance(report, (str, Path)):
        report = read_rates_json(report)
    cells = sorted(report.get("cells", []), key=lambda c: c["d"])
    if len(cells) < 2:
        raise ValueError(f"need at least 2 cells to draw rate curves, got {len(cells)}")
    d = np.array([c["d"] for c in cells], dtype=float)
    observed = np.array([c["mean_t_observed"] for c in cells], dtype=float)
    predicted = np.array([c["predicted_rate"] for c in cells], dtype=float)
    if np.any(observed <= 0) or np.any(predicted <= 0):
        raise ValueError("rate curves need positive observed and predicted values")

    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    ax.loglog(d, observed, "o-", color=_BAR_COLOR, label="observed mean T")
    ax.loglog(d, predicted, "s--", color=_MARKER_COLOR, label="predicted rate")
    slope = report.get("slope")
    if slope is None:
        slope = float(np.polyfit(np.log(d), np.log(observed), 1)[0])
    ax.annotate(f"slope = {slope:.2f}", xy=(0.05, 0.08), xycoords="axes fraction", fontsize=9)
    ax.set_xlabel("dimension d")
    ax.set_ylabel("mean T")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save_deterministic(fig, out_path)
    return Path(out_path)
