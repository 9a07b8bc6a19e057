"""Figures for experiment and evaluation reports (SVG or PNG, written atomically)."""

from __future__ import annotations

import io
from pathlib import Path
from statistics import median

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .io import atomic_write  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (4.8, 3.2),
    # stable ids so repeated renders are byte-identical
    "svg.hashsalt": "rmss",
}


def _save(fig, path) -> None:
    path = Path(path)
    fmt = path.suffix.lstrip(".").lower() or "svg"
    buf = io.BytesIO()
    metadata = {"Date": None} if fmt == "svg" else {}
    fig.savefig(buf, format=fmt, bbox_inches="tight", metadata=metadata)
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def label_efficiency_curves(rows) -> dict:
    """Median moving IoU per fraction for each (init, ablation) series."""
    cells = {}
    for r in rows:
        if r["init"] == "dpr_baseline":
            continue
        name = "scratch" if r["init"] == "scratch" else f"pretrained ({r['ablation']})"
        cells.setdefault(name, {}).setdefault(float(r["fraction"]), []).append(float(r["iou_moving"]))
    out = {}
    for name, by_frac in cells.items():
        fracs = sorted(by_frac)
        out[name] = (fracs, [median(by_frac[f]) for f in fracs])
    return out


def plot_label_efficiency(rows, path) -> None:
    """Line chart of median test moving IoU against label fraction (log x)."""
    curves = label_efficiency_curves(rows)
    baseline = [float(r["iou_moving"]) for r in rows if r["init"] == "dpr_baseline"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name in sorted(curves):
            fracs, vals = curves[name]
            ax.plot([100 * f for f in fracs], vals, marker="o", lw=1.2,
                    ls="--" if name == "scratch" else "-", label=name)
        if baseline:
            ax.axhline(baseline[0], color="0.5", lw=0.8, ls=":", label="DPR only")
        ax.set_xscale("log")
        ax.set_xlabel("labeled fraction (%)")
        ax.set_ylabel("moving IoU (median over seeds)")
        ax.legend(frameon=False)
        _save(fig, path)


def plot_iou_bars(metrics: dict, path) -> None:
    """Bar chart of moving / static / mean IoU from an evaluation report."""
    names = ["iou_moving", "iou_static", "iou_mean"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        vals = [float(metrics[n]) for n in names]
        bars = ax.bar(["moving", "static", "mean"], vals, color=["C3", "C0", "0.5"])
        for b, v in zip(bars, vals):
            ax.text(b.get_x() + b.get_width() / 2, v, f"{v:.3f}", ha="center", va="bottom", fontsize=8)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("IoU")
        _save(fig, path)
