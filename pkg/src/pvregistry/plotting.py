"""Report figures written next to the CSV/JSON outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 100,
    "savefig.dpi": 150,
}

# no software/date stamps so reruns are byte-identical
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)


def plot_tilt_histogram(hist, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        edges = hist.bin_edges
        ax.bar(edges[:-1], hist.counts, width=edges[1] - edges[0], align="edge",
               color="#4c72b0", edgecolor="white", linewidth=0.5)
        ax.set_xlim(edges[0], edges[-1])
        ax.set_xlabel("Rooftop tilt [deg]")
        ax.set_ylabel("PV instances (non-flat)")
        ax.set_title(f"Tilt distribution, {hist.flat_share:.1%} on flat roofs")
        _save(fig, path)


def plot_registry_totals(report, path):
    t = report.totals
    labels = ["Official", "Official\n(corrected)", "Automated"]
    values = [t.official_kwp_raw, t.official_kwp_corrected, t.automated_kwp]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        bars = ax.bar(labels, values, color=["#8c8c8c", "#55a868", "#4c72b0"])
        for b, v in zip(bars, values):
            ax.annotate(f"{v:,.0f}", (b.get_x() + b.get_width() / 2, v), ha="center", va="bottom", fontsize=8)
        ax.set_ylabel("Capacity [kWp]")
        ax.set_title("Registry totals")
        _save(fig, path)


def plot_threshold_curve(curve, best, path):
    ts = [t for t, _ in curve]
    errs = [e for _, e in curve]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(ts, errs, color="#4c72b0", lw=1.2)
        ax.axvline(best[0], color="#c44e52", ls="--", lw=0.8)
        ax.set_xlabel("Threshold")
        ax.set_ylabel("Area MAPE [%]")
        ax.set_title(f"Best threshold {best[0]:.2f} (MAPE {best[1]:.2f}%)")
        _save(fig, path)
