"""Matplotlib figures written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "svg.hashsalt": "callqa",
}
MCE_COLOR = "tab:red"


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated runs byte-stable
    fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def _nan(v):
    return np.nan if v is None else v


def plot_comparison(rows: list[dict], path) -> Path:
    """MCE per model (red line) over grouped recall/F1 bars."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 3.2))
        names = [r["model"] for r in rows]
        x = np.arange(len(rows))
        ax.bar(x - 0.18, [_nan(r["recall"]) for r in rows], 0.36, label="recall", color="0.55")
        ax.bar(x + 0.18, [_nan(r["f1"]) for r in rows], 0.36, label="F1", color="0.8")
        ax.plot(x, [_nan(r["mce"]) for r in rows], "o-", color=MCE_COLOR, label="MCE")
        ax.set_xticks(x, names, rotation=20, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("score")
        ax.legend(loc="lower left", bbox_to_anchor=(0, 1.0), ncol=3, frameon=False)
        return _save(fig, path)


def plot_confusions(rows: list[dict], path) -> Path:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(rows), figsize=(2.1 * len(rows), 2.3), squeeze=False)
        for ax, r in zip(axes[0], rows):
            cm = np.array([[r["tn"], r["fp"]], [r["fn"], r["tp"]]])
            ax.imshow(cm, cmap="Blues")
            for (i, j), v in np.ndenumerate(cm):
                ax.text(j, i, str(v), ha="center", va="center",
                        color="white" if v > cm.max() / 2 else "black")
            ax.set_xticks([0, 1], ["non", "mal"])
            ax.set_yticks([0, 1], ["non", "mal"])
            ax.set_title(r["model"], fontsize=8)
            ax.set_xlabel("predicted")
        axes[0][0].set_ylabel("actual")
        fig.tight_layout()
        return _save(fig, path)


def plot_kpi(rows, path, period: str = "year") -> Path:
    """Mean silence percentage per period."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 2.8))
        x = np.arange(len(rows))
        ax.bar(x, [100 * r.mean_silence for r in rows], color="0.6")
        ax.set_xticks(x, [r.period for r in rows], rotation=45 if period == "month" else 0)
        ax.set_ylabel("mean silence (%)")
        ax.set_xlabel(period)
        return _save(fig, path)


def plot_search(report: dict, path) -> Path:
    """Selection metric against learning rate, one line per (hidden, batch)."""
    metric = report["selection_metric"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        groups: dict[tuple[int, int], list[tuple[float, float]]] = {}
        for rec in report["records"]:
            if rec["failed"] or rec["metrics"] is None:
                continue
            m = rec["metrics"]
            if metric == "mce":
                score = m["mce"]
            else:
                name, _, mode = metric.partition("_")
                score = m[name][mode]
            groups.setdefault((rec["n_hidden"], rec["batch_size"]), []).append(
                (rec["learning_rate"], _nan(score)))
        for (h, b), pts in sorted(groups.items()):
            pts.sort()
            ax.plot(*zip(*pts), "o-", label=f"h={h}, batch={b}", lw=1, ms=3)
        best = report["records"][report["best_index"]]
        ax.axvline(best["learning_rate"], color="0.7", lw=0.8, ls="--")
        ax.set_xscale("log")
        ax.set_xlabel("learning rate")
        ax.set_ylabel(metric)
        ax.legend(frameon=False, ncol=2)
        return _save(fig, path)
