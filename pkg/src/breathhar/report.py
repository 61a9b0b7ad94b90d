"""Figure and summary-page rendering.

Figures are written as SVG with fixed hash salt and no embedded date so
reruns produce byte-identical files (the pipeline manifest checksums them).
"""

from __future__ import annotations

import html
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "breathhar"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

_SAVE_KWARGS = {"format": "svg", "metadata": {"Date": None}, "bbox_inches": "tight"}


def save_line_plot(path, x, curves: dict, title: str, xlabel: str, ylabel: str) -> Path:
    """One panel per named curve, sharing the x axis."""
    path = Path(path)
    fig, axes = plt.subplots(len(curves), 1, figsize=(8, 1.8 * len(curves)),
                             sharex=True, squeeze=False)
    for ax, (name, y) in zip(axes[:, 0], curves.items()):
        ax.plot(x, y, linewidth=0.8)
        ax.set_ylabel(name, fontsize=8)
        ax.tick_params(labelsize=7)
    axes[-1, 0].set_xlabel(xlabel, fontsize=8)
    axes[0, 0].set_title(title, fontsize=9)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return path


def save_confusion_matrix(path, matrix, labels, title: str = "Confusion matrix") -> Path:
    path = Path(path)
    m = np.asarray(matrix)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(m, cmap="Blues")
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(labels)), labels, fontsize=8)
    ax.set_xlabel("Predicted", fontsize=8)
    ax.set_ylabel("Actual", fontsize=8)
    ax.set_title(title, fontsize=9)
    threshold = m.max() / 2 if m.max() else 0.5
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            ax.text(j, i, str(int(m[i, j])), ha="center", va="center", fontsize=8,
                    color="white" if m[i, j] > threshold else "black")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return path


def save_metric_bars(path, eval_dict: dict, title: str = "Per-class metrics") -> Path:
    path = Path(path)
    labels = list(eval_dict["per_class"].keys())
    metrics = ("precision", "recall", "f1")
    width = 0.25
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(6, 3))
    for i, metric in enumerate(metrics):
        values = [eval_dict["per_class"][lab][metric] for lab in labels]
        ax.bar(x + (i - 1) * width, values, width, label=metric)
    ax.set_xticks(x, labels, fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7)
    ax.set_title(f"{title} (accuracy {eval_dict['accuracy']:.3f})", fontsize=9)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return path


def save_box_stats(path, stats_by_name: dict, ylabel: str,
                   title: str = "Distribution") -> Path:
    """Box plot from precomputed summaries (median, quartiles, fences)."""
    path = Path(path)
    boxes = []
    for name, s in stats_by_name.items():
        q1, median, q3 = s.quartiles
        lo_fence, hi_fence = s.outlier_fences
        boxes.append({
            "label": name,
            "med": median,
            "q1": q1,
            "q3": q3,
            "whislo": max(s.min, lo_fence),
            "whishi": min(s.max, hi_fence),
            "fliers": [],
        })
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bxp(boxes, showfliers=False)
    ax.set_ylabel(ylabel, fontsize=8)
    ax.set_title(title, fontsize=9)
    ax.tick_params(labelsize=8)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return path


def _metric_table(eval_dict: dict) -> str:
    rows = [
        "<tr><th>Class</th><th>Precision</th><th>Recall</th><th>F1-score</th><th>Support</th></tr>"
    ]
    for name, m in eval_dict["per_class"].items():
        rows.append(
            f"<tr><td>{html.escape(name)}</td><td>{m['precision']:.2f}</td>"
            f"<td>{m['recall']:.2f}</td><td>{m['f1']:.2f}</td><td>{m['support']}</td></tr>"
        )
    macro = eval_dict["macro_avg"]
    weighted = eval_dict["weighted_avg"]
    rows.append(
        f"<tr><td>Accuracy</td><td></td><td></td><td>{eval_dict['accuracy']:.2f}</td>"
        f"<td>{int(np.sum([m['support'] for m in eval_dict['per_class'].values()]))}</td></tr>"
    )
    rows.append(
        f"<tr><td>Macro avg</td><td>{macro[0]:.2f}</td><td>{macro[1]:.2f}</td>"
        f"<td>{macro[2]:.2f}</td><td></td></tr>"
    )
    rows.append(
        f"<tr><td>Weighted avg</td><td>{weighted[0]:.2f}</td><td>{weighted[1]:.2f}</td>"
        f"<td>{weighted[2]:.2f}</td><td></td></tr>"
    )
    return "<table border='1' cellspacing='0' cellpadding='4'>" + "".join(rows) + "</table>"


def render_html(path, eval_dict: dict, figure_paths: list, notes: dict | None = None) -> Path:
    """Static summary page referencing the rendered SVG figures."""
    path = Path(path)
    parts = [
        "<!DOCTYPE html>",
        "<html><head><meta charset='utf-8'><title>Activity recognition report</title>",
        "<style>body{font-family:sans-serif;max-width:60em;margin:2em auto;}"
        "figure{margin:1em 0;}table{border-collapse:collapse;}</style></head><body>",
        "<h1>Activity recognition report</h1>",
    ]
    if eval_dict.get("method"):
        parts.append(f"<p>Evaluation method: <b>{html.escape(eval_dict['method'])}</b></p>")
    parts.append(_metric_table(eval_dict))
    if notes:
        parts.append("<h2>Run details</h2><ul>")
        for key, value in notes.items():
            parts.append(f"<li><b>{html.escape(str(key))}</b>: {html.escape(str(value))}</li>")
        parts.append("</ul>")
    for fig_path in figure_paths:
        rel = Path(fig_path).name
        parts.append(f"<figure><img src='{html.escape(rel)}' alt='{html.escape(rel)}'></figure>")
    parts.append("</body></html>")
    path.write_text("\n".join(parts), encoding="utf-8")
    return path
