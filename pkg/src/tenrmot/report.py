"""Delimited metric tables and matplotlib figures for the CLI report path."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import METRIC_NAMES, THRESHOLDS, HotaResult  # noqa: E402

plt.rcParams.update({
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
})


def metric_table(results: dict[str, HotaResult], delimiter: str = "\t") -> str:
    """One header row plus one row per named result, fixed 4-decimal values."""
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    writer.writerow(["name", *METRIC_NAMES])
    for name, res in results.items():
        writer.writerow([name, *(f"{getattr(res, m):.4f}" for m in METRIC_NAMES)])
    return buf.getvalue()


def rows_table(rows: list[dict], delimiter: str = "\t") -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), delimiter=delimiter, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: f"{v:.4f}" if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def write_results(results: dict[str, HotaResult], out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metric_table(results, ","))
    record = {name: {**res.as_dict(), "curves": {k: v.tolist() for k, v in res.curves.items()},
                     "thresholds": THRESHOLDS.tolist()}
              for name, res in results.items()}
    (out / "metrics.json").write_text(json.dumps(record, indent=1) + "\n")
    return [out / "metrics.csv", out / "metrics.json"]


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_threshold_curves(results: dict[str, HotaResult], path: Path) -> Path:
    """HOTA, DetA and AssA against the localisation threshold."""
    fig, ax = plt.subplots()
    styles = {"HOTA": "-", "DetA": "--", "AssA": ":"}
    for i, (name, res) in enumerate(results.items()):
        color = f"C{i}"
        for metric, ls in styles.items():
            ax.plot(THRESHOLDS, res.curves[metric], ls, color=color,
                    label=f"{name} {metric}" if len(results) > 1 else metric)
    ax.set_xlabel("localisation threshold")
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False, fontsize=7)
    return _save(fig, path)


def plot_loss_curve(history: list[dict], path: Path) -> Path:
    fig, ax = plt.subplots()
    epochs = [h["epoch"] for h in history]
    ax.plot(epochs, [h["loss"] for h in history], "k-", lw=1.5, label="total")
    for term in ("cls", "ref", "l1", "giou", "mask", "dice"):
        if term in history[0]:
            ax.plot(epochs, [h[term] for h in history], lw=0.8, label=term)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean clip loss")
    ax.set_yscale("log")
    ax.legend(frameon=False, fontsize=7, ncol=2)
    return _save(fig, path)


def plot_ablation(rows: list[dict], path: Path, metric: str = "HOTA") -> Path:
    """One panel per sweep; bars are cells, hatched bars the occlusion subset."""
    sweeps = list(dict.fromkeys(r["sweep"] for r in rows))
    fig, axes = plt.subplots(1, len(sweeps), figsize=(3.2 * len(sweeps), 3.0), squeeze=False)
    for ax, sweep in zip(axes[0], sweeps):
        sub = [r for r in rows if r["sweep"] == sweep]
        cells = list(dict.fromkeys(r["cell"] for r in sub))
        subsets = list(dict.fromkeys(r["subset"] for r in sub))
        width = 0.8 / len(subsets)
        x = np.arange(len(cells))
        for k, subset in enumerate(subsets):
            vals = [next((float(r[metric]) for r in sub if r["cell"] == c and r["subset"] == subset), 0.0)
                    for c in cells]
            ax.bar(x + (k - (len(subsets) - 1) / 2) * width, vals, width, color="C0" if k == 0 else "C1",
                   hatch=None if subset == "all" else "//", label=subset)
        ax.set_xticks(x, cells, rotation=30 if len(cells) > 4 else 0)
        ax.set_title(sweep)
        ax.set_ylim(0, 1)
        ax.set_ylabel(metric)
        if len(subsets) > 1:
            ax.legend(frameon=False, fontsize=7)
    return _save(fig, path)
