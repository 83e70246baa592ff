"""Report rendering: delimited metric tables plus matplotlib figures.

Every command that emits a machine-readable record also renders a small
figure next to it, so a run directory is inspectable without extra tooling.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

import numpy as np  # noqa: E402


def save_training_curves(records: list, out_png):
    """Loss curves from per-iteration training records."""
    if not records:
        return
    its = [r["iteration"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key, style in (("total", "-"), ("hr", "--"), ("lr", ":"), ("geo", "-.")):
        vals = [r.get(key, 0.0) for r in records]
        if any(v != 0.0 for v in vals) or key == "total":
            ax.plot(its, vals, style, label=key)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title("training losses")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)


def save_report_jsonl(report, out_jsonl):
    Path(out_jsonl).write_text(report.to_jsonl())


def save_eval_outputs(rows: list, out_dir):
    """Per-image metric rows to CSV plus a bar-chart figure.

    ``rows``: list of {"name", "psnr", "ssim"} dicts.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["name", "psnr", "ssim"])
        writer.writeheader()
        writer.writerows(rows)

    names = [r["name"] for r in rows]
    x = np.arange(len(names))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(max(7, len(names)), 4))
    ax1.bar(x, [r["psnr"] for r in rows], color="steelblue")
    ax1.set_xticks(x, names, rotation=60, ha="right", fontsize=7)
    ax1.set_ylabel("PSNR (dB)")
    ax2.bar(x, [r["ssim"] for r in rows], color="darkorange")
    ax2.set_xticks(x, names, rotation=60, ha="right", fontsize=7)
    ax2.set_ylabel("SSIM")
    ax2.set_ylim(-1.0, 1.0)
    fig.tight_layout()
    fig.savefig(out_dir / "metrics.png", dpi=110)
    plt.close(fig)
    return out_dir / "metrics.csv", out_dir / "metrics.png"


def save_sweep_diffs(diffs: list, out_png):
    """Adjacent-frame difference profile of a focal sweep."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(np.arange(1, len(diffs) + 1), diffs, "-o", ms=3)
    ax.set_xlabel("frame pair")
    ax.set_ylabel("mean abs diff")
    ax.set_title("focal sweep smoothness")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)


def eval_summary(rows: list) -> dict:
    return {
        "count": len(rows),
        "psnr_mean": float(np.mean([r["psnr"] for r in rows])) if rows else 0.0,
        "ssim_mean": float(np.mean([r["ssim"] for r in rows])) if rows else 0.0,
    }


def format_eval_table(rows: list) -> str:
    lines = [f"{'image':<28} {'PSNR(dB)':>10} {'SSIM':>8}",
             "-" * 48]
    for r in rows:
        lines.append(f"{r['name']:<28} {r['psnr']:>10.3f} {r['ssim']:>8.4f}")
    summary = eval_summary(rows)
    lines.append("-" * 48)
    lines.append(f"{'mean':<28} {summary['psnr_mean']:>10.3f} "
                 f"{summary['ssim_mean']:>8.4f}")
    return "\n".join(lines)
