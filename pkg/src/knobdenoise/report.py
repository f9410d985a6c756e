"""JSON-lines records and matplotlib figures for the metrics and bench reports."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import IO, Iterable

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def write_records(records: Iterable[dict], out: IO[str]) -> int:
    """One JSON object per line; non-finite floats become strings so every line stays valid JSON."""
    n = 0
    for rec in records:
        out.write(json.dumps({k: _clean(v) for k, v in rec.items()}) + "\n")
        n += 1
    return n


def plot_metrics(report, path) -> Path:
    path = Path(path)
    frames = list(range(len(report.per_frame)))
    ps = [p if math.isfinite(p) else float("nan") for p, _ in report.per_frame]
    ss = [s for _, s in report.per_frame]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    ax1.plot(frames, ps, marker="o", ms=3)
    ax1.set_ylabel("PSNR (dB)")
    ax1.set_title(f"mean PSNR {report.psnr:.2f} dB, mean SSIM {report.ssim:.4f}")
    ax2.plot(frames, ss, marker="o", ms=3, color="tab:orange")
    ax2.set_ylabel("SSIM (luma)")
    ax2.set_xlabel("frame")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_bench(reports, path) -> Path:
    """Stacked per-stage seconds per frame, one bar per benchmarked size."""
    from .engine import STAGES

    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    labels = [f"{r.width}x{r.height}" for r in reports]
    bottom = [0.0] * len(reports)
    for stage in STAGES:
        vals = [r.stage_seconds.get(stage, 0.0) / max(r.frames, 1) * 1000 for r in reports]
        ax.bar(labels, vals, bottom=bottom, label=stage)
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_ylabel("ms per frame (worker time)")
    ax.set_title("stage breakdown")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
