"""Benchmark figure rendering. Import order matters: backend first."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bench import BenchRow


def render_bench_figure(rows: list[BenchRow], path: str | Path) -> Path:
    """Two panels: speedup and raw throughput against documents per prompt.

    One line per batch size, baseline as a dashed reference. Returns the
    path actually written.
    """
    path = Path(path)
    hpd = [r for r in rows if r.mode == "hpd"]
    ar = [r for r in rows if r.mode == "ar"]
    batches = sorted({r.b for r in hpd})

    fig, (ax_speed, ax_rate) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for b in batches:
        series = sorted((r for r in hpd if r.b == b), key=lambda r: r.j)
        xs = [r.j for r in series]
        ax_speed.plot(xs, [r.speedup for r in series], marker="o",
                      label=f"batch {b}")
        ax_rate.plot(xs, [r.products_per_s for r in series], marker="o",
                     label=f"batch {b}")
    ax_speed.axhline(1.0, color="gray", linestyle="--", linewidth=1,
                     label="baseline")
    if ar:
        ax_rate.axhline(ar[0].products_per_s, color="gray", linestyle="--",
                        linewidth=1, label="baseline")
    for ax, ylabel in ((ax_speed, "speedup (forward-pass ratio)"),
                       (ax_rate, "products per second")):
        ax.set_xlabel("documents per prompt")
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
