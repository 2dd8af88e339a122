"""Report figures rendered straight to PNG files.

Built on ``matplotlib.figure.Figure`` with the Agg canvas, so nothing here
touches pyplot state or needs a display. Each figure is drawn from the
same rows that go into the CSV artifacts.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .dse import ParetoFront, WlatTuning
from .network import DesignPoint
from .perf import DesignMetrics


def _figure(size=(5.0, 3.4)) -> Figure:
    fig = Figure(figsize=size, dpi=120, layout="constrained")
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path: str | Path, tag: str | None) -> Path:
    path = Path(path)
    meta = {"Software": None}
    if tag:
        meta["Description"] = tag
    fig.savefig(path, format="png", metadata=meta)
    return path


def _apply_style(ax) -> None:
    for side in ("top", "right"):
        ax.spines[side].set_visible(False)
    ax.tick_params(labelsize=8)


def plot_pareto(
    evaluated: Sequence[tuple[DesignPoint, DesignMetrics]],
    front: ParetoFront,
    best: DesignPoint | None,
    path: str | Path,
    tag: str | None = None,
    baseline: ParetoFront | None = None,
) -> Path:
    """Accuracy against expected latency: every evaluated design, the front, the winner."""
    fig = _figure()
    ax = fig.add_subplot()
    _apply_style(ax)
    if evaluated:
        ax.scatter(
            [m.expected_latency_ms for _, m in evaluated],
            [m.accuracy for _, m in evaluated],
            s=6, c="0.75", lw=0, label="evaluated",
        )
    if baseline is not None and len(baseline):
        mb = [m for _, m in baseline]
        ax.plot([m.expected_latency_ms for m in mb], [m.accuracy for m in mb],
                "s--", ms=3, c="tab:orange", lw=0.8, label="random search")
    mf = [m for _, m in front]
    if mf:
        ax.plot([m.expected_latency_ms for m in mf], [m.accuracy for m in mf],
                "o-", ms=3, c="tab:blue", lw=0.9, label="Pareto front (acc, lat, mem)")
    if best is not None:
        hit = [m for d, m in evaluated if d == best] or [m for d, m in front if d == best]
        if hit:
            ax.plot(hit[0].expected_latency_ms, hit[0].accuracy, "*", ms=11, c="tab:red", label="selected")
    ax.set_xlabel("expected latency (ms)")
    ax.set_ylabel("accuracy")
    ax.legend(frameon=False, fontsize=8, loc="lower right")
    return _save(fig, path, tag)


def plot_search_trace(log_rows: Sequence[dict], path: str | Path, tag: str | None = None) -> Path:
    """Proposed score per annealing step, accepted moves highlighted, temperature on a log axis."""
    rows = [r for r in log_rows if r.get("phase") == "anneal"]
    fig = _figure((6.0, 3.2))
    ax = fig.add_subplot()
    _apply_style(ax)
    fin = [r for r in rows if r["score"] is not None and math.isfinite(r["score"])]
    acc = [r for r in fin if r["accepted"]]
    ax.scatter([r["iteration"] for r in fin], [r["score"] for r in fin], s=3, c="0.7", lw=0, label="proposed")
    ax.scatter([r["iteration"] for r in acc], [r["score"] for r in acc], s=4, c="tab:blue", lw=0, label="accepted")
    ax.set_xlabel("iteration")
    ax.set_ylabel("score")
    if rows:
        tx = ax.twinx()
        tx.plot([r["iteration"] for r in rows], [r["temperature"] for r in rows], c="tab:red", lw=0.8)
        tx.set_yscale("log")
        tx.set_ylabel("temperature", color="tab:red")
        tx.spines["top"].set_visible(False)
    ax.legend(frameon=False, fontsize=8, loc="lower right", markerscale=3)
    return _save(fig, path, tag)


def plot_wlat_tradeoff(tuning: WlatTuning, path: str | Path, tag: str | None = None) -> Path:
    """Best design per latency weight; the knee and the chosen weight are marked."""
    rows = sorted(tuning.rows, key=lambda r: r.metrics.expected_latency_ms)
    fig = _figure()
    ax = fig.add_subplot()
    _apply_style(ax)
    xs = [r.metrics.expected_latency_ms for r in rows]
    ys = [r.metrics.accuracy for r in rows]
    ax.plot(xs, ys, "o-", ms=4, c="tab:blue", lw=0.9)
    for r, x, y in zip(rows, xs, ys):
        ax.annotate(f"w={r.w_lat:g}", (x, y), textcoords="offset points", xytext=(4, -10), fontsize=7)
    ax.axvspan(min(xs), tuning.knee_latency_ms, color="tab:green", alpha=0.12, lw=0)
    chosen = [r for r in rows if r.w_lat == tuning.chosen]
    if chosen:
        m = chosen[0].metrics
        ax.plot(m.expected_latency_ms, m.accuracy, "*", ms=11, c="tab:red")
    ax.set_xlabel("expected latency (ms)")
    ax.set_ylabel("accuracy")
    return _save(fig, path, tag)
