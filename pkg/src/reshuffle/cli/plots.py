"""Figures: a hand-written deterministic SVG and matplotlib PNGs."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

from .csvio import SchemaError, read_rows

SUMMARY_COLUMNS = (
    "method", "epoch", "runs",
    "f_mean", "f_ci", "dist_sq_mean", "dist_sq_ci", "grad_norm_sq_mean", "grad_norm_sq_ci",
)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 130, 40, 50


def _series(paths: Sequence, metric: str):
    """``{method: [(epoch, mean, ci)]}`` in first-seen order."""
    series: dict = {}
    nrows = 0
    for p in paths:
        rows = read_rows(p, SUMMARY_COLUMNS)
        nrows += len(rows)
        for r in rows:
            mean, ci = r[f"{metric}_mean"], r[f"{metric}_ci"] or 0.0
            if mean is None:
                continue
            series.setdefault(r["method"], []).append((r["epoch"], mean, ci))
    if nrows == 0:
        raise SchemaError("summary CSV has no rows")
    if not series:
        raise SchemaError(f"no values for metric {metric!r}")
    return series


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def emit_plot(csv_paths: Sequence, out_path, metric: str = "dist_sq", title: str = "") -> Path:
    """Render summary CSVs as an SVG with a log-scaled y axis.

    One polyline (ensemble mean) and one shaded band path (mean +- CI) per
    method. Output is byte-identical for identical inputs. Nothing is written
    if the inputs are empty or malformed.
    """
    if isinstance(csv_paths, (str, Path)):
        csv_paths = [csv_paths]
    series = _series(csv_paths, metric)

    pos = [v for pts in series.values() for _, m, c in pts for v in (m, m + c, m - c) if v > 0]
    if not pos:
        raise SchemaError(f"metric {metric!r} has no positive values to place on a log axis")
    lo = math.floor(math.log10(min(pos)))
    hi = math.ceil(math.log10(max(pos)))
    if hi == lo:
        hi += 1
    floor = 10.0 ** lo
    xs = [e for pts in series.values() for e, _, _ in pts]
    x0, x1 = min(xs), max(xs)
    if x1 == x0:
        x1 = x0 + 1
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def X(e):
        return LEFT + (e - x0) / (x1 - x0) * pw

    def Y(v):
        return TOP + (hi - math.log10(max(v, floor))) / (hi - lo) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
    ]
    for k in range(lo, hi + 1):
        y = _fmt(Y(10.0 ** k))
        out.append(f'<line x1="{LEFT - 5}" y1="{y}" x2="{LEFT}" y2="{y}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{y}" font-size="11" text-anchor="end" dominant-baseline="middle">1e{k}</text>')
    for e in sorted({x0, x1}):
        out.append(f'<text x="{_fmt(X(e))}" y="{TOP + ph + 18}" font-size="11" text-anchor="middle">{e:g}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{H - 10}" font-size="12" text-anchor="middle">epoch</text>')
    out.append(f'<text x="15" y="{TOP + ph / 2:.2f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 15 {TOP + ph / 2:.2f})">{metric}</text>')
    if title:
        out.append(f'<text x="{W / 2:.2f}" y="22" font-size="14" text-anchor="middle">{title}</text>')

    for j, (method, pts) in enumerate(series.items()):
        color = PALETTE[j % len(PALETTE)]
        pts = sorted(pts)
        upper = [(X(e), Y(m + c)) for e, m, c in pts]
        lower = [(X(e), Y(m - c)) for e, m, c in reversed(pts)]
        d = "M " + " L ".join(f"{_fmt(a)} {_fmt(b)}" for a, b in upper + lower) + " Z"
        out.append(f'<path d="{d}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{_fmt(X(e))},{_fmt(Y(m))}" for e, m, _ in pts)
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = TOP + 10 + 18 * j
        out.append(f'<line x1="{LEFT + pw + 10}" y1="{ly}" x2="{LEFT + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw + 35}" y="{ly}" font-size="11" dominant-baseline="middle">{method}</text>')
    out.append("</svg>")

    out_path = Path(out_path)
    out_path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return out_path


# ---------------------------------------------------------------------------
# matplotlib


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_summary_png(summary_path, out_path, metrics=("dist_sq", "f", "grad_norm_sq")) -> Path:
    """One log-scale panel per available metric, mean line with CI band."""
    plt = _pyplot()
    rows = read_rows(summary_path, SUMMARY_COLUMNS)
    avail = [m for m in metrics if any(r[f"{m}_mean"] is not None for r in rows)]
    fig, axes = plt.subplots(1, max(1, len(avail)), figsize=(4.5 * max(1, len(avail)), 3.5), squeeze=False)
    for ax, metric in zip(axes[0], avail):
        by: dict = {}
        for r in rows:
            if r[f"{metric}_mean"] is not None:
                by.setdefault(r["method"], []).append((r["epoch"], r[f"{metric}_mean"], r[f"{metric}_ci"] or 0.0))
        for method, pts in by.items():
            pts.sort()
            e = [p[0] for p in pts]
            m = [p[1] for p in pts]
            c = [p[2] for p in pts]
            ax.plot(e, m, label=method)
            ax.fill_between(e, [max(a - b, 1e-300) for a, b in zip(m, c)], [a + b for a, b in zip(m, c)], alpha=0.2)
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel(metric if metric != "f" else "f(x)")
        ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return out_path


def render_sweep_png(rows: list, out_path) -> Path:
    """Shuffling variance against sigma_*^2 and the sandwich, over gamma or tau."""
    plt = _pyplot()
    over_tau = len({r["tau"] for r in rows}) > 1
    key = "tau" if over_tau else "gamma"
    rows = sorted(rows, key=lambda r: r[key])
    xs = [r[key] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, [r["sigma_shuffle_est"] for r in rows], "o-", label="shuffling variance")
    ax.plot(xs, [r["sigma_star_sq"] for r in rows], "s--", label="sigma_*^2")
    ax.fill_between(xs, [r["prop1_lower"] for r in rows], [r["prop1_upper"] for r in rows], alpha=0.15, label="bounds")
    ax.set_xscale("log", base=2 if over_tau else 10)
    ax.set_yscale("log")
    ax.set_xlabel(key)
    ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return out_path
