"""Deterministic SVG plots from per-step CSV traces.

The SVG is written by hand so identical input gives byte-identical output.
"""
from __future__ import annotations

import csv
from collections import Counter
from pathlib import Path

W, H = 480, 300
ML, MR, MT, MB = 60, 20, 30, 45  # margins
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#000000")

REQUIRED = {
    "solve_rate": ("t", "solve_ns"),
    "cuts": ("t", "n_feas", "n_opt"),
    "iterations": ("t", "iters_to_first"),
    "histogram": ("iters_to_first",),
}


class PlotError(ValueError):
    pass


def _f(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def _frame(title: str, xlabel: str, ylabel: str, xr, yr) -> list[str]:
    x0, x1 = xr
    y0, y1 = yr
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect x="0" y="0" width="100%" height="100%" fill="white"/>',
        f'<text x="{W / 2:.0f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
        f'<path class="axes" d="M{ML},{MT} L{ML},{H - MB} L{W - MR},{H - MB}" stroke="black" fill="none"/>',
        f'<text x="{W / 2:.0f}" y="{H - 8}" text-anchor="middle" font-size="11">{xlabel}</text>',
        f'<text x="14" y="{H / 2:.0f}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 14 {H / 2:.0f})">{ylabel}</text>',
    ]
    for v in _ticks(x0, x1):
        px = _sx(v, xr)
        out.append(f'<text x="{_f(px)}" y="{H - MB + 14}" text-anchor="middle" font-size="9">{v:.4g}</text>')
    for v in _ticks(y0, y1):
        py = _sy(v, yr)
        out.append(f'<text x="{ML - 4}" y="{_f(py + 3)}" text-anchor="end" font-size="9">{v:.4g}</text>')
    return out


def _sx(v, xr):
    lo, hi = xr
    return ML + (0.0 if hi == lo else (v - lo) / (hi - lo)) * (W - ML - MR)


def _sy(v, yr):
    lo, hi = yr
    return H - MB - (0.0 if hi == lo else (v - lo) / (hi - lo)) * (H - MT - MB)


def _range(vals, floor_zero=True):
    if not vals:
        return (0.0, 1.0)
    lo = min(vals)
    hi = max(vals)
    if floor_zero:
        lo = min(lo, 0.0)
    if hi == lo:
        hi = lo + 1.0
    return (float(lo), float(hi))


def line_plot(series: dict, title: str, xlabel: str, ylabel: str) -> str:
    """``series`` maps a label to (xs, ys); each becomes one polyline path."""
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    xr, yr = _range(xs_all), _range(ys_all)
    out = _frame(title, xlabel, ylabel, xr, yr)
    for i, (label, (xs, ys)) in enumerate(series.items()):
        if not xs:
            continue
        pts = " L".join(f"{_f(_sx(x, xr))},{_f(_sy(y, yr))}" for x, y in zip(xs, ys))
        c = COLORS[i % len(COLORS)]
        out.append(f'<path class="series" data-label="{label}" d="M{pts}" stroke="{c}" fill="none"/>')
        out.append(f'<text x="{W - MR - 4}" y="{MT + 12 * (i + 1)}" text-anchor="end" '
                   f'font-size="10" fill="{c}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def histogram(values, title: str = "iterations to first control", xlabel: str = "iterations") -> str:
    """One bar per distinct value, height proportional to its count."""
    counts = Counter(int(v) for v in values)
    keys = sorted(counts)
    xr = (min(keys) - 0.5, max(keys) + 0.5) if keys else (0.0, 1.0)
    yr = (0.0, float(max(counts.values())) if counts else 1.0)
    out = _frame(title, xlabel, "count", xr, yr)
    bw = (W - ML - MR) / max(xr[1] - xr[0], 1.0) * 0.8
    for k in keys:
        cx = _sx(k, xr)
        top = _sy(counts[k], yr)
        out.append(f'<rect class="bar" data-value="{k}" data-count="{counts[k]}" x="{_f(cx - bw / 2)}" '
                   f'y="{_f(top)}" width="{_f(bw)}" height="{_f(H - MB - top)}" fill="{COLORS[0]}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def read_trace(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        rows = list(r)
        return list(r.fieldnames or []), rows


def _need(fields, columns, path):
    for c in columns:
        if c not in fields:
            raise PlotError(f"{path}: missing column {c!r}")


def _num(s: str):
    return None if s in ("", "inf", "-inf", "nan") else float(s)


def emit_plots(paths, out_dir) -> list[Path]:
    """Solve rate, stored cuts and iterations against time, plus the pooled iteration histogram."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traces = []
    for p in paths:
        fields, rows = read_trace(p)
        for cols in REQUIRED.values():
            _need(fields, cols, p)
        traces.append((Path(p).stem, rows))
    rate, cuts, iters, pooled = {}, {}, {}, []
    for name, rows in traces:
        t = [1000.0 * float(r["t"]) for r in rows]
        hz = [1e9 / max(float(r["solve_ns"]), 1.0) for r in rows]
        rate[name] = (t, hz)
        cuts[f"{name} feas"] = (t, [float(r["n_feas"]) for r in rows])
        cuts[f"{name} opt"] = (t, [float(r["n_opt"]) for r in rows])
        pairs = [(ti, _num(r["iters_to_first"])) for ti, r in zip(t, rows)]
        pairs = [(a, b) for a, b in pairs if b is not None]
        iters[name] = ([a for a, _ in pairs], [b for _, b in pairs])
        pooled += [b for _, b in pairs]
    files = {
        "solve_rate.svg": line_plot(rate, "solving speed", "time (ms)", "Hz"),
        "cuts.svg": line_plot(cuts, "stored cuts", "time (ms)", "count"),
        "iterations.svg": line_plot(iters, "iterations to first control", "time (ms)", "iterations"),
        "histogram.svg": histogram(pooled),
    }
    written = []
    for fname, text in files.items():
        path = out_dir / fname
        path.write_text(text)
        written.append(path)
    return written
