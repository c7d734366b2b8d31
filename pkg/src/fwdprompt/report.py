"""Run reports: JSON documents, CSV tables, side-by-side comparisons and SVG charts.

A report is a plain JSON-compatible dict, so ``parse_report(emit_report(r)) == r``
holds exactly. Wall-clock timings live under ``"timing"``; everything else is
a pure function of the configuration and seed.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .metrics import AccuracyMatrix, compute_report

REPORT_FORMAT = "fwdprompt-report"
REPORT_VERSION = 1
VOLATILE_KEYS = ("timing",)


class ReportError(ValueError):
    pass


def _plain(obj):
    """Recursively convert numpy scalars/arrays and non-string keys to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = sorted(obj) if isinstance(obj, (set, frozenset)) else obj
        return [_plain(x) for x in items]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return None if math.isnan(x) else x
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "value") and isinstance(obj.value, str):
        return obj.value
    return obj


def suite_fingerprint(tasks, pretrain):
    return {
        "recipe_hashes": {str(t.task_id): t.digest() for t in tasks},
        "pretrain_hash": pretrain.digest() if pretrain is not None else None,
    }


def build_report(result, experiment, tasks, pretrain, seed):
    """Assemble the report for one finished run."""
    acc = result.accuracy
    subspace = {k: v for k, v in result.stats.items() if k != "selection_histograms"}
    return _plain({
        "format": REPORT_FORMAT,
        "format_version": REPORT_VERSION,
        "seed": seed,
        "method": result.method,
        "config": experiment.to_dict(),
        "suite": {"geometry": experiment.suite.geometry, "n_tasks": len(tasks),
                  **suite_fingerprint(tasks, pretrain)},
        "accuracy": {
            "matrix": acc.to_list(),
            "direct_reference": None if acc.direct_reference is None else list(acc.direct_reference),
        },
        "metrics": compute_report(acc).to_dict(),
        "subspace": subspace,
        "selection_histograms": result.stats.get("selection_histograms", {}),
        "timing": result.timing,
    })


def emit_report(report):
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def parse_report(text, source="<report>"):
    try:
        report = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ReportError(f"{source}: not valid JSON (line {exc.lineno}: {exc.msg})") from None
    if not isinstance(report, dict) or report.get("format") != REPORT_FORMAT:
        raise ReportError(f"{source}: not a {REPORT_FORMAT} document")
    if report.get("format_version") != REPORT_VERSION:
        raise ReportError(f"{source}: unsupported report version {report.get('format_version')}")
    return report


def load_report(path):
    return parse_report(Path(path).read_text(), str(path))


def strip_volatile(report):
    """The report without wall-clock fields; equal across repeated seeded runs."""
    return {k: v for k, v in report.items() if k not in VOLATILE_KEYS}


def accuracy_matrix(report):
    acc = report["accuracy"]
    return AccuracyMatrix.from_list(acc["matrix"], acc.get("direct_reference"))


def _pct(x):
    return "" if x is None else f"{100.0 * x:.2f}"


def accuracy_csv(report):
    """Accuracy matrix in percent: one row per training stage, one column per task."""
    rows = report["accuracy"]["matrix"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["after_task"] + [f"task_{i}" for i in range(1, len(rows) + 1)])
    for t, row in enumerate(rows, start=1):
        w.writerow([t] + [_pct(x) for x in row])
    return buf.getvalue()


def metrics_csv(report):
    m = report["metrics"]
    n = len(report["accuracy"]["matrix"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "average_accuracy", "forgetting", "forward_transfer"])
    for t in range(1, n + 1):
        k = str(t)
        w.writerow([t, _pct(m["average_accuracy"].get(k)), _pct(m["forgetting"].get(k)),
                    _pct(m["forward_transfer"].get(k))])
    return buf.getvalue()


def check_compatible(reports, labels):
    """Raise :class:`ReportError` naming the differing recipe hashes if suites differ."""
    ref = reports[0]["suite"]
    for rep, label in zip(reports[1:], labels[1:]):
        suite = rep["suite"]
        diffs = []
        tasks = sorted(set(ref["recipe_hashes"]) | set(suite["recipe_hashes"]), key=int)
        for t in tasks:
            a, b = ref["recipe_hashes"].get(t), suite["recipe_hashes"].get(t)
            if a != b:
                diffs.append(f"task {t}: {a} vs {b}")
        if ref.get("pretrain_hash") != suite.get("pretrain_hash"):
            diffs.append(f"pretrain: {ref.get('pretrain_hash')} vs {suite.get('pretrain_hash')}")
        if diffs:
            raise ReportError(f"suite mismatch between {labels[0]} and {label}: " + "; ".join(diffs))


def comparison_rows(reports, labels):
    """Rows of (metric, value per report..., delta vs the first report...)."""
    check_compatible(reports, labels)
    n = len(reports[0]["accuracy"]["matrix"])
    final = str(n)

    def values(rep):
        mat = rep["accuracy"]["matrix"]
        m = rep["metrics"]
        out = [(f"a[{n}][{i}]", mat[n - 1][i - 1]) for i in range(1, n + 1)]
        out.append((f"A_{n}", m["average_accuracy"].get(final)))
        out.append((f"FGT_{n}", m["forgetting"].get(final)))
        out.append((f"FWD_{n}", m["forward_transfer"].get(final)))
        return out

    cols = [values(r) for r in reports]
    header = ["metric"] + list(labels) + [f"delta_{lab}" for lab in labels[1:]]
    rows = []
    for j, (name, _) in enumerate(cols[0]):
        vals = [c[j][1] for c in cols]
        base = vals[0]
        deltas = [None if (v is None or base is None) else v - base for v in vals[1:]]
        rows.append([name] + vals + deltas)
    return header, rows


def comparison_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([row[0]] + [_pct(x) for x in row[1:]])
    return buf.getvalue()


def format_table(header, rows):
    """Fixed-width text table, values in percent."""
    cells = [header] + [[row[0]] + [_pct(x) or "-" for x in row[1:]] for row in rows]
    widths = [max(len(str(r[j])) for r in cells) for j in range(len(header))]
    lines = []
    for i, r in enumerate(cells):
        lines.append("  ".join(str(c).rjust(w) if j else str(c).ljust(w) for j, (c, w) in enumerate(zip(r, widths))))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def rank_csv(table, scenarios):
    """Rows are tasks, columns are scenarios."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task"] + list(scenarios))
    for task in sorted(table, key=int):
        w.writerow([task] + [table[task].get(s, "") for s in scenarios])
    return buf.getvalue()


# --- SVG charts -----------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _svg(width, height, body):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n{body}</svg>\n')


def line_chart(series, title, y_label, width=420, height=260):
    """``series`` maps a name to y values at x = 1, 2, ...; None values are skipped."""
    left, right, top, bottom = 50, 110, 30, 35
    pts = [y for ys in series.values() for y in ys if y is not None]
    lo, hi = (min(pts), max(pts)) if pts else (0.0, 1.0)
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    n = max((len(ys) for ys in series.values()), default=1)
    pw, ph = width - left - right, height - top - bottom

    def sx(i):
        return left + (pw * (i - 1) / (n - 1) if n > 1 else pw / 2)

    def sy(y):
        return top + ph * (hi - y) / (hi - lo)

    parts = [f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
             f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
             f'<text x="12" y="{top + ph / 2:.0f}" transform="rotate(-90 12 {top + ph / 2:.0f})" '
             f'text-anchor="middle">{y_label}</text>']
    for frac in (0.0, 0.5, 1.0):
        y = lo + frac * (hi - lo)
        parts.append(f'<text x="{left - 4}" y="{sy(y) + 4:.1f}" text-anchor="end">{y:.2f}</text>')
    for i in range(1, n + 1):
        parts.append(f'<text x="{sx(i):.1f}" y="{top + ph + 15}" text-anchor="middle">{i}</text>')
    for k, (name, ys) in enumerate(series.items()):
        color = _PALETTE[k % len(_PALETTE)]
        xy = [(sx(i), sy(y)) for i, y in enumerate(ys, start=1) if y is not None]
        if xy:
            path = " ".join(f"{x:.1f},{y:.1f}" for x, y in xy)
            parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
            parts.extend(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="{color}"/>' for x, y in xy)
        parts.append(f'<text x="{left + pw + 10}" y="{top + 14 * (k + 1)}" fill="{color}">{name}</text>')
    return _svg(width, height, "\n".join(parts) + "\n")


def bar_chart(groups, title, y_label, width=420, height=260):
    """``groups`` maps a category to ``{series: value}``; bars are grouped per category."""
    left, right, top, bottom = 50, 110, 30, 35
    names = list(dict.fromkeys(s for g in groups.values() for s in g))
    vals = [v for g in groups.values() for v in g.values() if v is not None]
    lo, hi = min(vals + [0.0]), max(vals + [0.0])
    if hi - lo < 1e-9:
        hi = lo + 1.0
    pw, ph = width - left - right, height - top - bottom
    slot = pw / max(len(groups), 1)
    bw = slot * 0.8 / max(len(names), 1)

    def sy(y):
        return top + ph * (hi - y) / (hi - lo)

    parts = [f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
             f'<line x1="{left}" y1="{sy(0):.1f}" x2="{left + pw}" y2="{sy(0):.1f}" stroke="black"/>',
             f'<text x="12" y="{top + ph / 2:.0f}" transform="rotate(-90 12 {top + ph / 2:.0f})" '
             f'text-anchor="middle">{y_label}</text>',
             f'<text x="{left - 4}" y="{sy(hi) + 4:.1f}" text-anchor="end">{hi:.2f}</text>',
             f'<text x="{left - 4}" y="{sy(lo) + 4:.1f}" text-anchor="end">{lo:.2f}</text>']
    for gi, (cat, g) in enumerate(groups.items()):
        x0 = left + gi * slot + slot * 0.1
        parts.append(f'<text x="{left + (gi + 0.5) * slot:.1f}" y="{top + ph + 15}" '
                     f'text-anchor="middle">{cat}</text>')
        for si, name in enumerate(names):
            v = g.get(name)
            if v is None:
                continue
            y0, y1 = sorted((sy(0), sy(v)))
            parts.append(f'<rect x="{x0 + si * bw:.1f}" y="{y0:.1f}" width="{bw:.1f}" '
                         f'height="{max(y1 - y0, 0.5):.1f}" fill="{_PALETTE[si % len(_PALETTE)]}"/>')
    for si, name in enumerate(names):
        parts.append(f'<text x="{left + pw + 10}" y="{top + 14 * (si + 1)}" '
                     f'fill="{_PALETTE[si % len(_PALETTE)]}">{name}</text>')
    return _svg(width, height, "\n".join(parts) + "\n")


def report_charts(report):
    """``{filename suffix: svg}`` for one report: A_t over time and per-stage FGT/FWD."""
    m = report["metrics"]
    n = len(report["accuracy"]["matrix"])
    avg = [m["average_accuracy"].get(str(t)) for t in range(1, n + 1)]
    groups = {str(t): {"FGT": m["forgetting"].get(str(t)), "FWD": m["forward_transfer"].get(str(t))}
              for t in range(1, n + 1)}
    return {
        "average_accuracy.svg": line_chart({report["method"]: avg}, "Average accuracy A_t", "accuracy"),
        "transfer.svg": bar_chart(groups, "Forgetting and forward transfer", "score"),
    }
