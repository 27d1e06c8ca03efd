"""Deterministic CSV, JSON and SVG writers plus content hashing."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np

__all__ = [
    "to_jsonable",
    "dumps_json",
    "write_json",
    "write_csv",
    "sha256_file",
    "git_blob_hash",
    "svg_line_plot",
]


def _num(x):
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return None
    return x


def to_jsonable(obj):
    """Convert numpy scalars and arrays to plain Python values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(dumps_json(obj), encoding="utf-8")
    return path


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = _num(v)
        return "" if v is None else repr(v)
    return str(v)


def write_csv(rows, columns, path) -> Path:
    """RFC 4180 CSV with CRLF line endings and ``repr`` floats."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    path = Path(path)
    path.write_bytes(buf.getvalue().encode("utf-8"))
    return path


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def git_blob_hash(data: bytes) -> str:
    """Hash ``data`` the way git hashes a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def svg_line_plot(
    x,
    series,
    hlines=(),
    title="",
    xlabel="",
    ylabel="",
    logx=False,
    width=640,
    height=420,
) -> str:
    """A small self-contained SVG plot.

    Parameters
    ----------
    series : list of dict
        Each has ``y``, optional ``err`` and ``label``.
    hlines : list of (value, label)
    """
    x = np.asarray(x, dtype=float)
    xs = np.log10(x) if logx else x
    ys = []
    for s in series:
        y = np.asarray(s["y"], dtype=float)
        e = np.asarray(s.get("err", np.zeros_like(y)), dtype=float)
        ys += list(y - e) + list(y + e)
    ys += [v for v, _ in hlines]
    ys = np.asarray([v for v in ys if np.isfinite(v)])
    ylo, yhi = float(ys.min()), float(ys.max())
    pad = 0.1 * (yhi - ylo) if yhi > ylo else 0.05 * max(abs(yhi), 1.0)
    ylo, yhi = ylo - pad, yhi + pad
    xlo, xhi = float(xs.min()), float(xs.max())
    if xhi == xlo:
        xlo, xhi = xlo - 1, xhi + 1
    xpad = 0.08 * (xhi - xlo)
    xlo, xhi = xlo - xpad, xhi + xpad
    L, R, T, B = 70, 20, 40, 50

    def px(v):
        return L + (v - xlo) / (xhi - xlo) * (width - L - R)

    def py(v):
        return height - B - (v - ylo) / (yhi - ylo) * (height - T - B)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{L}" y1="{height - B}" x2="{width - R}" y2="{height - B}" stroke="black"/>',
        f'<line x1="{L}" y1="{T}" x2="{L}" y2="{height - B}" stroke="black"/>',
    ]
    for xv, xd in zip(xs, x):
        out.append(
            f'<text x="{px(xv):.1f}" y="{height - B + 16}" text-anchor="middle">{xd:g}</text>'
        )
    for k in range(5):
        yv = ylo + (yhi - ylo) * (k + 0.5) / 5
        out.append(f'<text x="{L - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.4g}</text>')
    out.append(
        f'<text x="{(L + width - R) / 2:.1f}" y="{height - 10}" text-anchor="middle">{xlabel}</text>'
    )
    out.append(
        f'<text x="16" y="{(T + height - B) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(T + height - B) / 2:.1f})">{ylabel}</text>'
    )
    for v, lab in hlines:
        out.append(
            f'<line x1="{L}" y1="{py(v):.1f}" x2="{width - R}" y2="{py(v):.1f}" '
            f'stroke="gray" stroke-dasharray="6,4"/>'
        )
        out.append(f'<text x="{width - R - 4}" y="{py(v) - 4:.1f}" text-anchor="end">{lab}</text>')
    for k, s in enumerate(series):
        c = colors[k % len(colors)]
        y = np.asarray(s["y"], dtype=float)
        e = np.asarray(s.get("err", np.zeros_like(y)), dtype=float)
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(xs, y) if np.isfinite(b))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        for a, b, d in zip(xs, y, e):
            if not np.isfinite(b):
                continue
            out.append(
                f'<line x1="{px(a):.1f}" y1="{py(b - d):.1f}" x2="{px(a):.1f}" '
                f'y2="{py(b + d):.1f}" stroke="{c}"/>'
            )
            out.append(f'<circle cx="{px(a):.1f}" cy="{py(b):.1f}" r="3" fill="{c}"/>')
        out.append(
            f'<text x="{L + 10}" y="{T + 14 + 16 * k}" fill="{c}">{s.get("label", "")}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
