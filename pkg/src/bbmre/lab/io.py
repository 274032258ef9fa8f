"""CSV tables and small static SVG line plots."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np


class ResultTable:
    """Named equal-length columns; column order is preserved."""

    def __init__(self, columns: dict):
        if not columns:
            raise ValueError("empty table")
        self.columns = {str(k): np.asarray(v) for k, v in columns.items()}
        n = {v.shape[0] if v.ndim else -1 for v in self.columns.values()}
        if len(n) != 1 or -1 in n:
            raise ValueError("columns must be 1-d and of equal length")
        if n.pop() == 0:
            raise ValueError("empty table")

    def __len__(self):
        return next(iter(self.columns.values())).shape[0]

    def __getitem__(self, key):
        return self.columns[key]

    @property
    def names(self):
        return list(self.columns)

    def __eq__(self, other):
        if not isinstance(other, ResultTable) or self.names != other.names:
            return NotImplemented if not isinstance(other, ResultTable) else False
        return all(np.array_equal(self[k], other[k], equal_nan=self[k].dtype.kind == "f")
                   for k in self.names)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def emit_csv(table, path) -> Path:
    if not isinstance(table, ResultTable):
        table = ResultTable(table)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.names)
        cols = [table[k] for k in table.names]
        for i in range(len(table)):
            w.writerow([_fmt(c[i]) for c in cols])
    return path


def _column(values):
    for kind in (int, float):
        try:
            return np.array([kind(v) for v in values])
        except ValueError:
            continue
    return np.array(values)


def read_csv(path) -> ResultTable:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    head, body = rows[0], rows[1:]
    return ResultTable({h: _column([r[j] for r in body]) for j, h in enumerate(head)})


@dataclass
class Curve:
    x: np.ndarray
    y: np.ndarray
    label: str
    color: str = "#1f77b4"
    right_axis: bool = False


W, H = 720, 440
ML, MR, MT, MB = 70, 70, 40, 50


def _scale(lo, hi, a, b):
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("curve has no finite points")
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lambda v: a + (v - lo) / (hi - lo) * (b - a)


def _range(curves):
    xs = np.concatenate([np.asarray(c.x, float) for c in curves])
    ys = np.concatenate([np.asarray(c.y, float) for c in curves])
    ok = np.isfinite(xs) & np.isfinite(ys)
    if not ok.any():
        raise ValueError("curve has no finite points")
    return xs[ok].min(), xs[ok].max(), ys[ok].min(), ys[ok].max()


def emit_svg(curves, path, title="", xlabel="x", ylabel="y", y2label="", config_hash="") -> Path:
    """One polyline per curve; curves flagged ``right_axis`` use a second y scale."""
    curves = list(curves)
    if not curves or any(len(c.x) == 0 for c in curves):
        raise ValueError("nothing to plot")
    left = [c for c in curves if not c.right_axis]
    right = [c for c in curves if c.right_axis]
    x0, x1, _, _ = _range(curves)
    sx = _scale(x0, x1, ML, W - MR)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="black"/>']
    for group, side in ((left, "left"), (right, "right")):
        if not group:
            continue
        _, _, y0, y1 = _range(group)
        sy = _scale(y0, y1, H - MB, MT)
        for c in group:
            x = np.asarray(c.x, float)
            y = np.asarray(c.y, float)
            ok = np.isfinite(x) & np.isfinite(y)
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[ok], y[ok]))
            out.append(f'<polyline fill="none" stroke="{c.color}" stroke-width="1.2" points="{pts}">'
                       f'<title>{escape(c.label)}</title></polyline>')
        tx = ML - 6 if side == "left" else W - MR + 6
        anchor = "end" if side == "left" else "start"
        for v in (y0, y1):
            out.append(f'<text x="{tx}" y="{sy(v):.2f}" font-size="11" text-anchor="{anchor}">{v:.3g}</text>')
    for v in (x0, x1):
        out.append(f'<text x="{sx(v):.2f}" y="{H - MB + 16}" font-size="11" text-anchor="middle">{v:.3g}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 12}" font-size="13" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{H / 2}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 16 {H / 2})">{escape(ylabel)}</text>')
    if y2label:
        out.append(f'<text x="{W - 14}" y="{H / 2}" font-size="13" text-anchor="middle" '
                   f'transform="rotate(90 {W - 14} {H / 2})">{escape(y2label)}</text>')
    out.append(f'<text x="{W / 2}" y="24" font-size="14" text-anchor="middle">{escape(title)}</text>')
    for i, c in enumerate(curves):
        out.append(f'<text x="{ML + 8}" y="{MT + 16 + 14 * i}" font-size="11" fill="{c.color}">{escape(c.label)}</text>')
    out.append(f'<text x="{W - 6}" y="{H - 4}" font-size="9" text-anchor="end" fill="gray">config {escape(config_hash)}</text>')
    out.append("</svg>\n")
    path = Path(path)
    path.write_text("\n".join(out))
    return path
