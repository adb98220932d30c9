"""CSV tables and SVG line plots written by the command line tool."""
import csv
import io
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import ConfigError
from .segments import PathGrid


def fmt(value):
    """Full-precision text for numbers, plain text otherwise."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if value is None:
        return ""
    return str(value)


def provenance_line(command, digest, seed):
    return f"# sddelab {command} config_sha256={digest} seed={seed}"


def write_csv(path, comment, header, rows):
    """RFC-4180 CSV with one leading ``#`` comment line."""
    buf = io.StringIO(newline="")
    buf.write(comment + "\r\n")
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def read_csv(path):
    """``(comment_lines, header, rows)`` of a file written by :func:`write_csv`."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    reader = list(csv.reader(body))
    if not reader:
        raise ConfigError(f"{path} has no header row")
    return comments, reader[0], reader[1:]


def write_path_csv(path, comment, pathgrid):
    t = pathgrid.times()
    header = ["t"] + [f"x{i}" for i in range(pathgrid.dim)]
    write_csv(path, comment, header, ([ti, *xi] for ti, xi in zip(t, pathgrid.values)))


def read_path_csv(path, grid):
    """Load a path file (columns ``t, x0, ...``) onto a grid with the same delay and step."""
    _, header, rows = read_csv(path)
    if not header or header[0] != "t":
        raise ConfigError(f"{path}: first column must be 't'")
    data = np.array([[float(v) for v in r] for r in rows])
    if data.ndim != 2 or data.shape[0] < grid.n_tau + 1:
        raise ConfigError(f"{path}: path shorter than one delay window")
    t = data[:, 0]
    if not np.allclose(np.diff(t), grid.step, rtol=1e-9, atol=1e-12):
        raise ConfigError(f"{path}: sample spacing does not match grid step {grid.step}")
    if abs(t[0] + grid.tau) > 1e-9 * max(1.0, grid.tau):
        raise ConfigError(f"{path}: path must start at t = -tau")
    g = grid.with_steps(data.shape[0] - grid.n_tau - 1)
    return PathGrid(g, data[:, 1:])


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def write_svg(path, series, xlabel, ylabel, title, width=640, height=420, comment=None):
    """Self-contained line plot; ``series`` maps label to ``(x, y)`` arrays.

    Each series becomes exactly one ``<polyline>``.  Non-finite points are dropped.
    ``comment`` (e.g. the provenance line) is stored as an XML comment.
    """
    left, right, top, bottom = 70, 150, 40, 55
    pts = {k: (np.asarray(x, float), np.asarray(y, float)) for k, (x, y) in series.items()}
    xs = np.concatenate([x[np.isfinite(x) & np.isfinite(y)] for x, y in pts.values()] or [[0, 1]])
    ys = np.concatenate([y[np.isfinite(x) & np.isfinite(y)] for x, y in pts.values()] or [[0, 1]])
    x0, x1 = (xs.min(), xs.max()) if xs.size else (0.0, 1.0)
    y0, y1 = (ys.min(), ys.max()) if ys.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pad = 0.08 * (y1 - y0) if y1 > y0 else 0.5
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = width - left - right, height - top - bottom

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + (y1 - v) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           *([f"<!-- {escape(comment.lstrip('# '))} -->"] if comment else []),
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" '
           f'font-size="15">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for v in np.linspace(x0, x1, 5):
        out.append(f'<text x="{sx(v):.1f}" y="{top + ph + 18}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{v:.3g}</text>')
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{left - 6}" y="{sy(v) + 4:.1f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{v:.3g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="13">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="13" transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, (x, y)) in enumerate(pts.items()):
        color = _PALETTE[i % len(_PALETTE)]
        ok = np.isfinite(x) & np.isfinite(y)
        coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[ok], y[ok]))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        ly = top + 16 + 18 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly - 4}" x2="{left + pw + 32}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 36}" y="{ly}" font-family="sans-serif" '
                   f'font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
