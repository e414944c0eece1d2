"""Run-directory writers: CSV tables, SVG decay plots and the hashed manifest."""
from __future__ import annotations

import hashlib
import math
import os
import platform
from dataclasses import dataclass, field

import numpy as np


def fmt(v):
    """Deterministic text for table cells."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def write_table(path, columns, rows, comments=()):
    """Comma-separated table; ``comments`` are appended as ``#`` lines."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
        for line in comments:
            fh.write(f"# {line}\n")


def read_table(path):
    """Parse a table written by :func:`write_table` into ``(columns, rows, comments)``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    comments = [ln[2:] for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    columns = body[0].split(",")
    rows = [[float(v) if v else math.nan for v in ln.split(",")] for ln in body[1:]]
    return columns, rows, comments


# ---------------------------------------------------------------------------
# SVG


def _ticks(lo, hi):
    return [10.0**k for k in range(int(math.floor(lo)), int(math.ceil(hi)) + 1)]


def decay_plot_svg(x, y, references=(), xlabel="h", ylabel="error", title="", width=480, height=360):
    """Log-log polyline plot of ``y(x)`` plus reference curves.

    ``references`` is a sequence of ``(label, x_values, y_values)``.
    Non-positive values are skipped.
    """
    series = [("data", np.asarray(x, float), np.asarray(y, float))]
    series += [(lab, np.asarray(rx, float), np.asarray(ry, float)) for lab, rx, ry in references]
    pts = [(sx[(sx > 0) & (sy > 0)], sy[(sx > 0) & (sy > 0)]) for _, sx, sy in series]
    allx = np.concatenate([p[0] for p in pts]) if pts else np.zeros(0)
    ally = np.concatenate([p[1] for p in pts]) if pts else np.zeros(0)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>')
    if allx.size == 0:
        out.append(f'<text x="{width / 2:.1f}" y="{height / 2:.1f}" text-anchor="middle">no positive data</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"
    lx0, lx1 = math.log10(allx.min()), math.log10(allx.max())
    ly0, ly1 = math.log10(ally.min()), math.log10(ally.max())
    if lx1 - lx0 < 1e-9:
        lx0, lx1 = lx0 - 0.5, lx1 + 0.5
    if ly1 - ly0 < 1e-9:
        ly0, ly1 = ly0 - 0.5, ly1 + 0.5
    pad = 0.05
    lx0, lx1 = lx0 - pad * (lx1 - lx0), lx1 + pad * (lx1 - lx0)
    ly0, ly1 = ly0 - pad * (ly1 - ly0), ly1 + pad * (ly1 - ly0)
    left, right, top, bottom = 70, width - 20, 30, height - 50

    def px(v):
        return left + (math.log10(v) - lx0) / (lx1 - lx0) * (right - left)

    def py(v):
        return bottom - (math.log10(v) - ly0) / (ly1 - ly0) * (bottom - top)

    out.append(f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" fill="none" stroke="black"/>')
    for t in _ticks(lx0, lx1):
        if lx0 <= math.log10(t) <= lx1:
            out.append(f'<line x1="{px(t):.2f}" y1="{bottom}" x2="{px(t):.2f}" y2="{bottom + 5}" stroke="black"/>')
            out.append(f'<text x="{px(t):.2f}" y="{bottom + 18}" text-anchor="middle" font-size="11">{t:g}</text>')
    for t in _ticks(ly0, ly1):
        if ly0 <= math.log10(t) <= ly1:
            out.append(f'<line x1="{left - 5}" y1="{py(t):.2f}" x2="{left}" y2="{py(t):.2f}" stroke="black"/>')
            out.append(f'<text x="{left - 8}" y="{py(t) + 4:.2f}" text-anchor="end" font-size="11">{t:g}</text>')
    out.append(f'<text x="{(left + right) / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12">{xlabel}</text>')
    out.append(
        f'<text x="16" y="{(top + bottom) / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {(top + bottom) / 2:.1f})">{ylabel}</text>'
    )
    colours = ["black", "#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    dashes = ["", ' stroke-dasharray="6 4"', ' stroke-dasharray="2 3"', ' stroke-dasharray="8 3 2 3"', ""]
    for k, ((label, _, _), (sx, sy)) in enumerate(zip(series, pts)):
        if sx.size == 0:
            continue
        colour = colours[k % len(colours)]
        coords = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(sx, sy))
        out.append(f'<polyline points="{coords}" fill="none" stroke="{colour}" stroke-width="1.5"{dashes[k % len(dashes)]}/>')
        if k == 0:
            for a, b in zip(sx, sy):
                out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{colour}"/>')
        ly = top + 16 + 15 * k
        out.append(f'<line x1="{left + 10}" y1="{ly}" x2="{left + 35}" y2="{ly}" stroke="{colour}"{dashes[k % len(dashes)]}/>')
        out.append(f'<text x="{left + 40}" y="{ly + 4}" font-size="11">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def reference_curves(h, errors):
    """``C/|log h|`` and ``C h`` through the first positive data point."""
    h = np.asarray(h, float)
    e = np.asarray(errors, float)
    ok = (h > 0) & (e > 0) & np.isfinite(e)
    if not ok.any():
        return []
    h0, e0 = h[ok][0], e[ok][0]
    return [
        ("C/|log h|", h, e0 * abs(math.log(h0)) / np.abs(np.log(h))),
        ("C h", h, e0 * h / h0),
    ]


# ---------------------------------------------------------------------------
# manifest


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Resolved config, versions, timing and the hashed file inventory of a run."""

    directory: str
    config_echo: str
    versions: dict
    timing: dict
    files: dict = field(default_factory=dict)
    result: object = None

    def verify(self):
        """True when every listed file exists and matches its hash."""
        for name, digest in self.files.items():
            path = os.path.join(self.directory, name)
            if not os.path.isfile(path) or sha256_file(path) != digest:
                return False
        return True

    def text(self):
        lines = ["# manifest", "[versions]"]
        lines += [f"{k} = {v}" for k, v in sorted(self.versions.items())]
        lines.append("[timing]")
        lines += [f"{k} = {v:.3f}" for k, v in self.timing.items()]
        lines.append("[files]")
        lines += [f"{name} sha256={digest}" for name, digest in sorted(self.files.items())]
        lines.append("[config]")
        lines.append(self.config_echo.rstrip())
        return "\n".join(lines) + "\n"


def versions():
    import scipy

    from .. import __version__

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "roughflow": __version__,
    }


def read_manifest_files(path):
    """File inventory of a ``manifest.txt``: ``{name: sha256}``."""
    files = {}
    section = None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("["):
                section = line
                continue
            if section == "[files]" and " sha256=" in line:
                name, digest = line.rsplit(" sha256=", 1)
                files[name] = digest
    return files
