"""Per-family subsampling and pie-chart scatter plots rendered as SVG."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .boaw import WindowHistogram, histogram_matrix, kmeans_fit, nearest_word
from .errors import DegenerateInputError, MalformedInputError
from .timeline import LABELS, SpeakerTier, VocalClass, label_name

T, V = SpeakerTier, VocalClass

LEGEND_BAND = 56  # px reserved above the plot for the 4-row legend

DEFAULT_PALETTE: dict[tuple[SpeakerTier, VocalClass], str] = {
    (T.CHN, V.CRY): "#08306b",
    (T.CHN, V.FUS): "#2171b5",
    (T.CHN, V.BAB): "#6baed6",
    (T.FAN, V.CDS): "#67000d",
    (T.FAN, V.ADS): "#cb181d",
    (T.FAN, V.LAU): "#fb6a4a",
    (T.FAN, V.SNG): "#fcae91",
    (T.MAN, V.CDS): "#00441b",
    (T.MAN, V.ADS): "#238b45",
    (T.MAN, V.LAU): "#74c476",
    (T.MAN, V.SNG): "#bae4b3",
    (T.CXN, V.CXN): "#e6550d",
}


@dataclass(frozen=True)
class RenderSpec:
    width: int = 720
    height: int = 720
    margin: int = 36
    min_radius: float = 2.0
    max_radius: float = 12.0
    palette: Mapping = field(default_factory=lambda: dict(DEFAULT_PALETTE))
    legend: bool = True
    seed: int = 0
    title: str = ""

    def __post_init__(self):
        if not self.max_radius > self.min_radius >= 0:
            raise MalformedInputError("need max_radius > min_radius >= 0")
        missing = [label_name(*lab) for lab in LABELS if lab not in self.palette]
        if missing:
            raise MalformedInputError(f"palette lacks colors for {', '.join(missing)}")
        if self.width <= 2 * self.margin or self.height <= 2 * self.margin:
            raise MalformedInputError("margins leave no drawing area")


def parse_palette(overrides: Mapping[str, str]) -> dict:
    """Default palette with entries replaced by ``{"CHN_CRY": "#..."}`` keys."""
    names = {label_name(*lab): lab for lab in LABELS}
    palette = dict(DEFAULT_PALETTE)
    for key, color in overrides.items():
        if key not in names:
            raise MalformedInputError(f"unknown palette entry {key!r}")
        palette[names[key]] = color
    return palette


@dataclass(frozen=True)
class PiePoint:
    x: float
    y: float
    slices: tuple = ()
    total_fraction: float = 0.0

    @classmethod
    def from_composition(cls, x: float, y: float, composition: Mapping, total: float | None = None):
        slices = tuple((lab, float(composition[lab])) for lab in LABELS
                       if composition.get(lab, 0.0) > 0.0)
        if total is None:
            total = sum(f for _, f in slices)
        return cls(float(x), float(y), slices, float(total))


def cluster_subsample(histograms: Sequence[WindowHistogram], n_clusters: int = 8, per_cluster: float = 100,
                      seed: int = 0) -> list[WindowHistogram]:
    """Cluster one family's histograms and keep at most ``per_cluster`` per cluster.

    Sampling is uniform without replacement; output is ordered by cluster
    index, then by original position.
    """
    if not histograms:
        raise MalformedInputError("no histograms to subsample")
    families = {h.family_id for h in histograms}
    if len(families) > 1:
        raise MalformedInputError(f"histograms span several families: {sorted(families)}")
    if len(histograms) < n_clusters:
        warnings.warn(f"{len(histograms)} histograms for {n_clusters} clusters; keeping all",
                      stacklevel=2)
        return list(histograms)
    X = histogram_matrix(histograms)
    book = kmeans_fit(X, n_clusters, seed=seed)
    labels = nearest_word(X, book)
    rng = np.random.default_rng(seed)
    out = []
    for c in range(n_clusters):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        take = members.size if per_cluster >= members.size else int(per_cluster)
        chosen = np.sort(rng.choice(members, size=take, replace=False))
        out.extend(histograms[i] for i in chosen)
    return out


def _num(x: float) -> str:
    s = f"{x:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _layout(points: Sequence[PiePoint], spec: RenderSpec):
    xy = np.array([(p.x, p.y) for p in points], dtype=np.float64)
    if not np.all(np.isfinite(xy)):
        raise MalformedInputError("point coordinates must be finite")
    pad = spec.max_radius
    band = LEGEND_BAND if spec.legend else 0
    left, top = spec.margin + pad, spec.margin + pad + band
    w = spec.width - 2 * (spec.margin + pad)
    h = spec.height - 2 * (spec.margin + pad) - band
    if w <= 0 or h <= 0:
        raise MalformedInputError("canvas too small for margins, radii and legend")
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = hi - lo
    if span.max() <= 0:
        return np.tile([left + w / 2, top + h / 2], (len(points), 1))
    scale = min(w / span[0] if span[0] > 0 else math.inf, h / span[1] if span[1] > 0 else math.inf)
    u = (xy - lo) * scale
    # centre the box; screen y grows downward
    ox = left + (w - span[0] * scale) / 2
    oy = top + (h - span[1] * scale) / 2
    sx = ox + u[:, 0]
    sy = oy + (span[1] * scale - u[:, 1])
    return np.column_stack([sx, sy])


def point_radius(total_fraction: float, spec: RenderSpec) -> float:
    return spec.min_radius + (spec.max_radius - spec.min_radius) * math.sqrt(max(0.0, min(1.0, total_fraction)))


def slice_angles(point: PiePoint) -> list[tuple[tuple, float, float]]:
    """(label, start, sweep) in degrees, clockwise from 12 o'clock."""
    total = sum(f for _, f in point.slices)
    if total <= 0:
        return []
    out, start = [], 0.0
    for lab, f in point.slices:
        if f <= 0:
            continue
        sweep = 360.0 * f / total
        out.append((lab, start, sweep))
        start += sweep
    return out


def _polar(cx: float, cy: float, r: float, deg: float) -> tuple[float, float]:
    a = math.radians(deg)
    return cx + r * math.sin(a), cy - r * math.cos(a)


def _pie_elements(cx: float, cy: float, r: float, point: PiePoint, spec: RenderSpec) -> list[str]:
    angles = slice_angles(point)
    if not angles:
        return [f'<circle cx="{_num(cx)}" cy="{_num(cy)}" r="{_num(spec.min_radius)}" '
                f'fill="none" stroke="#555555" stroke-width="0.6"/>']
    if len(angles) == 1:
        lab, start, sweep = angles[0]
        d = (f"M{_num(cx)},{_num(cy - r)} A{_num(r)},{_num(r)} 0 1 1 {_num(cx)},{_num(cy + r)} "
             f"A{_num(r)},{_num(r)} 0 1 1 {_num(cx)},{_num(cy - r)} Z")
        return [f'<path d="{d}" fill="{spec.palette[lab]}" data-label="{label_name(*lab)}" '
                f'data-start="{start:.9f}" data-sweep="{sweep:.9f}"/>']
    els = []
    for lab, start, sweep in angles:
        x0, y0 = _polar(cx, cy, r, start)
        x1, y1 = _polar(cx, cy, r, start + sweep)
        large = 1 if sweep > 180.0 else 0
        d = (f"M{_num(cx)},{_num(cy)} L{_num(x0)},{_num(y0)} "
             f"A{_num(r)},{_num(r)} 0 {large} 1 {_num(x1)},{_num(y1)} Z")
        els.append(f'<path d="{d}" fill="{spec.palette[lab]}" data-label="{label_name(*lab)}" '
                   f'data-start="{start:.9f}" data-sweep="{sweep:.9f}"/>')
    return els


def _legend(spec: RenderSpec) -> list[str]:
    els = ['<g class="legend" font-family="sans-serif" font-size="10">']
    x0, y0 = spec.margin, spec.margin / 2
    for i, lab in enumerate(LABELS):
        col, row = divmod(i, 4)
        x = x0 + col * 70
        y = y0 + row * 13
        els.append(f'<circle cx="{_num(x + 4)}" cy="{_num(y + 4)}" r="4" fill="{spec.palette[lab]}"/>')
        els.append(f'<text x="{_num(x + 11)}" y="{_num(y + 8)}">{escape(label_name(*lab))}</text>')
    els.append("</g>")
    return els


def render_svg(points: Sequence[PiePoint], spec: RenderSpec | None = None) -> bytes:
    """Render pie-chart points into a standalone SVG document.

    Radius grows with the square root of the vocalization fraction, so pie
    area tracks vocal time. Larger pies are drawn first.
    """
    spec = spec or RenderSpec()
    if not points:
        raise DegenerateInputError("no points to render")
    screen = _layout(points, spec)
    radii = [point_radius(p.total_fraction, spec) for p in points]
    order = sorted(range(len(points)), key=lambda i: -radii[i])
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{spec.width}" height="{spec.height}" '
        f'viewBox="0 0 {spec.width} {spec.height}">',
        f'<rect width="{spec.width}" height="{spec.height}" fill="#ffffff"/>',
    ]
    if spec.title:
        lines.append(f'<title>{escape(spec.title)}</title>')
    if spec.legend:
        lines.extend(_legend(spec))
    for i in order:
        cx, cy = screen[i]
        lines.append(f'<g class="pie" data-index="{i}">')
        lines.extend(_pie_elements(cx, cy, radii[i], points[i], spec))
        lines.append("</g>")
    lines.append("</svg>")
    return ("\n".join(lines) + "\n").encode("utf-8")


def pie_points(coords: np.ndarray, histograms: Sequence[WindowHistogram]) -> list[PiePoint]:
    if len(coords) != len(histograms):
        raise MalformedInputError("one histogram per projected point is required")
    return [PiePoint.from_composition(x, y, h.composition, h.total_voc_fraction if h.composition else 0.0)
            for (x, y), h in zip(coords, histograms)]


def format_pie_points_csv(points: Iterable[PiePoint], keys: Sequence[tuple[str, float]] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family_id", "window_start", "x", "y", "total_fraction"]
               + [label_name(*lab) for lab in LABELS])
    for i, p in enumerate(points):
        fam, start = keys[i] if keys else ("", float("nan"))
        fr = dict(p.slices)
        w.writerow([fam, repr(float(start)), repr(p.x), repr(p.y), repr(p.total_fraction)]
                   + [repr(fr.get(lab, 0.0)) for lab in LABELS])
    return buf.getvalue()
