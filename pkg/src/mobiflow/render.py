"""SVG flow maps and LISA cluster maps.

Output is plain SVG 1.1 text built from sorted inputs only, so identical inputs
give identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .geometry import project

# qualitative ColorBrewer schemes (8-class versions)
PALETTES = {
    "Set1": ("#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#ffff33", "#a65628", "#f781bf"),
    "Set2": ("#66c2a5", "#fc8d62", "#8da0cb", "#e78ac3", "#a6d854", "#ffd92f", "#e5c494", "#b3b3b3"),
    "Dark2": ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"),
    "Accent": ("#7fc97f", "#beaed4", "#fdc086", "#ffff99", "#386cb0", "#f0027f", "#bf5b17", "#666666"),
    "Paired": ("#a6cee3", "#1f78b4", "#b2df8a", "#33a02c", "#fb9a99", "#e31a1c", "#fdbf6f", "#ff7f00"),
    "Set3": ("#8dd3c7", "#ffffb3", "#bebada", "#fb8072", "#80b1d3", "#fdb462", "#b3de69", "#fccde5"),
}

LISA_COLORS = {
    "HH": "#ff0000",
    "LL": "#0000ff",
    "LH": "#a7adf9",
    "HL": "#f4ada8",
    "NotSignificant": "#eeeeee",
    "Island": "#ffffff",
}

BACKGROUND_FILL = "#f4f4f4"
BACKGROUND_STROKE = "#bdbdbd"


class RenderConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Palette:
    name: str
    colors: tuple[str, ...]

    def __post_init__(self):
        if len(set(c.lower() for c in self.colors)) != len(self.colors):
            raise RenderConfigError(f"palette {self.name} repeats a colour")

    @classmethod
    def named(cls, name: str) -> Palette:
        try:
            return cls(name, PALETTES[name])
        except KeyError:
            raise RenderConfigError(f"unknown palette {name!r}; choose from {', '.join(PALETTES)}") from None


@dataclass(frozen=True)
class Canvas:
    width: float = 800.0
    margin: float = 20.0
    precision: int = 2


class _Frame:
    """Maps lon/lat to SVG user units (y down) with a shared scale on both axes."""

    def __init__(self, shapes, canvas: Canvas, extra_points=()):
        pts = [r for s in shapes for r in s.rings]
        if extra_points:
            pts.append(np.asarray(extra_points, dtype=float).reshape(-1, 2))
        allpts = np.vstack(pts) if pts else np.zeros((1, 2))
        self.lat0 = float(allpts[:, 1].mean())
        xy = project(allpts, self.lat0)
        self.x0, self.y0 = xy.min(axis=0)
        x1, y1 = xy.max(axis=0)
        span = max(x1 - self.x0, y1 - self.y0, 1e-9)
        self.canvas = canvas
        self.s = (canvas.width - 2 * canvas.margin) / span
        self.height = 2 * canvas.margin + (y1 - self.y0) * self.s
        self.y1 = y1

    def xy(self, lonlat) -> tuple[float, float]:
        p = project(np.asarray(lonlat, dtype=float), self.lat0)
        return (
            self.canvas.margin + (p[0] - self.x0) * self.s,
            self.canvas.margin + (self.y1 - p[1]) * self.s,
        )

    def fmt(self, v: float) -> str:
        return f"{v:.{self.canvas.precision}f}"

    def ring_d(self, ring) -> str:
        coords = [self.xy(p) for p in ring[:-1]]
        return "M " + " L ".join(f"{self.fmt(x)} {self.fmt(y)}" for x, y in coords) + " Z"

    def points_attr(self, ring) -> str:
        return " ".join(f"{self.fmt(x)},{self.fmt(y)}" for x, y in (self.xy(p) for p in ring[:-1]))


def _header(frame: _Frame, title: str) -> list[str]:
    w, h = frame.fmt(frame.canvas.width), frame.fmt(frame.height)
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f"<title>{escape(title)}</title>",
    ]


def _background(frame: _Frame, districts) -> list[str]:
    out = ['<g id="districts">']
    for d in sorted(districts, key=lambda d: d.district_id):
        for part in d.parts:
            out.append(
                f'<polygon points="{frame.points_attr(part[0])}" fill="{BACKGROUND_FILL}" '
                f'stroke="{BACKGROUND_STROKE}" stroke-width="0.5"/>'
            )
            for hole in part[1:]:
                out.append(f'<polygon points="{frame.points_attr(hole)}" fill="#ffffff" stroke="{BACKGROUND_STROKE}" stroke-width="0.5"/>')
    out.append("</g>")
    return out


def series_colors(space_ids, palette: Palette) -> dict[str, str]:
    space_ids = sorted(space_ids)
    if len(space_ids) > len(palette.colors):
        overflow = ", ".join(space_ids[len(palette.colors):])
        raise RenderConfigError(
            f"palette {palette.name} has {len(palette.colors)} colours for {len(space_ids)} spaces; "
            f"no colour left for: {overflow}"
        )
    return dict(zip(space_ids, palette.colors))


def render_flow_map(trees, scale, palette: Palette, districts=(), canvas: Canvas = Canvas(),
                    title: str = "flows", names: dict[str, str] | None = None) -> str:
    """One SVG with one coloured tree per destination.

    ``trees`` maps ``space_id -> FlowTree`` and every edge's stroke width is
    ``scale.width(edge_weight)``.
    """
    colors = series_colors(trees, palette)
    extra = [p for t in trees.values() for p in t.points]
    frame = _Frame(list(districts), canvas, extra)
    out = _header(frame, title)
    out += _background(frame, districts)
    for sid in sorted(trees):
        tree = trees[sid]
        color = colors[sid]
        out.append(f'<g id={quoteattr("flows-" + sid)} stroke="{color}" fill="none">')
        edges = sorted(tree.edges, key=lambda v: (-tree.edge_weight[v], tree.node_ids[v]))
        for v in edges:
            (x0, y0), (x1, y1) = frame.xy(tree.points[v]), frame.xy(tree.points[tree.parent[v]])
            width = scale.width(tree.edge_weight[v])
            out.append(
                f'<path d="M {frame.fmt(x0)} {frame.fmt(y0)} L {frame.fmt(x1)} {frame.fmt(y1)}" '
                f'stroke="{color}" stroke-width="{float(width)!r}" stroke-linecap="round" '
                f'data-from={quoteattr(tree.node_ids[v])}/>'
            )
        x, y = frame.xy(tree.points[0])
        out.append(f'<circle cx="{frame.fmt(x)}" cy="{frame.fmt(y)}" r="3" fill="{color}"/>')
        out.append("</g>")
    out += _legend(frame, [(colors[s], (names or {}).get(s, s)) for s in sorted(trees)])
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _legend(frame: _Frame, entries) -> list[str]:
    out = ['<g id="legend" font-family="sans-serif" font-size="10">']
    for k, (color, label) in enumerate(entries):
        y = frame.canvas.margin + 14 * k
        out.append(f'<rect x="{frame.fmt(frame.canvas.margin)}" y="{frame.fmt(y)}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{frame.fmt(frame.canvas.margin + 14)}" y="{frame.fmt(y + 9)}">{escape(label)}</text>')
    out.append("</g>")
    return out


def render_lisa_map(districts, labels: dict[str, str], canvas: Canvas = Canvas(), title: str = "LISA clusters") -> str:
    """One filled path per district coloured by its cluster label."""
    missing = sorted(d.district_id for d in districts if d.district_id not in labels)
    if missing:
        raise RenderConfigError(f"district(s) without a label: {', '.join(missing)}")
    unknown = sorted({labels[d.district_id] for d in districts} - set(LISA_COLORS))
    if unknown:
        raise RenderConfigError(f"unknown label(s): {', '.join(unknown)}")
    frame = _Frame(list(districts), canvas)
    out = _header(frame, title)
    out.append('<g id="districts" stroke="#636363" stroke-width="0.5">')
    for d in sorted(districts, key=lambda d: d.district_id):
        path = " ".join(frame.ring_d(r) for r in d.rings)
        out.append(
            f'<path d="{path}" fill="{LISA_COLORS[labels[d.district_id]]}" fill-rule="evenodd" '
            f'data-district={quoteattr(d.district_id)}/>'
        )
    out.append("</g>")
    present = [lab for lab in LISA_COLORS if lab in set(labels.values())]
    out += _legend(frame, [(LISA_COLORS[lab], lab) for lab in present])
    out.append("</svg>")
    return "\n".join(out) + "\n"
