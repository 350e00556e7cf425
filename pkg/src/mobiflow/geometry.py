"""District and public-space layers, point assignment, centroids and contiguity weights.

All predicates are planar in lon/lat degrees; distances use an equirectangular
projection around a reference latitude.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CATEGORIES = ("CBD", "Mall", "Leisure", "UniversityCampus", "Transport", "Park")
EARTH_RADIUS_M = 6371008.8

# absolute tolerance in degrees for boundary and contiguity tests (~0.1 mm)
GEOM_TOL = 1e-9


class LoadError(ValueError):
    """Raised when a GeoJSON layer cannot be turned into validated features."""


class DegenerateWeightsError(ValueError):
    pass


def _as_rings(coords) -> list[np.ndarray]:
    return [np.asarray(r, dtype=float)[:, :2] for r in coords]


@dataclass(eq=False)
class _Shape:
    # parts -> rings (exterior first, then holes) -> (m, 2) closed coordinate arrays
    parts: list[list[np.ndarray]]

    @property
    def rings(self) -> list[np.ndarray]:
        return [r for part in self.parts for r in part]

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        pts = np.vstack(self.rings)
        return (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())

    def geojson_geometry(self) -> dict:
        polys = [[r.tolist() for r in part] for part in self.parts]
        if len(polys) == 1:
            return {"type": "Polygon", "coordinates": polys[0]}
        return {"type": "MultiPolygon", "coordinates": polys}


@dataclass(eq=False)
class District(_Shape):
    district_id: str = ""
    name: str = ""
    population: float = 0.0


@dataclass(eq=False)
class PublicSpace(_Shape):
    space_id: str = ""
    name: str = ""
    category: str = ""


# ---------------------------------------------------------------------------
# ring validation


def _segments(ring: np.ndarray) -> np.ndarray:
    return np.stack([ring[:-1], ring[1:]], axis=1)


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def ring_self_intersects(ring: np.ndarray) -> bool:
    """True when two non-adjacent edges of a closed ring touch or cross."""
    seg = _segments(ring)
    m = len(seg)
    if m < 3:
        return True
    hit = segments_touch(seg[:, None], seg[None, :])
    idx = np.arange(m)
    adjacent = (np.abs(idx[:, None] - idx[None, :]) <= 1) | (
        np.abs(idx[:, None] - idx[None, :]) == m - 1
    )
    return bool(np.any(hit & ~adjacent))


def validate_ring(ring: np.ndarray) -> str | None:
    if ring.ndim != 2 or len(ring) < 4:
        return "ring has fewer than 4 positions"
    if not np.all(np.isfinite(ring)):
        return "ring has non-finite coordinates"
    if not np.array_equal(ring[0], ring[-1]):
        return "ring is not closed"
    if abs(ring_area(ring)) <= 0.0:
        return "ring has zero area"
    if ring_self_intersects(ring):
        return "ring self-intersects"
    return None


# ---------------------------------------------------------------------------
# loading


def _parse_geometry(geom, label: str) -> list[list[np.ndarray]]:
    if not isinstance(geom, dict) or "type" not in geom:
        raise LoadError(f"{label}: missing geometry")
    try:
        if geom["type"] == "Polygon":
            parts = [_as_rings(geom["coordinates"])]
        elif geom["type"] == "MultiPolygon":
            parts = [_as_rings(p) for p in geom["coordinates"]]
        else:
            raise LoadError(f"{label}: unsupported geometry type {geom['type']!r}")
    except (TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, LoadError):
            raise
        raise LoadError(f"{label}: malformed coordinates") from exc
    if not parts or any(not part for part in parts):
        raise LoadError(f"{label}: empty polygon")
    for part in parts:
        for ring in part:
            problem = validate_ring(ring)
            if problem:
                raise LoadError(f"{label}: invalid ring ({problem})")
    return parts


def _read_features(path) -> list[dict]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise LoadError(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise LoadError(f"{path}: not a GeoJSON FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise LoadError(f"{path}: features must be a list")
    if not features:
        warnings.warn(f"{path}: empty FeatureCollection", stacklevel=3)
    return features


def _require(props: dict, key: str, label: str):
    if key not in props or props[key] is None:
        raise LoadError(f"{label}: missing property {key!r}")
    return props[key]


def districts_from_features(features: list[dict], source: str = "districts") -> list[District]:
    out: list[District] = []
    seen: set[str] = set()
    for k, feat in enumerate(features):
        props = feat.get("properties") or {}
        label = f"{source} feature {props.get('district_id', k)!s}"
        did = str(_require(props, "district_id", label))
        label = f"{source} feature {did}"
        name = str(_require(props, "name", label))
        pop = _require(props, "population", label)
        try:
            pop = float(pop)
        except (TypeError, ValueError) as exc:
            raise LoadError(f"{label}: population is not a number") from exc
        if not math.isfinite(pop) or pop < 0:
            raise LoadError(f"{label}: population must be a nonnegative number")
        if did in seen:
            raise LoadError(f"{label}: duplicate district_id")
        seen.add(did)
        parts = _parse_geometry(feat.get("geometry"), label)
        out.append(District(parts=parts, district_id=did, name=name, population=pop))
    return out


def spaces_from_features(features: list[dict], source: str = "spaces") -> list[PublicSpace]:
    out: list[PublicSpace] = []
    seen: set[str] = set()
    for k, feat in enumerate(features):
        props = feat.get("properties") or {}
        label = f"{source} feature {props.get('space_id', k)!s}"
        sid = str(_require(props, "space_id", label))
        label = f"{source} feature {sid}"
        name = str(_require(props, "name", label))
        cat = _require(props, "category", label)
        if cat not in CATEGORIES:
            raise LoadError(f"{label}: category {cat!r} not in {', '.join(CATEGORIES)}")
        if sid in seen:
            raise LoadError(f"{label}: duplicate space_id")
        seen.add(sid)
        parts = _parse_geometry(feat.get("geometry"), label)
        out.append(PublicSpace(parts=parts, space_id=sid, name=name, category=cat))
    return out


def load_districts(path) -> list[District]:
    return districts_from_features(_read_features(path), source=str(path))


def load_spaces(path) -> list[PublicSpace]:
    return spaces_from_features(_read_features(path), source=str(path))


def load_layers(districts_path, spaces_path) -> tuple[list[District], list[PublicSpace]]:
    """Load and validate the district and public-space GeoJSON layers."""
    return load_districts(districts_path), load_spaces(spaces_path)


def feature_collection(shapes, properties) -> dict:
    """GeoJSON FeatureCollection from shapes and a parallel list of property dicts."""
    return {
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "properties": props, "geometry": s.geojson_geometry()}
            for s, props in zip(shapes, properties)
        ],
    }


def districts_to_geojson(districts: list[District]) -> dict:
    return feature_collection(
        districts,
        [{"district_id": d.district_id, "name": d.name, "population": d.population} for d in districts],
    )


def spaces_to_geojson(spaces: list[PublicSpace]) -> dict:
    return feature_collection(
        spaces,
        [{"space_id": s.space_id, "name": s.name, "category": s.category} for s in spaces],
    )


# ---------------------------------------------------------------------------
# point in polygon


def points_in_rings(points: np.ndarray, rings: list[np.ndarray], tol: float = GEOM_TOL) -> np.ndarray:
    """Even-odd containment of ``points`` (N, 2) in a ring set, boundary inclusive."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    px, py = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    boundary = np.zeros(len(points), dtype=bool)
    for ring in rings:
        x1, y1 = ring[:-1, 0], ring[:-1, 1]
        x2, y2 = ring[1:, 0], ring[1:, 1]
        for a_x, a_y, b_x, b_y in zip(x1, y1, x2, y2):
            straddle = (a_y > py) != (b_y > py)
            if np.any(straddle):
                xs = a_x + (py[straddle] - a_y) * (b_x - a_x) / (b_y - a_y)
                flip = np.zeros_like(straddle)
                flip[straddle] = px[straddle] < xs
                inside ^= flip
            dx, dy = b_x - a_x, b_y - a_y
            seg_len = math.hypot(dx, dy)
            qx, qy = px - a_x, py - a_y
            cross = dx * qy - dy * qx
            dot = dx * qx + dy * qy
            boundary |= (np.abs(cross) <= tol * seg_len) & (dot >= -tol * seg_len) & (
                dot <= seg_len * seg_len + tol * seg_len
            )
    return inside | boundary


def _sorted_by_id(districts: list[District]) -> list[District]:
    return sorted(districts, key=lambda d: d.district_id)


class DistrictIndex:
    """Vectorized point-to-district assignment with deterministic tie-breaking.

    Districts are scanned in ascending ``district_id`` order and a point keeps the
    first district that contains it, so a point on a shared boundary goes to the
    lexicographically smallest id.
    """

    def __init__(self, districts: list[District]):
        self.districts = _sorted_by_id(districts)
        self.ids = [d.district_id for d in self.districts]
        self._bounds = np.array([d.bounds for d in self.districts]).reshape(-1, 4)

    def assign(self, points) -> np.ndarray:
        """Index into ``self.ids`` for each point, -1 where no district contains it."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        out = np.full(len(points), -1, dtype=np.int64)
        for k, d in enumerate(self.districts):
            x0, y0, x1, y1 = self._bounds[k]
            cand = np.flatnonzero(
                (out < 0)
                & (points[:, 0] >= x0 - GEOM_TOL)
                & (points[:, 0] <= x1 + GEOM_TOL)
                & (points[:, 1] >= y0 - GEOM_TOL)
                & (points[:, 1] <= y1 + GEOM_TOL)
            )
            if len(cand):
                hit = points_in_rings(points[cand], d.rings)
                out[cand[hit]] = k
        return out

    def assign_ids(self, points) -> list[str | None]:
        return [self.ids[k] if k >= 0 else None for k in self.assign(points)]


def point_in_district(point, districts: list[District]) -> str | None:
    return DistrictIndex(districts).assign_ids([point])[0]


def assign_points(points, shapes, key: str) -> np.ndarray:
    """Like :class:`DistrictIndex` but for any shape list; returns positional indices
    into ``shapes`` (ties resolved by smallest ``key`` attribute)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    order = sorted(range(len(shapes)), key=lambda i: getattr(shapes[i], key))
    out = np.full(len(points), -1, dtype=np.int64)
    for i in order:
        x0, y0, x1, y1 = shapes[i].bounds
        cand = np.flatnonzero(
            (out < 0)
            & (points[:, 0] >= x0 - GEOM_TOL)
            & (points[:, 0] <= x1 + GEOM_TOL)
            & (points[:, 1] >= y0 - GEOM_TOL)
            & (points[:, 1] <= y1 + GEOM_TOL)
        )
        if len(cand):
            out[cand[points_in_rings(points[cand], shapes[i].rings)]] = i
    return out


def shape_membership(points, shape) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    return points_in_rings(points, shape.rings)


# ---------------------------------------------------------------------------
# centroids and projection


def ring_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


def _ring_moments(ring: np.ndarray) -> tuple[float, float, float]:
    x, y = ring[:, 0], ring[:, 1]
    c = x[:-1] * y[1:] - x[1:] * y[:-1]
    a = 0.5 * float(c.sum())
    mx = float(((x[:-1] + x[1:]) * c).sum()) / 6.0
    my = float(((y[:-1] + y[1:]) * c).sum()) / 6.0
    return a, mx, my


def part_area(part: list[np.ndarray]) -> float:
    return abs(ring_area(part[0])) - sum(abs(ring_area(h)) for h in part[1:])


def centroid(shape: _Shape, area_tol: float = 1e-15) -> tuple[float, float]:
    """Area-weighted centroid of the largest part (holes subtracted).

    Falls back to the mean of the exterior ring's vertices when the part area is
    below ``area_tol``.
    """
    part = max(shape.parts, key=part_area)
    area = mx = my = 0.0
    for k, ring in enumerate(part):
        a, rx, ry = _ring_moments(ring)
        # orient: exterior positive, holes negative
        sign = (1.0 if a >= 0 else -1.0) * (1.0 if k == 0 else -1.0)
        area += sign * a
        mx += sign * rx
        my += sign * ry
    if abs(area) < area_tol:
        verts = part[0][:-1]
        return float(verts[:, 0].mean()), float(verts[:, 1].mean())
    return mx / area, my / area


def reference_latitude(shapes) -> float:
    pts = np.vstack([r for s in shapes for r in s.rings])
    return float(pts[:, 1].mean())


def project(lonlat, lat0: float) -> np.ndarray:
    """Equirectangular projection to metres around latitude ``lat0``."""
    ll = np.asarray(lonlat, dtype=float)
    k = math.radians(1.0) * EARTH_RADIUS_M
    out = np.empty_like(ll)
    out[..., 0] = ll[..., 0] * k * math.cos(math.radians(lat0))
    out[..., 1] = ll[..., 1] * k
    return out


# ---------------------------------------------------------------------------
# contiguity


def segments_touch(s1: np.ndarray, s2: np.ndarray, tol: float = GEOM_TOL) -> np.ndarray:
    """Broadcasted closed-segment intersection test; segments are (..., 2, 2)."""
    p, p2 = s1[..., 0, :], s1[..., 1, :]
    q, q2 = s2[..., 0, :], s2[..., 1, :]
    r = p2 - p
    s = q2 - q
    len_r = np.hypot(r[..., 0], r[..., 1])
    len_s = np.hypot(s[..., 0], s[..., 1])
    # signed distances of each endpoint from the other segment's line
    d1 = _cross(r, q - p) / np.where(len_r > 0, len_r, 1)
    d2 = _cross(r, q2 - p) / np.where(len_r > 0, len_r, 1)
    d3 = _cross(s, p - q) / np.where(len_s > 0, len_s, 1)
    d4 = _cross(s, p2 - q) / np.where(len_s > 0, len_s, 1)

    def side(d):
        return np.where(d > tol, 1, np.where(d < -tol, -1, 0))

    o1, o2, o3, o4 = side(d1), side(d2), side(d3), side(d4)
    proper = (o1 * o2 <= 0) & (o3 * o4 <= 0) & ~((o1 == 0) & (o2 == 0))

    # collinear case: project onto r and check interval overlap
    rr = np.where(len_r > 0, len_r * len_r, 1)
    t0 = np.sum((q - p) * r, axis=-1) / rr
    t1 = np.sum((q2 - p) * r, axis=-1) / rr
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    slack = tol / np.where(len_r > 0, len_r, 1)
    collinear = (o1 == 0) & (o2 == 0) & (hi >= -slack) & (lo <= 1 + slack)
    return proper | collinear


def segments_share_edge(s1: np.ndarray, s2: np.ndarray, tol: float = GEOM_TOL) -> np.ndarray:
    """Broadcasted test for collinear overlap of positive length."""
    p, p2 = s1[..., 0, :], s1[..., 1, :]
    q, q2 = s2[..., 0, :], s2[..., 1, :]
    r = p2 - p
    len_r = np.hypot(r[..., 0], r[..., 1])
    safe = np.where(len_r > 0, len_r, 1)
    on_line = (np.abs(_cross(r, q - p)) / safe <= tol) & (np.abs(_cross(r, q2 - p)) / safe <= tol)
    rr = safe * safe
    t0 = np.sum((q - p) * r, axis=-1) / rr
    t1 = np.sum((q2 - p) * r, axis=-1) / rr
    overlap = (np.minimum(1.0, np.maximum(t0, t1)) - np.maximum(0.0, np.minimum(t0, t1))) * len_r
    return on_line & (overlap > tol) & (len_r > 0)


@dataclass
class WeightsMatrix:
    """Contiguity weights keyed by unit id, in ascending id order."""

    ids: list[str]
    neighbors: dict[str, list[str]]
    weights: dict[str, list[float]]
    scheme: str = "queen"
    standardized: bool = True
    islands: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.ids)

    def to_dense(self) -> np.ndarray:
        pos = {u: k for k, u in enumerate(self.ids)}
        W = np.zeros((self.n, self.n))
        for u in self.ids:
            for v, w in zip(self.neighbors[u], self.weights[u]):
                W[pos[u], pos[v]] = w
        return W

    def to_adjacency_text(self) -> str:
        return "".join(f"{u}: {' '.join(self.neighbors[u])}".rstrip() + "\n" for u in self.ids)

    @classmethod
    def from_dense(cls, W, ids=None, scheme: str = "custom") -> WeightsMatrix:
        W = np.asarray(W, dtype=float)
        ids = [str(i) for i in (ids if ids is not None else range(len(W)))]
        neighbors = {u: [ids[j] for j in np.flatnonzero(W[i])] for i, u in enumerate(ids)}
        weights = {u: [float(W[i, j]) for j in np.flatnonzero(W[i])] for i, u in enumerate(ids)}
        rows = W.sum(axis=1)
        std = bool(np.all((rows == 0) | np.isclose(rows, 1.0, atol=1e-12)))
        return cls(ids, neighbors, weights, scheme, std, [u for u in ids if not neighbors[u]])

    @classmethod
    def from_adjacency_text(cls, text: str, standardize: bool = True) -> WeightsMatrix:
        ids, neighbors = [], {}
        for line in text.splitlines():
            if not line.strip():
                continue
            head, _, rest = line.partition(":")
            ids.append(head.strip())
            neighbors[head.strip()] = rest.split()
        return _finish_weights(ids, neighbors, "custom", standardize)


def _finish_weights(ids, neighbors, scheme, standardize) -> WeightsMatrix:
    weights = {}
    for u in ids:
        k = len(neighbors[u])
        weights[u] = [1.0 / k if standardize else 1.0] * k if k else []
    islands = [u for u in ids if not neighbors[u]]
    if islands:
        warnings.warn(f"{len(islands)} island unit(s) without neighbours: {', '.join(islands)}", stacklevel=3)
    return WeightsMatrix(ids, neighbors, weights, scheme, standardize, islands)


def build_weights(districts: list[District], scheme: str = "queen", standardize: bool = True) -> WeightsMatrix:
    """First-order contiguity weights.

    ``queen`` links units whose boundaries share at least one point, ``rook``
    only those sharing an edge of positive length.
    """
    if scheme not in ("queen", "rook"):
        raise ValueError(f"unknown contiguity scheme {scheme!r}")
    if len(districts) < 2:
        raise DegenerateWeightsError("degenerate weights: fewer than 2 districts")
    units = _sorted_by_id(districts)
    ids = [d.district_id for d in units]
    segs = [np.concatenate([_segments(r) for r in d.rings]) for d in units]
    bounds = np.array([d.bounds for d in units])
    test = segments_touch if scheme == "queen" else segments_share_edge
    neighbors: dict[str, list[str]] = {u: [] for u in ids}
    for i in range(len(units)):
        x0, y0, x1, y1 = bounds[i]
        near = np.flatnonzero(
            (bounds[:, 0] <= x1 + GEOM_TOL)
            & (bounds[:, 2] >= x0 - GEOM_TOL)
            & (bounds[:, 1] <= y1 + GEOM_TOL)
            & (bounds[:, 3] >= y0 - GEOM_TOL)
        )
        for j in near[near > i]:
            a, b = segs[i], segs[j]
            hit = test(a[:, None], b[None, :])
            if scheme == "rook":
                hit = hit | test(b[None, :], a[:, None])
            if np.any(hit):
                neighbors[ids[i]].append(ids[j])
                neighbors[ids[j]].append(ids[i])
    for u in ids:
        neighbors[u].sort()
    return _finish_weights(ids, neighbors, scheme, standardize)


def near_boundary(points, rings: list[np.ndarray], tol: float) -> np.ndarray:
    """True for points within ``tol`` of any ring edge."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    out = np.zeros(len(points), dtype=bool)
    for ring in rings:
        a, b = ring[:-1], ring[1:]
        d = b - a
        dd = np.maximum((d * d).sum(axis=1), 1e-300)
        rel = points[:, None, :] - a[None, :, :]
        t = np.clip((rel * d[None]).sum(axis=2) / dd[None], 0.0, 1.0)
        gap = rel - t[..., None] * d[None]
        out |= np.any(np.hypot(gap[..., 0], gap[..., 1]) <= tol, axis=1)
    return out
