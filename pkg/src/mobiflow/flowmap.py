"""Basin-merged flow trees from district centroids to one destination."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import project


class WidthScaleError(ValueError):
    pass


@dataclass(frozen=True)
class WidthScale:
    """Stroke width per unit of flow, shared by every map of a series."""

    k: float

    def __post_init__(self):
        if not (isinstance(self.k, (int, float)) and math.isfinite(self.k) and self.k > 0):
            raise WidthScaleError(f"width scale k must be a positive number, got {self.k!r}")

    def width(self, weight) -> float:
        return self.k * weight


@dataclass
class FlowTree:
    """Nodes are indexed with the destination at 0 and origins from 1 on.

    ``parent[v]`` is -1 for the destination; ``edge_weight[v]`` is the flow on the
    edge from ``v`` to its parent.
    """

    destination_id: str
    node_ids: list[str]
    points: list[tuple[float, float]]
    own_weight: list = field(default_factory=list)
    parent: list[int] = field(default_factory=list)
    edge_weight: list = field(default_factory=list)
    distance: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.node_ids)

    @property
    def edges(self) -> list[int]:
        """Child node index of every edge."""
        return list(range(1, len(self.node_ids)))

    def children(self, v: int) -> list[int]:
        return [c for c, p in enumerate(self.parent) if p == v]

    def path_to_root(self, v: int) -> list[int]:
        out = [v]
        while self.parent[out[-1]] >= 0:
            out.append(self.parent[out[-1]])
        return out


def _angle_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle between row vectors ``a`` and a single vector ``b``."""
    na = np.hypot(a[:, 0], a[:, 1])
    nb = math.hypot(b[0], b[1])
    den = na * nb
    cos = np.divide(a @ b, den, out=np.ones(len(a)), where=den > 0)
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def build_flow_tree(dest, origins, merge_angle_max: float = 45.0, lat0: float | None = None,
                    destination_id: str = "destination") -> FlowTree:
    """Greedy basin merge toward ``dest``.

    ``origins`` holds ``(district_id, (lon, lat), weight)``; zero-weight origins
    are dropped. Each origin links to the nearest node that is strictly closer to
    the destination and lies within ``merge_angle_max`` degrees of its bearing to
    the destination, otherwise straight to the destination. Weights then
    accumulate from the leaves to the root.
    """
    if not 0 <= merge_angle_max <= 180:
        raise ValueError("merge_angle_max must be within [0, 180] degrees")
    kept = []
    for oid, pt, w in origins:
        if w < 0:
            raise ValueError(f"negative weight for origin {oid}")
        if w > 0:
            kept.append((str(oid), (float(pt[0]), float(pt[1])), w))
    dest = (float(dest[0]), float(dest[1]))
    if lat0 is None:
        lat0 = float(np.mean([dest[1]] + [p[1] for _, p, _ in kept]))
    xy_dest = project(np.array(dest), lat0)
    xy = project(np.array([p for _, p, _ in kept], dtype=float).reshape(-1, 2), lat0)
    dist = np.hypot(*(xy - xy_dest).T) if len(kept) else np.zeros(0)

    # farthest first; ties by district id
    order = sorted(range(len(kept)), key=lambda i: (-dist[i], kept[i][0]))
    ids = [destination_id] + [kept[i][0] for i in order]
    pts = [dest] + [kept[i][1] for i in order]
    own = [0] + [kept[i][2] for i in order]
    d = np.concatenate([[0.0], dist[order]])
    P = np.vstack([xy_dest[None, :], xy[order]]) if len(kept) else xy_dest[None, :]

    parent = [-1] * len(ids)
    for v in range(1, len(ids)):
        closer = np.flatnonzero(d < d[v])
        to_dest = P[0] - P[v]
        rel = P[closer] - P[v]
        ok = closer[_angle_deg(rel, to_dest) <= merge_angle_max]
        ok = np.union1d(ok, [0]).astype(int)
        sep = np.hypot(*(P[ok] - P[v]).T)
        parent[v] = int(min(zip(sep, [i == 0 for i in ok], [ids[i] for i in ok], ok))[3])

    edge = _accumulate(own, parent, d)
    return FlowTree(destination_id, ids, pts, own, parent, edge, d.tolist())


def _accumulate(own, parent, dist):
    # children are strictly farther than their parent, so farthest-first is leaf-to-root;
    # the root entry ends up holding the total inflow
    edge = list(own)
    for v in sorted(range(1, len(own)), key=lambda i: -dist[i]):
        edge[parent[v]] = edge[parent[v]] + edge[v]
    return edge


def assign_widths(tree: FlowTree, scale: WidthScale) -> dict[str, float]:
    """``district_id -> stroke width`` for the edge leaving each origin."""
    if not isinstance(scale, WidthScale):
        scale = WidthScale(scale)
    return {tree.node_ids[v]: scale.width(tree.edge_weight[v]) for v in tree.edges}


def generalize_polyline(tree: FlowTree) -> list[list[tuple[float, float]]]:
    """One straight segment per parent link, endpoints copied from the node points."""
    return [[tree.points[v], tree.points[tree.parent[v]]] for v in tree.edges]


def leaf_paths(tree: FlowTree) -> list[list[tuple[float, float]]]:
    """Polyline from each leaf to the destination through its junctions."""
    has_child = {p for p in tree.parent if p >= 0}
    return [[tree.points[u] for u in tree.path_to_root(v)] for v in tree.edges if v not in has_child]


def tree_to_geojson(tree: FlowTree, scale: WidthScale, properties: dict | None = None) -> dict:
    segments = generalize_polyline(tree)
    features = []
    for v, seg in zip(tree.edges, segments):
        props = {
            "from_district": tree.node_ids[v],
            "to": tree.node_ids[tree.parent[v]],
            "accumulated_weight": tree.edge_weight[v],
            "width": scale.width(tree.edge_weight[v]),
        }
        props.update(properties or {})
        features.append({"type": "Feature", "properties": props,
                         "geometry": {"type": "LineString", "coordinates": [list(p) for p in seg]}})
    return {"type": "FeatureCollection", "features": features}


def trees_from_matrix(matrix, anchors: dict[str, tuple[float, float]], centroids: dict[str, tuple[float, float]],
                      merge_angle_max: float = 45.0, lat0: float | None = None) -> dict[str, FlowTree]:
    """One tree per destination column of a flow matrix."""
    trees = {}
    for s in matrix.space_ids:
        col = matrix.column(s)
        origins = [(d, centroids[d], col[d]) for d in sorted(col) if d in centroids]
        trees[s] = build_flow_tree(anchors[s], origins, merge_angle_max, lat0, destination_id=s)
    return trees
