"""Synthetic city with planted homes and visits, used as ground truth for the pipeline."""

from __future__ import annotations

import configparser
import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
from scipy.spatial import Voronoi

from . import geometry
from .geometry import CATEGORIES, District, PublicSpace, centroid, near_boundary, points_in_rings
from .home import NightWindow

# keep generated points this far (degrees) from any polygon edge
EDGE_MARGIN = 1e-6


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class SynthScenario:
    seed: int = 0
    layout: str = "grid"  # grid | voronoi
    rows: int = 5
    cols: int = 6
    cell_deg: float = 0.02
    origin_lon: float = -73.15
    origin_lat: float = -36.90
    population_min: int = 500
    population_max: int = 20000
    n_users: int = 100
    n_spaces: int = 6
    space_frac: float = 0.3
    attractiveness_min: float = 0.2
    attractiveness_max: float = 0.9
    beta_per_km: float = 0.25
    night_tweets_min: int = 1
    night_tweets_max: int = 8
    day_tweets_min: int = 0
    day_tweets_max: int = 4
    visit_tweets_max: int = 3
    noise: float = 0.0
    n_bots: int = 0
    bot_tweets: int = 300
    start: str = "2016-01-01T00:00:00"
    end: str = "2016-04-01T00:00:00"
    utc_offset_minutes: int = -180

    def __post_init__(self):
        if self.layout not in ("grid", "voronoi"):
            raise ScenarioError(f"layout must be grid or voronoi, got {self.layout!r}")
        if self.rows < 1 or self.cols < 1:
            raise ScenarioError("rows and cols must be positive")
        if not 0 <= self.noise < 1:
            raise ScenarioError("noise must lie in [0, 1)")
        if not 0 <= self.attractiveness_min <= self.attractiveness_max <= 1:
            raise ScenarioError("attractiveness bounds must satisfy 0 <= min <= max <= 1")
        if self.n_spaces > self.n_districts:
            raise ScenarioError(f"infeasible geometry: {self.n_spaces} spaces for {self.n_districts} cells")
        if self.night_tweets_min < 1 or self.night_tweets_max < self.night_tweets_min:
            raise ScenarioError("need 1 <= night_tweets_min <= night_tweets_max")
        if self.day_tweets_min < 0 or self.day_tweets_max < self.day_tweets_min:
            raise ScenarioError("need 0 <= day_tweets_min <= day_tweets_max")
        if self.visit_tweets_max < 1:
            raise ScenarioError("visit_tweets_max must be at least 1")
        if not 0 < self.space_frac < 1:
            raise ScenarioError("space_frac must be in (0, 1)")
        if self.n_users < 0 or self.n_bots < 0:
            raise ScenarioError("user counts must be nonnegative")

    @property
    def n_districts(self) -> int:
        return self.rows * self.cols

    @classmethod
    def from_text(cls, text: str) -> SynthScenario:
        """Parse ``key = value`` lines (``#`` comments allowed)."""
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.optionxform = str
        parser.read_string("[scenario]\n" + text)
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in parser["scenario"].items():
            if key not in types:
                raise ScenarioError(f"unknown scenario key {key!r}")
            kind = types[key]
            try:
                kwargs[key] = int(value) if kind == "int" else float(value) if kind == "float" else value
            except ValueError:
                raise ScenarioError(f"{key}: cannot read {value!r} as {kind}") from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> SynthScenario:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def _square(cx, cy, half) -> list[np.ndarray]:
    return [np.array([[cx - half, cy - half], [cx + half, cy - half], [cx + half, cy + half],
                      [cx - half, cy + half], [cx - half, cy - half]])]


def grid_districts(rows, cols, cell, lon0, lat0, populations) -> list[District]:
    out = []
    width = len(str(rows * cols))
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            x0, y0 = lon0 + c * cell, lat0 + r * cell
            ring = np.array([[x0, y0], [x0 + cell, y0], [x0 + cell, y0 + cell], [x0, y0 + cell], [x0, y0]])
            out.append(District(parts=[[ring]], district_id=f"D{k + 1:0{width}d}", name=f"District {k + 1}",
                                population=float(populations[k])))
    return out


def voronoi_cells(points, bbox) -> list[np.ndarray]:
    """Voronoi cells of ``points`` clipped to ``bbox`` as closed CCW rings.

    Points are mirrored across the four box sides so every original cell is
    bounded by the box; neighbouring cells share vertex coordinates exactly.
    """
    pts = np.asarray(points, dtype=float)
    x0, y0, x1, y1 = bbox
    mirrored = [
        pts,
        np.column_stack([2 * x0 - pts[:, 0], pts[:, 1]]),
        np.column_stack([2 * x1 - pts[:, 0], pts[:, 1]]),
        np.column_stack([pts[:, 0], 2 * y0 - pts[:, 1]]),
        np.column_stack([pts[:, 0], 2 * y1 - pts[:, 1]]),
    ]
    vor = Voronoi(np.vstack(mirrored))
    rings = []
    for i in range(len(pts)):
        region = vor.regions[vor.point_region[i]]
        verts = vor.vertices[region]
        center = verts.mean(axis=0)
        order = np.argsort(np.arctan2(verts[:, 1] - center[1], verts[:, 0] - center[0]))
        verts = verts[order]
        rings.append(np.vstack([verts, verts[:1]]))
    return rings


def voronoi_districts(n, seed, bbox, populations=None) -> list[District]:
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = bbox
    pts = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
    pops = populations if populations is not None else rng.integers(100, 10000, n)
    width = len(str(n))
    return [
        District(parts=[[ring]], district_id=f"D{k + 1:0{width}d}", name=f"District {k + 1}", population=float(pops[k]))
        for k, ring in enumerate(voronoi_cells(pts, bbox))
    ]


@dataclass
class SynthCorpus:
    scenario: SynthScenario
    districts: list[District]
    spaces: list[PublicSpace]
    lines: list[str]
    homes: dict[str, str]
    visits: set[tuple[str, str]]
    night_lines: set[str]
    day_lines: set[str]

    def truth_od(self) -> dict[tuple[str, str], int]:
        out = {(d.district_id, s.space_id): 0 for d in self.districts for s in self.spaces}
        for u, s in self.visits:
            out[(self.homes[u], s)] += 1
        return out

    def write(self, outdir) -> dict[str, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {
            "districts": outdir / "districts.geojson",
            "spaces": outdir / "spaces.geojson",
            "records": outdir / "records.ndjson",
            "truth_homes": outdir / "truth_homes.csv",
            "truth_visits": outdir / "truth_visits.csv",
            "scenario": outdir / "scenario.txt",
        }
        paths["districts"].write_text(json.dumps(geometry.districts_to_geojson(self.districts)) + "\n", encoding="utf-8")
        paths["spaces"].write_text(json.dumps(geometry.spaces_to_geojson(self.spaces)) + "\n", encoding="utf-8")
        with paths["records"].open("w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(line + "\n" for line in self.lines)
        with paths["truth_homes"].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user_id", "home_district"])
            w.writerows(sorted(self.homes.items()))
        with paths["truth_visits"].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user_id", "space_id"])
            w.writerows(sorted(self.visits))
        paths["scenario"].write_text(self.scenario.to_text(), encoding="utf-8")
        return paths


class _Sampler:
    def __init__(self, scenario: SynthScenario, rng: np.random.Generator):
        self.sc = scenario
        self.rng = rng
        self.start = datetime.fromisoformat(scenario.start)
        self.end = datetime.fromisoformat(scenario.end)
        self.window = NightWindow()
        span_days = (self.end - self.start).days
        # nights that start on an anchor weekday and finish before the study end
        self.night_starts = [
            self.start + timedelta(days=k) for k in range(span_days - 1)
            if (self.start + timedelta(days=k)).weekday() in self.window.anchor_weekdays
        ]
        if not self.night_starts:
            raise ScenarioError("study window contains no full weekday night")
        self.span_s = int((self.end - self.start).total_seconds())
        self._pools: dict = {}

    def night_times(self, k) -> list[datetime]:
        days = self.rng.integers(0, len(self.night_starts), k)
        secs = self.rng.integers(0, 10 * 3600, k)
        return [self.night_starts[d].replace(hour=22) + timedelta(seconds=int(s)) for d, s in zip(days, secs)]

    def day_times(self, k) -> list[datetime]:
        out: list[datetime] = []
        while len(out) < k:
            secs = self.rng.integers(0, self.span_s, 2 * (k - len(out)) + 4)
            for s in secs:
                t = self.start + timedelta(seconds=int(s))
                if not self.window.contains(t):
                    out.append(t)
                    if len(out) == k:
                        break
        return out

    def points_in(self, shape, k, exclude=()) -> np.ndarray:
        """``k`` points inside ``shape`` away from its edges and outside ``exclude``.

        Points come from a per-shape buffer refilled in batches, so the draw order
        (and the corpus) stays a pure function of the seed.
        """
        key = (id(shape), tuple(id(e) for e in exclude))
        pool = self._pools.get(key, np.zeros((0, 2)))
        while len(pool) < k:
            pool = np.vstack([pool, self._draw(shape, exclude, max(256, 2 * k))])
        self._pools[key] = pool[k:]
        return pool[:k]

    def _draw(self, shape, exclude, m) -> np.ndarray:
        x0, y0, x1, y1 = shape.bounds
        cand = np.column_stack([self.rng.uniform(x0, x1, m), self.rng.uniform(y0, y1, m)])
        ok = points_in_rings(cand, shape.rings) & ~near_boundary(cand, shape.rings, EDGE_MARGIN)
        for ex in exclude:
            ok &= ~points_in_rings(cand, ex.rings) & ~near_boundary(cand, ex.rings, EDGE_MARGIN)
        return cand[ok]


def _space_shapes(sc: SynthScenario, districts, rng) -> list[PublicSpace]:
    cells = sorted(rng.choice(len(districts), size=sc.n_spaces, replace=False))
    width = len(str(max(sc.n_spaces, 1)))
    out = []
    for k, cell in enumerate(cells):
        d = districts[cell]
        cx, cy = centroid(d)
        if sc.layout == "grid":
            half = sc.space_frac * sc.cell_deg / 2
        else:
            ring = d.parts[0][0][:-1]
            half = sc.space_frac * float(np.min(np.abs(ring - [cx, cy]).max(axis=1))) / 2
            if not points_in_rings(np.array(_square(cx, cy, half)[0][:-1]), d.rings).all():
                half /= 4
        cat = CATEGORIES[k % len(CATEGORIES)]
        out.append(PublicSpace(parts=[_square(cx, cy, half)], space_id=f"S{k + 1:0{width}d}",
                               name=f"{cat} {k + 1}", category=cat))
    return out


def generate(scenario: SynthScenario) -> SynthCorpus:
    """Build districts, spaces, an NDJSON corpus and the planted truth tables.

    Every user gets at least one night tweet; without noise all of them fall in
    the planted home district. Day tweets at home avoid every public space, and
    each planted visit emits tweets inside the space during the visit window.
    """
    sc = scenario
    rng = np.random.default_rng(sc.seed)
    pops = rng.integers(sc.population_min, sc.population_max + 1, sc.n_districts)
    if sc.layout == "grid":
        districts = grid_districts(sc.rows, sc.cols, sc.cell_deg, sc.origin_lon, sc.origin_lat, pops)
    else:
        bbox = (sc.origin_lon, sc.origin_lat, sc.origin_lon + sc.cols * sc.cell_deg, sc.origin_lat + sc.rows * sc.cell_deg)
        districts = voronoi_districts(sc.n_districts, int(rng.integers(2**31)), bbox, pops)
    spaces = _space_shapes(sc, districts, rng)
    sampler = _Sampler(sc, rng)

    lat0 = geometry.reference_latitude(districts)
    d_xy = geometry.project(np.array([centroid(d) for d in districts]), lat0)
    s_xy = geometry.project(np.array([centroid(s) for s in spaces]).reshape(-1, 2), lat0)
    dist_km = np.hypot(d_xy[:, None, 0] - s_xy[None, :, 0], d_xy[:, None, 1] - s_xy[None, :, 1]) / 1000.0
    attract = rng.uniform(sc.attractiveness_min, sc.attractiveness_max, len(spaces))
    p_visit = np.clip(attract[None, :] * np.exp(-sc.beta_per_km * dist_km), 0.0, 1.0)

    home_idx = rng.choice(len(districts), size=sc.n_users, p=pops / pops.sum())
    uid_width = len(str(max(sc.n_users, 1)))
    events: list[tuple[datetime, str, float, float, str]] = []  # (local, user, lon, lat, kind)
    homes: dict[str, str] = {}
    visits: set[tuple[str, str]] = set()

    for u in range(sc.n_users):
        uid = f"U{u + 1:0{uid_width}d}"
        h = int(home_idx[u])
        homes[uid] = districts[h].district_id
        n_night = int(rng.integers(sc.night_tweets_min, sc.night_tweets_max + 1))
        noisy = rng.random(n_night) < sc.noise
        night_pts = np.zeros((n_night, 2))
        if (~noisy).any():
            night_pts[~noisy] = sampler.points_in(districts[h], int((~noisy).sum()))
        for k in np.flatnonzero(noisy):
            other = int(rng.integers(len(districts) - 1)) if len(districts) > 1 else 0
            other = other + 1 if other >= h and len(districts) > 1 else other
            night_pts[k] = sampler.points_in(districts[other], 1)[0]
        for t, (x, y) in zip(sampler.night_times(n_night), night_pts):
            events.append((t, uid, x, y, "night"))

        n_day = int(rng.integers(sc.day_tweets_min, sc.day_tweets_max + 1))
        if n_day:
            pts = sampler.points_in(districts[h], n_day, exclude=spaces)
            for t, (x, y) in zip(sampler.day_times(n_day), pts):
                events.append((t, uid, x, y, "day"))

        for s in np.flatnonzero(rng.random(len(spaces)) < p_visit[h]):
            visits.add((uid, spaces[s].space_id))
            n_v = int(rng.integers(1, sc.visit_tweets_max + 1))
            pts = sampler.points_in(spaces[s], n_v)
            for t, (x, y) in zip(sampler.day_times(n_v), pts):
                events.append((t, uid, x, y, "visit"))

    bot_width = len(str(max(sc.n_bots, 1)))
    for b in range(sc.n_bots):
        bid = f"B{b + 1:0{bot_width}d}"
        pts = sampler.points_in(districts[int(rng.integers(len(districts)))], sc.bot_tweets, exclude=spaces)
        for t, (x, y) in zip(sampler.day_times(sc.bot_tweets), pts):
            events.append((t, bid, x, y, "bot"))

    events.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
    offset = timedelta(minutes=sc.utc_offset_minutes)
    lines, night_lines, day_lines = [], set(), set()
    rec_width = len(str(max(len(events), 1)))
    for k, (t, uid, x, y, kind) in enumerate(events):
        utc = t - offset
        rid = f"T{k + 1:0{rec_width}d}"
        text = "Alerta: emergencia en curso" if kind == "bot" else f"post {rid}"
        line = json.dumps({"id": rid, "user": uid, "created_at": utc.strftime("%Y-%m-%dT%H:%M:%SZ"),
                           "lon": float(x), "lat": float(y), "text": text}, ensure_ascii=False)
        lines.append(line)
        if kind == "night":
            night_lines.add(line)
        elif kind in ("day", "visit"):
            day_lines.add(line)
    return SynthCorpus(sc, districts, spaces, lines, homes, visits, night_lines, day_lines)


def expected_visit_probability(scenario: SynthScenario, distance_km: float, attractiveness: float) -> float:
    return min(1.0, attractiveness * math.exp(-scenario.beta_per_km * distance_km))
