"""Public-space visit detection and district-to-space flow matrices."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .geometry import shape_membership
from .home import NightWindow, record_epochs, record_points


@dataclass(frozen=True, order=True)
class VisitEvent:
    user_id: str
    space_id: str
    first_visit_instant: datetime


def detect_visits(records, spaces, window: NightWindow = NightWindow(), utc_offset_minutes: int = -180):
    """One visit per (user, space) for records inside the space outside the night window."""
    records = list(records)
    if not records or not spaces:
        return []
    pts = record_points(records)
    epochs = record_epochs(records)
    day = ~window.mask(epochs, utc_offset_minutes)
    cand = np.flatnonzero(day)
    first: dict[tuple[str, str], datetime] = {}
    for space in spaces:
        hits = cand[shape_membership(pts[cand], space)]
        for k in hits:
            r = records[k]
            key = (r.user_id, space.space_id)
            if key not in first or r.timestamp_utc < first[key]:
                first[key] = r.timestamp_utc
    return sorted(VisitEvent(u, s, t) for (u, s), t in first.items())


@dataclass
class FlowMatrix:
    kind: str
    district_ids: list[str]
    space_ids: list[str]
    entries: dict[tuple[str, str], float]
    district_user_counts: dict[str, int] = field(default_factory=dict)

    def value(self, district_id: str, space_id: str):
        return self.entries.get((district_id, space_id))

    def column(self, space_id: str) -> dict[str, float]:
        return {d: v for (d, s), v in self.entries.items() if s == space_id}

    def rows(self):
        for d in self.district_ids:
            for s in self.space_ids:
                if (d, s) in self.entries:
                    v = self.entries[(d, s)]
                    yield {"district_id": d, "space_id": s, "value": v if self.kind == "raw" else repr(float(v))}

    def marginals(self):
        for s in self.space_ids:
            col = self.column(s)
            yield {
                "space_id": s,
                "total": sum(col.values()) if self.kind == "raw" else repr(float(sum(col.values()))),
                "districts_reached": sum(1 for v in col.values() if v > 0),
            }

    def write(self, path, marginals_path=None) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["district_id", "space_id", "value"], lineterminator="\n")
            writer.writeheader()
            writer.writerows(self.rows())
        if marginals_path is not None:
            with Path(marginals_path).open("w", newline="", encoding="utf-8") as fh:
                writer = csv.DictWriter(fh, fieldnames=["space_id", "total", "districts_reached"], lineterminator="\n")
                writer.writeheader()
                writer.writerows(self.marginals())


def read_flow_matrix(path, kind: str) -> FlowMatrix:
    entries, dids, sids = {}, [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            d, s = row["district_id"], row["space_id"]
            entries[(d, s)] = int(row["value"]) if kind == "raw" else float(row["value"])
            if d not in dids:
                dids.append(d)
            if s not in sids:
                sids.append(s)
    return FlowMatrix(kind, dids, sids, entries)


def build_od(visits, homes: dict[str, str], district_ids=None, space_ids=None, users=None) -> FlowMatrix:
    """Distinct-user counts from home district to visited space.

    Users without a resolved home are skipped. ``users`` optionally restricts the
    population (numerator and denominator alike).
    """
    if users is not None:
        users = set(users)
        homes = {u: d for u, d in homes.items() if u in users}
    visits = list(visits)
    district_ids = sorted(district_ids if district_ids is not None else set(homes.values()))
    space_ids = sorted(space_ids if space_ids is not None else {v.space_id for v in visits})
    entries = {(d, s): 0 for d in district_ids for s in space_ids}
    seen = set()
    for v in visits:
        d = homes.get(v.user_id)
        if d is None or (v.user_id, v.space_id) in seen:
            continue
        seen.add((v.user_id, v.space_id))
        key = (d, v.space_id)
        if key in entries:
            entries[key] += 1
    counts = dict.fromkeys(district_ids, 0)
    for d in homes.values():
        if d in counts:
            counts[d] += 1
    return FlowMatrix("raw", district_ids, space_ids, entries, counts)


def normalize_od(raw: FlowMatrix, denominators: dict[str, int] | None = None) -> FlowMatrix:
    """Share of each district's users reaching each space; zero-user districts are left out."""
    denominators = dict(raw.district_user_counts if denominators is None else denominators)
    entries = {}
    for (d, s), v in raw.entries.items():
        den = denominators.get(d, 0)
        if den > 0:
            entries[(d, s)] = v / den
    kept = [d for d in raw.district_ids if denominators.get(d, 0) > 0]
    return FlowMatrix("normalized", kept, list(raw.space_ids), entries, denominators)


class FlowBuilder(BaseEstimator):
    """Visits, raw and normalized flow matrices in one fit.

    ``fit(records, homes)`` takes cleaned records and a ``user_id -> district_id``
    mapping of resolved homes. ``denominator="moved"`` normalizes over users that
    tweeted more than once from different locations instead of all resolved users.
    """

    def __init__(self, spaces=None, district_ids=None, utc_offset_minutes=-180, night_start=22, night_end=8,
                 anchor_weekdays=(0, 1, 2, 3), denominator="resolved"):
        self.spaces = spaces
        self.district_ids = district_ids
        self.utc_offset_minutes = utc_offset_minutes
        self.night_start = night_start
        self.night_end = night_end
        self.anchor_weekdays = anchor_weekdays
        self.denominator = denominator

    def fit(self, records, homes):
        if self.denominator not in ("resolved", "moved"):
            raise ValueError(f"unknown denominator {self.denominator!r}")
        records = list(records)
        window = NightWindow(self.night_start, self.night_end, frozenset(self.anchor_weekdays))
        space_ids = [s.space_id for s in self.spaces or []]
        self.visits_ = detect_visits(records, self.spaces or [], window, self.utc_offset_minutes)
        self.raw_ = build_od(self.visits_, homes, self.district_ids, space_ids)
        if self.denominator == "moved":
            movers = moved_users(records)
            self.normalized_ = normalize_od(build_od(self.visits_, homes, self.district_ids, space_ids, movers))
        else:
            self.normalized_ = normalize_od(self.raw_)
        return self


def moved_users(records) -> set[str]:
    locations: dict[str, set] = {}
    counts: dict[str, int] = {}
    for r in records:
        locations.setdefault(r.user_id, set()).add((r.lon, r.lat))
        counts[r.user_id] = counts.get(r.user_id, 0) + 1
    return {u for u, locs in locations.items() if counts[u] > 1 and len(locs) >= 2}


def write_visits(visits, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "space_id", "first_visit_instant"])
        for v in visits:
            writer.writerow([v.user_id, v.space_id, v.first_visit_instant.astimezone(timezone.utc).isoformat()])
