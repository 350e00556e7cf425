"""Home-district inference from night-time weekday activity."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .geometry import DistrictIndex
from .validation import check_hour, check_weekdays

SECONDS_PER_DAY = 86400


@dataclass(frozen=True)
class NightWindow:
    """Local-time night window anchored to the weekday on which the night begins.

    With the defaults a night runs from 22:00 to 07:59 and only nights starting
    Monday to Thursday count, so Tuesday 03:00 belongs to Monday night and
    Friday 03:00 to Thursday night.
    """

    start_hour: int = 22
    end_hour: int = 8
    anchor_weekdays: frozenset = frozenset({0, 1, 2, 3})

    def __post_init__(self):
        check_hour(self.start_hour, "start_hour")
        check_hour(self.end_hour, "end_hour")
        if not self.end_hour <= self.start_hour:
            raise ValueError("night window must wrap midnight (end_hour <= start_hour)")
        object.__setattr__(self, "anchor_weekdays", check_weekdays(self.anchor_weekdays))

    def contains(self, local: datetime) -> bool:
        wd, h = local.weekday(), local.hour
        if h >= self.start_hour:
            return wd in self.anchor_weekdays
        if h < self.end_hour:
            return (wd - 1) % 7 in self.anchor_weekdays
        return False

    def mask(self, epoch_seconds, utc_offset_minutes: int) -> np.ndarray:
        """Vectorized :meth:`contains` over UTC epoch seconds."""
        local = np.asarray(epoch_seconds, dtype=np.int64) + utc_offset_minutes * 60
        days = np.floor_divide(local, SECONDS_PER_DAY)
        hour = np.floor_divide(local - days * SECONDS_PER_DAY, 3600)
        weekday = (days + 3) % 7  # 1970-01-01 was a Thursday
        anchors = np.array(sorted(self.anchor_weekdays))
        late = (hour >= self.start_hour) & np.isin(weekday, anchors)
        early = (hour < self.end_hour) & np.isin((weekday - 1) % 7, anchors)
        return late | early


def is_night_tweet(record, window: NightWindow = NightWindow(), utc_offset_minutes: int = -180) -> bool:
    return window.contains(record.local_time(utc_offset_minutes))


def record_epochs(records) -> np.ndarray:
    return np.array([int(r.timestamp_utc.timestamp()) for r in records], dtype=np.int64)


def record_points(records) -> np.ndarray:
    return np.array([(r.lon, r.lat) for r in records], dtype=float).reshape(-1, 2)


@dataclass
class UserProfile:
    user_id: str
    total_tweets: int
    night_counts: dict[str, int] = field(default_factory=dict)
    home_district: str | None = None
    distinct_locations: int = 0

    @property
    def night_tweets(self) -> int:
        return sum(self.night_counts.values())

    @property
    def resolved(self) -> bool:
        return self.home_district is not None


def _profiles(records, index: DistrictIndex, window: NightWindow, utc_offset_minutes: int) -> dict[str, UserProfile]:
    if not records:
        return {}
    users, inv = np.unique([r.user_id for r in records], return_inverse=True)
    pts = record_points(records)
    dist = index.assign(pts)
    night = window.mask(record_epochs(records), utc_offset_minutes)
    n_users, n_dist = len(users), len(index.ids)

    total = np.bincount(inv, minlength=n_users)
    placed = dist >= 0
    key = inv[placed] * n_dist + dist[placed]
    all_counts = np.bincount(key, minlength=n_users * n_dist).reshape(n_users, n_dist)
    nkey = inv[placed & night] * n_dist + dist[placed & night]
    night_counts = np.bincount(nkey, minlength=n_users * n_dist).reshape(n_users, n_dist)

    # argmax on night count, then all-hours count, then smallest id (first column)
    score = night_counts.astype(np.int64) * (int(all_counts.max(initial=0)) + 1) + all_counts
    best = np.argmax(score, axis=1) if n_dist else np.zeros(n_users, dtype=np.int64)
    has_night = night_counts.sum(axis=1) > 0

    order = np.lexsort((pts[:, 1], pts[:, 0], inv))
    ou, ox, oy = inv[order], pts[order, 0], pts[order, 1]
    new = np.ones(len(order), dtype=bool)
    new[1:] = (ou[1:] != ou[:-1]) | (ox[1:] != ox[:-1]) | (oy[1:] != oy[:-1])
    distinct = np.bincount(ou[new], minlength=n_users)

    out = {}
    for u, uid in enumerate(users):
        row = night_counts[u]
        nz = np.flatnonzero(row)
        out[str(uid)] = UserProfile(
            user_id=str(uid),
            total_tweets=int(total[u]),
            night_counts={index.ids[j]: int(row[j]) for j in nz},
            home_district=index.ids[best[u]] if has_night[u] else None,
            distinct_locations=int(distinct[u]),
        )
    return out


def infer_home(records, districts, window: NightWindow = NightWindow(), utc_offset_minutes: int = -180) -> str | None:
    """Home district of a single user's records, or ``None`` when unresolved."""
    profiles = _profiles(list(records), DistrictIndex(districts), window, utc_offset_minutes)
    if not profiles:
        return None
    if len(profiles) > 1:
        raise ValueError("infer_home expects the records of a single user")
    return next(iter(profiles.values())).home_district


class HomeLocator(BaseEstimator):
    """Assign each user the district where they tweeted most on weekday nights.

    Parameters
    ----------
    districts : list of District
        Candidate home units.
    utc_offset_minutes : int
        Local time is UTC plus this offset.
    night_start, night_end : int
        Local hours bounding the night window (end exclusive, next day).
    anchor_weekdays : tuple of int
        Weekdays (Monday=0) on which a counted night may begin.

    Attributes
    ----------
    profiles_ : dict
        ``user_id -> UserProfile``.
    homes_ : dict
        ``user_id -> district_id`` for resolved users only.
    """

    def __init__(self, districts=None, utc_offset_minutes=-180, night_start=22, night_end=8,
                 anchor_weekdays=(0, 1, 2, 3)):
        self.districts = districts
        self.utc_offset_minutes = utc_offset_minutes
        self.night_start = night_start
        self.night_end = night_end
        self.anchor_weekdays = anchor_weekdays

    @property
    def window(self) -> NightWindow:
        return NightWindow(self.night_start, self.night_end, frozenset(self.anchor_weekdays))

    def fit(self, records, y=None):
        if self.districts is None:
            raise ValueError("HomeLocator needs a district layer")
        self.index_ = DistrictIndex(self.districts)
        self.profiles_ = _profiles(list(records), self.index_, self.window, self.utc_offset_minutes)
        self.homes_ = {u: p.home_district for u, p in self.profiles_.items() if p.resolved}
        return self

    def predict(self, user_ids) -> list[str | None]:
        check_is_fitted(self, "profiles_")
        return [self.homes_.get(u) for u in user_ids]

    def resolved_counts(self) -> dict[str, int]:
        """Number of resolved-home users per district (every district listed)."""
        check_is_fitted(self, "profiles_")
        counts = dict.fromkeys(self.index_.ids, 0)
        for d in self.homes_.values():
            counts[d] += 1
        return counts


def write_homes(profiles: dict[str, UserProfile], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "home_district", "night_tweets", "resolved_flag"])
        for uid in sorted(profiles):
            p = profiles[uid]
            writer.writerow([uid, p.home_district or "", p.night_tweets, int(p.resolved)])


def read_homes(path) -> dict[str, str]:
    """``user_id -> home_district`` for resolved rows of a homes CSV."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return {row["user_id"]: row["home_district"] for row in csv.DictReader(fh) if row["resolved_flag"] == "1"}
