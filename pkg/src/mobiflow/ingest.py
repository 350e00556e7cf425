"""Parsing, deduplication, bot filtering and the per-zone summary table."""

from __future__ import annotations

import csv
import json
import math
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from . import geometry

REQUIRED_FIELDS = ("id", "user", "created_at", "lon", "lat", "text")


class ParseError(ValueError):
    """A record that cannot be turned into a :class:`TweetRecord`.

    ``field`` names the offending input field (or ``"record"``).
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class TweetRecord:
    record_id: str
    user_id: str
    timestamp_utc: datetime
    lon: float
    lat: float
    text: str
    line: str = field(default="", compare=False, repr=False)

    def local_time(self, utc_offset_minutes: int) -> datetime:
        return (self.timestamp_utc + timedelta(minutes=utc_offset_minutes)).replace(tzinfo=None)

    @property
    def epoch(self) -> float:
        return self.timestamp_utc.timestamp()


@dataclass(frozen=True)
class CleaningConfig:
    study_start: datetime | None = None
    study_end: datetime | None = None
    utc_offset_minutes: int = -180
    bot_threshold: int = 250
    allow: frozenset = frozenset()
    deny: frozenset = frozenset()

    def __post_init__(self):
        if self.study_start and self.study_end and not self.study_start < self.study_end:
            raise ValueError("study_start must precede study_end")
        if self.bot_threshold <= 0:
            raise ValueError("bot_threshold must be positive")

    def in_window(self, ts: datetime) -> bool:
        if self.study_start is not None and ts < self.study_start:
            return False
        if self.study_end is not None and ts >= self.study_end:
            return False
        return True


def local_instant(text: str, utc_offset_minutes: int) -> datetime:
    """Parse an ISO instant; naive values are read as local time at the given offset."""
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone(timedelta(minutes=utc_offset_minutes)))
    return dt.astimezone(timezone.utc)


def _parse_timestamp(value) -> datetime:
    if not isinstance(value, str) or not value:
        raise ParseError("created_at", "missing or not a string")
    try:
        dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError:
        try:
            dt = datetime.strptime(value, "%a %b %d %H:%M:%S %z %Y")
        except ValueError:
            raise ParseError("created_at", f"unparseable timestamp {value!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def _coordinate(obj, name, lo, hi) -> float:
    value = obj.get(name)
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ParseError(name, "missing or not a number")
    try:
        value = float(value)
    except ValueError:
        raise ParseError(name, f"not a number: {value!r}") from None
    if not math.isfinite(value) or not lo <= value <= hi:
        raise ParseError(name, f"out of range [{lo}, {hi}]: {value}")
    return value


def parse_record(line: str, config: CleaningConfig | None = None) -> TweetRecord:
    """Parse one NDJSON line into a validated record.

    With a ``config`` the timestamp must also fall inside its study window.
    """
    stripped = line.strip()
    if not stripped:
        raise ParseError("record", "empty record")
    try:
        obj = json.loads(stripped)
    except json.JSONDecodeError as exc:
        raise ParseError("record", f"invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise ParseError("record", "not a JSON object")
    for name in ("id", "user", "text"):
        if obj.get(name) is None:
            raise ParseError(name, "missing field")
    if not isinstance(obj["text"], str):
        raise ParseError("text", "not a string")
    ts = _parse_timestamp(obj.get("created_at"))
    if config is not None and not config.in_window(ts):
        raise ParseError("created_at", f"outside study window: {obj['created_at']}")
    lon = _coordinate(obj, "lon", -180.0, 180.0)
    lat = _coordinate(obj, "lat", -90.0, 90.0)
    return TweetRecord(str(obj["id"]), str(obj["user"]), ts, lon, lat, obj["text"], stripped)


def read_records(path, config: CleaningConfig | None = None):
    """Read an NDJSON file. Returns ``(records, errors)`` with errors as ``(lineno, ParseError)``."""
    records, errors = [], []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_record(line, config))
            except ParseError as exc:
                errors.append((lineno, exc))
    return records, errors


def write_records(records, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write((r.line or record_to_json(r)) + "\n")


def record_to_json(r: TweetRecord) -> str:
    ts = r.timestamp_utc.strftime("%Y-%m-%dT%H:%M:%SZ")
    return json.dumps(
        {"id": r.record_id, "user": r.user_id, "created_at": ts, "lon": r.lon, "lat": r.lat, "text": r.text},
        ensure_ascii=False,
    )


def dedup_repeated(records):
    """Drop repeats of identical (text, lon, lat); the earliest record survives.

    Records are stably sorted by timestamp first. Returns ``(kept, removed_count)``.
    """
    ordered = sorted(records, key=lambda r: r.timestamp_utc)
    seen = set()
    kept = []
    for r in ordered:
        key = (r.text, r.lon, r.lat)
        if key in seen:
            continue
        seen.add(key)
        kept.append(r)
    return kept, len(ordered) - len(kept)


@dataclass
class BotReport:
    counts: dict[str, int]
    auto_flagged: list[str]
    removed: list[str]
    unknown_overrides: list[str] = field(default_factory=list)

    def rows(self):
        flagged, removed = set(self.auto_flagged), set(self.removed)
        users = sorted(flagged | removed, key=lambda u: (-self.counts.get(u, 0), u))
        for u in users:
            yield {
                "user_id": u,
                "tweet_count": self.counts.get(u, 0),
                "auto_flagged": int(u in flagged),
                "removed": int(u in removed),
            }


def flag_bots(records, config: CleaningConfig) -> BotReport:
    """Flag accounts with strictly more than ``bot_threshold`` records, then apply
    the allow/deny overrides."""
    counts = Counter(r.user_id for r in records)
    auto = sorted(u for u, c in counts.items() if c > config.bot_threshold)
    removed = (set(auto) - set(config.allow)) | set(config.deny)
    unknown = sorted((set(config.allow) | set(config.deny)) - set(counts))
    if unknown:
        warnings.warn(f"bot overrides reference unknown users: {', '.join(unknown)}", stacklevel=2)
    return BotReport(dict(counts), auto, sorted(removed), unknown)


def load_overrides(path) -> tuple[frozenset, frozenset]:
    """Read a ``user_id,decision`` CSV where decision is ``allow`` or ``deny``."""
    allow, deny = set(), set()
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            decision = (row.get("decision") or "").strip().lower()
            if decision == "allow":
                allow.add(row["user_id"].strip())
            elif decision == "deny":
                deny.add(row["user_id"].strip())
            else:
                raise ValueError(f"unknown override decision {decision!r} for {row.get('user_id')}")
    return frozenset(allow), frozenset(deny)


def clean(records, config: CleaningConfig):
    """Dedup then bot removal. Returns ``(clean_records, removed_duplicates, bot_report)``."""
    deduped, n_dup = dedup_repeated(records)
    report = flag_bots(deduped, config)
    removed = set(report.removed)
    return [r for r in deduped if r.user_id not in removed], n_dup, report


# ---------------------------------------------------------------------------
# summary table


def percent(num: int, den: int) -> str:
    """100*num/den rounded half-up to two decimals, computed in exact integers."""
    if den == 0:
        return "0.00"
    hundredths = (2 * 10000 * num + den) // (2 * den)
    return f"{hundredths // 100}.{hundredths % 100:02d}"


@dataclass(frozen=True)
class SummaryRow:
    zone: str
    total_tweets: int
    valid_tweets: int
    users: int
    users_moved: int

    def __post_init__(self):
        if self.valid_tweets > self.total_tweets:
            raise ValueError(f"{self.zone}: valid_tweets exceeds total_tweets")
        if self.users_moved > self.users:
            raise ValueError(f"{self.zone}: users_moved exceeds users")

    @property
    def valid_pct(self) -> str:
        return percent(self.valid_tweets, self.total_tweets)

    @property
    def moved_pct(self) -> str:
        return percent(self.users_moved, self.users)

    def as_dict(self) -> dict:
        return {
            "zone": self.zone,
            "total_tweets": self.total_tweets,
            "valid_tweets": self.valid_tweets,
            "valid_pct": self.valid_pct,
            "users": self.users,
            "users_moved": self.users_moved,
            "moved_pct": self.moved_pct,
        }


SUMMARY_COLUMNS = ("zone", "total_tweets", "valid_tweets", "valid_pct", "users", "users_moved", "moved_pct")


@dataclass(eq=False)
class Zone(geometry._Shape):
    name: str = ""


def load_zones(path) -> list[Zone]:
    zones = []
    for k, feat in enumerate(geometry._read_features(path)):
        props = feat.get("properties") or {}
        name = props.get("name")
        if name is None:
            raise geometry.LoadError(f"{path} feature {k}: missing property 'name'")
        zones.append(Zone(parts=geometry._parse_geometry(feat.get("geometry"), f"zone {name}"), name=str(name)))
    return zones


def user_moved(points) -> bool:
    """More than one record and at least two distinct (lon, lat) pairs."""
    return len(points) > 1 and len(set(points)) >= 2


def summarize(records_raw, records_clean, zones=None) -> list[SummaryRow]:
    """One summary row per zone; ``zones=None`` means a single zone covering everything."""
    zones = zones if zones is not None else [None]
    raw_xy = np.array([(r.lon, r.lat) for r in records_raw], dtype=float).reshape(-1, 2)
    clean_xy = np.array([(r.lon, r.lat) for r in records_clean], dtype=float).reshape(-1, 2)
    rows = []
    for zone in zones:
        if zone is None:
            name = "all"
            in_raw = np.ones(len(records_raw), dtype=bool)
            in_clean = np.ones(len(records_clean), dtype=bool)
        else:
            name = zone.name
            in_raw = geometry.shape_membership(raw_xy, zone) if len(raw_xy) else np.zeros(0, bool)
            in_clean = geometry.shape_membership(clean_xy, zone) if len(clean_xy) else np.zeros(0, bool)
        per_user = defaultdict(list)
        for r, hit in zip(records_clean, in_clean):
            if hit:
                per_user[r.user_id].append((r.lon, r.lat))
        moved = sum(user_moved(pts) for pts in per_user.values())
        rows.append(SummaryRow(name, int(in_raw.sum()), int(in_clean.sum()), len(per_user), moved))
    return rows


def write_summary(rows, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_dict())


def read_summary_counts(path) -> list[SummaryRow]:
    """Summary rows from a CSV holding the four integer count columns per zone."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [
            SummaryRow(
                row["zone"],
                int(row["total_tweets"]),
                int(row["valid_tweets"]),
                int(row["users"]),
                int(row["users_moved"]),
            )
            for row in csv.DictReader(fh)
        ]


def write_bots(report: BotReport, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["user_id", "tweet_count", "auto_flagged", "removed"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(report.rows())
