"""Streaming NDJSON capture filtered by a bounding box."""

from __future__ import annotations

import json
import logging
import socket
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from .validation import check_bbox

log = logging.getLogger(__name__)


class CaptureError(RuntimeError):
    def __init__(self, message: str, reconnects: int):
        super().__init__(f"{message} (after {reconnects} reconnects)")
        self.reconnects = reconnects


@dataclass(frozen=True)
class CaptureConfig:
    endpoint_url: str
    bbox: tuple[float, float, float, float]
    output_path: Path
    reconnect_backoff_initial: float = 1.0
    reconnect_backoff_max: float = 60.0
    read_timeout: float = 30.0
    headers: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "bbox", check_bbox(self.bbox))
        object.__setattr__(self, "output_path", Path(self.output_path))
        if not 0 < self.reconnect_backoff_initial <= self.reconnect_backoff_max:
            raise ValueError("need 0 < reconnect_backoff_initial <= reconnect_backoff_max")


@dataclass
class CaptureReport:
    lines_written: int = 0
    reconnects: int = 0
    dropped_outside: int = 0
    malformed: int = 0


def backoff_delay(attempt: int, initial: float, maximum: float) -> float:
    """``min(initial * 2**attempt, maximum)``."""
    return min(initial * 2.0**attempt, maximum)


def in_bbox(lon: float, lat: float, bbox) -> bool:
    lon0, lat0, lon1, lat1 = bbox
    return lon0 <= lon <= lon1 and lat0 <= lat <= lat1


def record_point(obj) -> tuple[float, float] | None:
    """``(lon, lat)`` from top-level ``lon``/``lat`` or a GeoJSON-style ``coordinates`` member."""
    if not isinstance(obj, dict):
        return None
    lon, lat = obj.get("lon"), obj.get("lat")
    if lon is None or lat is None:
        coords = obj.get("coordinates")
        if isinstance(coords, dict):
            coords = coords.get("coordinates")
        if not isinstance(coords, list) or len(coords) < 2:
            return None
        lon, lat = coords[0], coords[1]
    if isinstance(lon, bool) or isinstance(lat, bool):
        return None
    try:
        return float(lon), float(lat)
    except (TypeError, ValueError):
        return None


def filter_line(raw: bytes, bbox) -> str:
    """Classify one received line as ``"keep"``, ``"outside"`` or ``"malformed"``."""
    try:
        point = record_point(json.loads(raw))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return "malformed"
    if point is None:
        return "malformed"
    return "keep" if in_bbox(point[0], point[1], bbox) else "outside"


def _consume(response, out, config: CaptureConfig, report: CaptureReport, stop: threading.Event) -> None:
    while not stop.is_set():
        raw = response.readline()
        if not raw:
            return
        body = raw.rstrip(b"\r\n")
        if not body.strip():
            continue
        verdict = filter_line(body, config.bbox)
        if verdict == "keep":
            out.write(body + b"\n")
            out.flush()
            report.lines_written += 1
        elif verdict == "outside":
            report.dropped_outside += 1
        else:
            report.malformed += 1


def stream_capture(config: CaptureConfig, stop: threading.Event | None = None) -> CaptureReport:
    """Append in-bbox lines from a long-lived NDJSON endpoint until ``stop`` is set.

    Lines are written byte-for-byte (plus LF) in append mode. A closed stream is
    reopened after the initial backoff; failed connections back off
    exponentially, and a failure following a wait at the cap is fatal.
    """
    stop = stop or threading.Event()
    report = CaptureReport()
    failures = 0
    config.output_path.parent.mkdir(parents=True, exist_ok=True)
    with config.output_path.open("ab") as out:
        while not stop.is_set():
            request = urllib.request.Request(config.endpoint_url, headers=dict(config.headers))
            try:
                with urllib.request.urlopen(request, timeout=config.read_timeout) as response:
                    failures = 0
                    _consume(response, out, config, report, stop)
                wait = config.reconnect_backoff_initial
            except (urllib.error.URLError, ConnectionError, socket.timeout, OSError) as exc:
                wait = backoff_delay(failures, config.reconnect_backoff_initial, config.reconnect_backoff_max)
                if failures > 0 and backoff_delay(failures - 1, config.reconnect_backoff_initial,
                                                  config.reconnect_backoff_max) >= config.reconnect_backoff_max:
                    raise CaptureError(f"endpoint unreachable: {exc}", report.reconnects) from exc
                failures += 1
                log.warning("capture connection failed (%s); retrying in %.3gs", exc, wait)
            if stop.is_set():
                break
            report.reconnects += 1
            if stop.wait(wait):
                break
    return report


def read_headers(path) -> dict[str, str]:
    """``Name: value`` lines, blank lines and ``#`` comments ignored."""
    headers = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        name, _, value = line.partition(":")
        headers[name.strip()] = value.strip()
    return headers
