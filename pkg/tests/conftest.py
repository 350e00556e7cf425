from __future__ import annotations

from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pytest

from mobiflow.geometry import District, PublicSpace
from mobiflow.ingest import TweetRecord
from mobiflow.synth import voronoi_districts

DATA = Path(__file__).parent / "data"
LOCAL = timezone(timedelta(hours=-3))

_ACCEPTANCE: list[tuple[int, bool, str]] = []


def square(x0, y0, size=1.0):
    return [np.array([[x0, y0], [x0 + size, y0], [x0 + size, y0 + size], [x0, y0 + size], [x0, y0]], dtype=float)]


def district(did, x0, y0, size=1.0, population=100.0):
    return District(parts=[square(x0, y0, size)], district_id=did, name=did, population=population)


def space(sid, x0, y0, size=1.0, category="Park"):
    return PublicSpace(parts=[square(x0, y0, size)], space_id=sid, name=sid, category=category)


def grid(rows, cols, size=1.0, x0=0.0, y0=0.0):
    out, k = [], 1
    for r in range(rows):
        for c in range(cols):
            out.append(district(f"D{k}", x0 + c * size, y0 + r * size, size, population=100.0 * k))
            k += 1
    return out


def record(user, local, lon, lat, text=None, rid=None):
    """Record whose local (GMT-3) wall-clock time is ``local``."""
    ts = local.replace(tzinfo=LOCAL).astimezone(timezone.utc)
    rid = rid or f"{user}-{local.isoformat()}-{lon}-{lat}"
    return TweetRecord(rid, user, ts, float(lon), float(lat), text if text is not None else rid)


def report_criterion(number: int, passed: bool, detail: str) -> None:
    _ACCEPTANCE.append((number, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def grid2x2():
    return grid(2, 2)


@pytest.fixture(scope="session")
def voronoi50():
    return voronoi_districts(50, 11, (0.0, 0.0, 1.0, 1.0))


@pytest.fixture
def monday():
    # 2016-02-01 was a Monday
    return datetime(2016, 2, 1)
