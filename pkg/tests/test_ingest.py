import json
import warnings
from datetime import datetime, timezone
from decimal import ROUND_HALF_UP, Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA, record, square
from mobiflow.ingest import (
    CleaningConfig,
    ParseError,
    SummaryRow,
    Zone,
    clean,
    dedup_repeated,
    flag_bots,
    load_overrides,
    parse_record,
    percent,
    read_records,
    summarize,
)


def _line(**kw):
    base = {"id": "1", "user": "u", "created_at": "2016-02-01T12:00:00Z", "lon": -73.05, "lat": -36.83, "text": "x"}
    base.update(kw)
    return json.dumps({k: v for k, v in base.items() if v is not None})


# ---------------------------------------------------------------------------
# parsing


def test_parse_fixture_line():
    line = (DATA / "sample.ndjson").read_text(encoding="utf-8").splitlines()[0]
    r = parse_record(line)
    assert (r.lon, r.lat) == (-73.05, -36.83)
    assert r.user_id == "u1" and r.text == "hola Concepción"
    assert r.timestamp_utc == datetime(2016, 2, 2, 5, 30, tzinfo=timezone.utc)


def test_lat_out_of_range():
    with pytest.raises(ParseError) as exc:
        parse_record(_line(lat=95))
    assert exc.value.field == "lat"


@pytest.mark.parametrize("line", ["", "   ", "\n"])
def test_empty_record(line):
    with pytest.raises(ParseError, match="empty record"):
        parse_record(line)


@pytest.mark.parametrize("missing", ["id", "user", "created_at", "lon", "lat", "text"])
def test_missing_field_named(missing):
    with pytest.raises(ParseError) as exc:
        parse_record(_line(**{missing: None}))
    assert exc.value.field == missing


@pytest.mark.parametrize("bad", ["yesterday", "2016-13-01T00:00:00Z"])
def test_bad_timestamp(bad):
    with pytest.raises(ParseError) as exc:
        parse_record(_line(created_at=bad))
    assert exc.value.field == "created_at"


def test_legacy_timestamp_format():
    r = parse_record(_line(created_at="Mon Feb 01 12:00:00 +0000 2016"))
    assert r.timestamp_utc == datetime(2016, 2, 1, 12, tzinfo=timezone.utc)


def test_study_window_enforced():
    cfg = CleaningConfig(datetime(2016, 1, 1, 3, tzinfo=timezone.utc), datetime(2016, 4, 1, 3, tzinfo=timezone.utc))
    parse_record(_line(created_at="2016-01-01T03:00:00Z"), cfg)
    with pytest.raises(ParseError, match="outside study window"):
        parse_record(_line(created_at="2016-04-01T03:00:00Z"), cfg)


def test_read_records_collects_errors():
    recs, errors = read_records(DATA / "sample.ndjson")
    assert len(recs) == 3
    assert [e.field for _, e in errors] == ["lat"]


# ---------------------------------------------------------------------------
# dedup


def _rec(k, text, lon=0.0, lat=0.0, user="u"):
    return record(user, datetime(2016, 2, 1, 12, k), lon, lat, text=text, rid=f"r{k}")


def test_dedup_three_identical_of_five():
    recs = [_rec(0, "a"), _rec(1, "alert", 1, 1), _rec(2, "alert", 1, 1), _rec(3, "b"), _rec(4, "alert", 1, 1)]
    kept, removed = dedup_repeated(recs)
    assert removed == 2
    assert [r.record_id for r in kept] == ["r0", "r1", "r3"]


def test_dedup_identity_on_distinct():
    recs = [_rec(k, f"t{k}") for k in range(5)]
    assert dedup_repeated(recs) == (recs, 0)


def test_dedup_key_includes_location():
    kept, removed = dedup_repeated([_rec(0, "same", 0, 0), _rec(1, "same", 0, 1)])
    assert removed == 0 and len(kept) == 2


def test_dedup_keeps_earliest_after_sort():
    kept, _ = dedup_repeated([_rec(5, "x"), _rec(1, "x")])
    assert [r.record_id for r in kept] == ["r1"]


_recs = st.lists(
    st.tuples(st.integers(0, 59), st.sampled_from("abc"), st.integers(0, 2), st.integers(0, 1)), max_size=30
).map(lambda rows: [_rec(m, t, x, y, user=f"u{x}") for m, t, x, y in rows])


@settings(max_examples=100, deadline=None)
@given(_recs)
def test_dedup_idempotent(recs):
    once, _ = dedup_repeated(recs)
    twice, removed = dedup_repeated(once)
    assert twice == once and removed == 0
    assert len({(r.text, r.lon, r.lat) for r in recs}) == len(once)


# ---------------------------------------------------------------------------
# bots


def _user_records(user, n):
    return [_rec(k % 60, f"{user}-{k}", user=user) for k in range(n)]


@pytest.mark.parametrize("n, flagged", [(251, True), (250, False)])
def test_bot_threshold_strict(n, flagged):
    report = flag_bots(_user_records("bot", n), CleaningConfig(bot_threshold=250))
    assert ("bot" in report.auto_flagged) is flagged


def test_26_flagged_9_allowed_17_removed():
    recs = [r for k in range(26) for r in _user_records(f"heavy{k:02d}", 251 + k)]
    recs += _user_records("light", 10)
    allow = frozenset(f"heavy{k:02d}" for k in range(9))
    report = flag_bots(recs, CleaningConfig(bot_threshold=250, allow=allow))
    assert len(report.auto_flagged) == 26
    assert len(report.removed) == 17
    assert not allow & set(report.removed)


def test_deny_list_removes_light_user():
    report = flag_bots(_user_records("a", 3), CleaningConfig(deny=frozenset({"a"})))
    assert report.removed == ["a"] and report.auto_flagged == []


def test_unknown_override_warns():
    with pytest.warns(UserWarning, match="ghost"):
        report = flag_bots(_user_records("a", 3), CleaningConfig(allow=frozenset({"ghost"})))
    assert report.unknown_overrides == ["ghost"]


def test_overrides_file(tmp_path):
    path = tmp_path / "o.csv"
    path.write_text("user_id,decision\nA,allow\nB,deny\n")
    assert load_overrides(path) == (frozenset({"A"}), frozenset({"B"}))
    path.write_text("user_id,decision\nA,maybe\n")
    with pytest.raises(ValueError, match="maybe"):
        load_overrides(path)


def test_clean_removes_all_records_of_removed_users():
    recs = _user_records("bot", 6) + _user_records("human", 2)
    kept, n_dup, report = clean(recs, CleaningConfig(bot_threshold=5))
    assert {r.user_id for r in kept} == {"human"} and n_dup == 0 and report.removed == ["bot"]


# ---------------------------------------------------------------------------
# summary


@pytest.mark.parametrize(
    "num, den, expected",
    [(37838, 52536, "72.02"), (2258, 4113, "54.90"), (37708, 52345, "72.04"), (2255, 4101, "54.99"),
     (17422, 21568, "80.78"), (1695, 2494, "67.96"), (1, 8, "12.50"), (1, 800, "0.13"), (0, 5, "0.00"),
     (5, 5, "100.00"), (0, 0, "0.00")],
)
def test_percent_examples(num, den, expected):
    assert percent(num, den) == expected


@settings(max_examples=300)
@given(st.integers(1, 10**7).flatmap(lambda d: st.tuples(st.integers(0, d), st.just(d))))
def test_percent_matches_decimal_oracle(pair):
    num, den = pair
    oracle = (Decimal(100) * Decimal(num) / Decimal(den)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    # Decimal division is exact to 28 digits, enough for denominators below 1e7
    assert percent(num, den) == f"{oracle:.2f}"


def test_summary_row_invariants():
    with pytest.raises(ValueError):
        SummaryRow("z", 1, 2, 0, 0)
    with pytest.raises(ValueError):
        SummaryRow("z", 2, 1, 1, 2)


def test_summarize_counts_and_moved():
    t = datetime(2016, 2, 1, 12)
    raw = [
        record("a", t, 0.5, 0.5, rid="1"),
        record("a", t, 0.6, 0.5, rid="2"),
        record("b", t, 0.5, 0.5, rid="3"),
        record("b", t, 0.5, 0.5, rid="4"),
        record("c", t, 0.2, 0.2, rid="5"),
        record("d", t, 5.0, 5.0, rid="6"),
    ]
    clean_recs = raw[:4] + raw[5:]
    zone = Zone(parts=[square(0, 0, 1)], name="core")
    (everything,) = summarize(raw, clean_recs)
    assert (everything.total_tweets, everything.valid_tweets, everything.users, everything.users_moved) == (6, 5, 3, 1)
    (core,) = summarize(raw, clean_recs, [zone])
    # b tweeted twice from one place: not moved; d is outside the zone
    assert (core.total_tweets, core.valid_tweets, core.users, core.users_moved) == (5, 4, 2, 1)
    assert core.valid_pct == "80.00" and core.moved_pct == "50.00"


def test_empty_zone_row_of_zeros():
    zone = Zone(parts=[square(50, 50, 1)], name="empty")
    (row,) = summarize([record("a", datetime(2016, 2, 1), 0.5, 0.5)], [], [zone])
    assert row.as_dict() == {"zone": "empty", "total_tweets": 0, "valid_tweets": 0, "valid_pct": "0.00",
                             "users": 0, "users_moved": 0, "moved_pct": "0.00"}


@settings(max_examples=50, deadline=None)
@given(_recs, st.sets(st.sampled_from(["u0", "u1", "u2"])))
def test_removing_users_never_increases_counts(recs, drop):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        full, _, _ = clean(recs, CleaningConfig())
        fewer, _, _ = clean(recs, CleaningConfig(deny=frozenset(drop)))
    (a,) = summarize(recs, full)
    (b,) = summarize(recs, fewer)
    assert b.valid_tweets <= a.valid_tweets <= a.total_tweets
    assert b.users <= a.users and b.users_moved <= a.users_moved
