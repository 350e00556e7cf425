"""Acceptance criteria; each test reports one PASS/FAIL line in the terminal summary."""

import csv
import itertools
import json
import time
import xml.etree.ElementTree as ET
from numbers import Real

import numpy as np
import pytest

from conftest import DATA, report_criterion
from mobiflow import ingest, synth
from mobiflow.flowmap import build_flow_tree
from mobiflow.flows import FlowBuilder
from mobiflow.geometry import build_weights
from mobiflow.home import HomeLocator
from mobiflow.ingest import CleaningConfig, flag_bots, read_summary_counts
from mobiflow.pipeline import RunConfig, run_pipeline, strip_timings
from mobiflow.stats import (
    BivariateMoran,
    classify_clusters,
    global_bivariate_moran,
    local_bivariate_moran,
    permutation_test,
    standardize,
)

from test_stats import oracle_moran


def _check(number, passed, detail):
    report_criterion(number, passed, detail)
    assert passed, detail


# 1 -------------------------------------------------------------------------


def test_criterion_01_summary_percentages():
    t0 = time.perf_counter()
    rows = read_summary_counts(DATA / "table1_counts.csv")
    got = [p for r in rows for p in (r.valid_pct, r.moved_pct)]
    dt = time.perf_counter() - t0
    expected = ["72.02", "54.90", "72.04", "54.99", "80.78", "67.96"]
    _check(1, got == expected and dt < 1.0, f"summary percentages {got} in {dt:.3f}s")


# 2 -------------------------------------------------------------------------


def test_criterion_02_bot_rule():
    t0 = time.perf_counter()
    recs = []
    t = ingest.local_instant("2016-02-01T12:00:00", -180)
    for k in range(26):
        uid = f"heavy{k:02d}"
        recs += [ingest.TweetRecord(f"{uid}-{j}", uid, t, -73.0, -36.8, f"{uid} {j}") for j in range(251 + 3 * k)]
    recs += [ingest.TweetRecord(f"light-{j}", "light", t, -73.0, -36.8, str(j)) for j in range(250)]
    allow = frozenset(f"heavy{k:02d}" for k in range(0, 26, 3))
    report = flag_bots(recs, CleaningConfig(bot_threshold=250, allow=allow))
    dt = time.perf_counter() - t0
    ok = len(allow) == 9 and len(report.auto_flagged) == 26 and len(report.removed) == 17 and dt < 1.0
    _check(2, ok, f"{len(report.auto_flagged)} flagged, {len(report.removed)} removed in {dt:.3f}s")


# 3 -------------------------------------------------------------------------


def test_criterion_03_moran_oracle():
    rng = np.random.default_rng(2024)
    worst_local = worst_global = worst_decomp = 0.0
    for trial in range(100):
        n = int(rng.integers(5, 201))
        districts = synth.voronoi_districts(n, int(rng.integers(2**31)), (0.0, 0.0, 1.0, 1.0))
        W = build_weights(districts, "queen").to_dense()
        x, y = rng.normal(size=n) * rng.uniform(0.1, 100), rng.exponential(size=n)
        I, local = oracle_moran(x.tolist(), y.tolist(), W.tolist())
        zx, zy = standardize(x), standardize(y)
        got_local = local_bivariate_moran(zx, zy, W)
        got_global = global_bivariate_moran(zx, zy, W)
        worst_local = max(worst_local, float(np.max(np.abs(got_local - local))))
        worst_global = max(worst_global, abs(got_global - I))
        worst_decomp = max(worst_decomp, abs(got_global - got_local.mean()))
    ok = max(worst_local, worst_global, worst_decomp) <= 1e-12
    _check(3, ok, f"max |local| err {worst_local:.2e}, |global| err {worst_global:.2e}, "
                  f"|global - mean(local)| {worst_decomp:.2e} (tol 1e-12)")


# 4 -------------------------------------------------------------------------


def test_criterion_04_permutation_calibration():
    t0 = time.perf_counter()
    n = 50
    W = build_weights(synth.voronoi_districts(n, 17, (0.0, 0.0, 1.0, 1.0)), "queen").to_dense()
    rng = np.random.default_rng(99)
    rejections = total = 0
    for trial in range(200):
        zx, zy = standardize(rng.normal(size=n)), standardize(rng.normal(size=n))
        p = permutation_test(zx, zy, W, 999, seed=trial)
        rejections += int(np.count_nonzero(p <= 0.05))
        total += n
    rate = rejections / total
    dt = time.perf_counter() - t0
    _check(4, 0.03 <= rate <= 0.07 and dt < 60, f"rejection rate {rate:.4f} over 200 trials x {n} units "
                                                f"(band [0.03, 0.07]) in {dt:.1f}s")


# 5 -------------------------------------------------------------------------


def test_criterion_05_label_soundness():
    def recompute(zx, lag, p, alpha, island):
        if island:
            return "Island"
        if p > alpha or zx == 0 or lag == 0:
            return "NotSignificant"
        return ("H" if zx > 0 else "L") + ("H" if lag > 0 else "L")

    combos = list(itertools.product([-2.0, 0.0, 1.5], [-0.5, 0.0, 3.0], [0.001, 0.05, 0.051, 1.0], [False, True]))
    zx, lag, p, isl = (np.array(c) for c in zip(*combos))
    labels = classify_clusters(zx, lag, p, 0.05, isl.astype(bool))
    bad = sum(lab != recompute(*c[:3], 0.05, c[3]) for lab, c in zip(labels, combos))

    W = build_weights(synth.voronoi_districts(60, 5, (0, 0, 1, 1)), "queen")
    rng = np.random.default_rng(5)
    x = rng.normal(size=60)
    y = x + 0.5 * rng.normal(size=60)
    m = BivariateMoran(W, permutations=199, seed=1).fit(x, y)
    bad += sum(lab != recompute(a, b, c, 0.05, d) for lab, a, b, c, d in
               zip(m.labels_, m.zx_, m.lag_, m.p_sim_, m.islands_))
    _check(5, bad == 0, f"{len(combos)} sign/significance combinations plus 60 fitted units, {bad} mismatches")


# 6 -------------------------------------------------------------------------

NOISE_RECOVERY_MIN = 0.90


def _recovery(noise, seed):
    corpus = synth.generate(synth.SynthScenario(seed=seed, rows=5, cols=6, n_users=500, noise=noise))
    recs = [ingest.parse_record(line) for line in corpus.lines]
    homes = HomeLocator(corpus.districts).fit(recs).homes_
    return sum(homes.get(u) == h for u, h in corpus.homes.items()) / len(corpus.homes)


def test_criterion_06_home_recovery():
    clean = [_recovery(0.0, s) for s in range(3)]
    noisy = [_recovery(0.2, s) for s in range(5)]
    ok = all(r == 1.0 for r in clean) and min(noisy) >= NOISE_RECOVERY_MIN
    _check(6, ok, f"noiseless recovery {clean}; 20% noise recovery min {min(noisy):.3f} "
                  f"over {len(noisy)} seeds (threshold {NOISE_RECOVERY_MIN})")


# 7 -------------------------------------------------------------------------


def test_criterion_07_flow_tree_conservation():
    rng = np.random.default_rng(7)
    violations = 0
    for trial in range(1000):
        n = int(rng.integers(1, 60))
        dest = tuple(rng.uniform(-0.05, 0.05, 2))
        origins = [(f"D{k:03d}", tuple(rng.uniform(-0.2, 0.2, 2)), int(rng.integers(0, 100))) for k in range(n)]
        angle = float(rng.choice([15.0, 30.0, 45.0, 90.0]))
        a = build_flow_tree(dest, origins, angle)
        b = build_flow_tree(dest, origins, angle)
        violations += a != b
        for v in a.edges:
            violations += a.edge_weight[v] != a.own_weight[v] + sum(a.edge_weight[c] for c in a.children(v))
            if a.parent[v] > 0:
                violations += a.edge_weight[a.parent[v]] < a.edge_weight[v]
            for u in a.path_to_root(v)[1:]:
                violations += a.edge_weight[u] < a.edge_weight[v]
    _check(7, violations == 0, f"1000 random origin sets, {violations} conservation/monotonicity/identity violations")


# 8 -------------------------------------------------------------------------


def test_criterion_08_normalization_bounds():
    checked = bad = 0
    for seed, layout, noise in itertools.product(range(4), ["grid", "voronoi"], [0.0, 0.3]):
        corpus = synth.generate(synth.SynthScenario(seed=seed, layout=layout, noise=noise, n_users=200))
        recs = [ingest.parse_record(line) for line in corpus.lines]
        homes = HomeLocator(corpus.districts).fit(recs).homes_
        for denominator in ("resolved", "moved"):
            b = FlowBuilder(corpus.spaces, [d.district_id for d in corpus.districts],
                            denominator=denominator).fit(recs, homes)
            resolved = b.raw_.district_user_counts
            bad += sum(not 0.0 <= v <= 1.0 for v in b.normalized_.entries.values())
            bad += sum(v > resolved[d] for (d, _), v in b.raw_.entries.items())
            checked += len(b.normalized_.entries) + len(b.raw_.entries)
    _check(8, bad == 0, f"{checked} OD entries over 16 scenarios and both denominators, {bad} out of bounds")


# 9 -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def big_city(tmp_path_factory):
    root = tmp_path_factory.mktemp("big")
    sc = synth.SynthScenario(seed=7, rows=5, cols=10, n_spaces=20, n_users=9000, n_bots=5)
    synth.generate(sc).write(root)
    return root


@pytest.mark.slow
def test_criterion_09_end_to_end(big_city, tmp_path):
    n_records = sum(1 for _ in (big_city / "records.ndjson").open())
    manifests, times = [], []
    for k in range(2):
        cfg = RunConfig(input=str(big_city / "records.ndjson"), districts=str(big_city / "districts.geojson"),
                        spaces=str(big_city / "spaces.geojson"), out=str(tmp_path / f"run{k}"), threads=1)
        t0 = time.perf_counter()
        m = run_pipeline(cfg)
        times.append(time.perf_counter() - t0)
        m = strip_timings(m)
        m["config"].pop("out")
        manifests.append(json.dumps(m, sort_keys=True))
    n_districts = len(json.loads((big_city / "districts.geojson").read_text())["features"])
    n_spaces = len(json.loads((big_city / "spaces.geojson").read_text())["features"])
    ok = (n_records >= 100_000 and n_districts == 50 and n_spaces == 20 and max(times) < 10.0
          and manifests[0] == manifests[1])
    _check(9, ok, f"{n_records} records, {n_districts} districts, {n_spaces} spaces; runs took "
                  f"{times[0]:.2f}s and {times[1]:.2f}s; manifests identical: {manifests[0] == manifests[1]}")


# 10 ------------------------------------------------------------------------


def _position(p):
    return isinstance(p, list) and len(p) >= 2 and all(isinstance(c, Real) and not isinstance(c, bool) for c in p)


def _ring(r):
    return isinstance(r, list) and len(r) >= 4 and all(map(_position, r)) and r[0] == r[-1]


def _geometry_ok(g):
    if g is None:
        return True
    t, c = g.get("type"), g.get("coordinates")
    if t == "Point":
        return _position(c)
    if t in ("LineString", "MultiPoint"):
        return isinstance(c, list) and all(map(_position, c)) and (t == "MultiPoint" or len(c) >= 2)
    if t == "Polygon":
        return isinstance(c, list) and len(c) >= 1 and all(map(_ring, c))
    if t == "MultiPolygon":
        return isinstance(c, list) and all(isinstance(p, list) and p and all(map(_ring, p)) for p in c)
    if t == "GeometryCollection":
        return all(_geometry_ok(x) for x in g.get("geometries", []))
    return False


def geojson_ok(doc) -> bool:
    """Structural check of the RFC 7946 object grammar."""
    if doc.get("type") == "FeatureCollection":
        return isinstance(doc.get("features"), list) and all(geojson_ok(f) for f in doc["features"])
    if doc.get("type") == "Feature":
        props = doc.get("properties")
        return "geometry" in doc and (props is None or isinstance(props, dict)) and _geometry_ok(doc["geometry"])
    return _geometry_ok(doc)


def test_criterion_10_output_validity(tmp_path):
    corpus = synth.generate(synth.SynthScenario(seed=11, n_users=300, n_spaces=8))
    paths = corpus.write(tmp_path / "city")
    out = tmp_path / "out"
    k = 0.75
    run_pipeline(RunConfig(input=str(paths["records"]), districts=str(paths["districts"]),
                           spaces=str(paths["spaces"]), out=str(out), permutations=199, width_k=k))
    geojsons = sorted(out.rglob("*.geojson")) + [paths["districts"], paths["spaces"]]
    bad_geo = [p.name for p in geojsons if not geojson_ok(json.loads(p.read_text()))]

    svgs = sorted(out.rglob("*.svg"))
    bad_svg, bad_width, n_paths = [], 0, 0
    for p in svgs:
        try:
            root = ET.parse(p).getroot()
        except ET.ParseError:
            bad_svg.append(p.name)
            continue
        if not p.name.startswith("flows_"):
            continue
        kind = p.name.split("_")[1]
        allowed = set()
        for g in (out / "flowmaps" / kind).glob("*.geojson"):
            allowed |= {k * f["properties"]["accumulated_weight"] for f in json.loads(g.read_text())["features"]}
        for path in root.iter("{http://www.w3.org/2000/svg}path"):
            n_paths += 1
            bad_width += float(path.get("stroke-width")) not in allowed
    with (out / "od_raw.csv").open() as fh:
        has_flow = any(int(r["value"]) > 0 for r in csv.DictReader(fh))
    ok = not bad_geo and not bad_svg and bad_width == 0 and len(svgs) >= 2 and (n_paths > 0 or not has_flow)
    _check(10, ok, f"{len(geojsons)} GeoJSON files ({len(bad_geo)} invalid), {len(svgs)} SVG files "
                   f"({len(bad_svg)} malformed), {n_paths} flow strokes ({bad_width} not k * edge weight)")
