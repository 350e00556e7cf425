"""Stage functions shared by the CLI subcommands and the full run."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import flowmap, flows, geometry, home, ingest, render, stats

STAGES = ("clean", "summarize", "homes", "moran", "flows", "flowmaps", "render")
EXIT_CODES = {
    "capture": 3,
    "clean": 10,
    "summarize": 11,
    "homes": 12,
    "moran": 13,
    "flows": 14,
    "flowmaps": 15,
    "render": 16,
    "synth": 17,
    "geometry": 20,
}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.exit_code = EXIT_CODES.get(stage, 1)


@dataclass
class RunConfig:
    input: str = ""
    districts: str = ""
    spaces: str = ""
    out: str = "out"
    zones: str | None = None
    overrides: str | None = None
    start: str | None = "2016-01-01T00:00:00"
    end: str | None = "2016-04-01T00:00:00"
    utc_offset_minutes: int = -180
    bot_threshold: int = 250
    scheme: str = "queen"
    permutations: int = 999
    alpha: float = 0.05
    alternative: str = "two-sided"
    seed: int = 0
    swap_roles: bool = False
    denominator: str = "resolved"
    merge_angle_max: float = 45.0
    width_k: float = 0.5
    palette: str = "Set1"
    threads: int = 1

    def cleaning(self) -> ingest.CleaningConfig:
        allow, deny = ingest.load_overrides(self.overrides) if self.overrides else (frozenset(), frozenset())
        return ingest.CleaningConfig(
            study_start=ingest.local_instant(self.start, self.utc_offset_minutes) if self.start else None,
            study_end=ingest.local_instant(self.end, self.utc_offset_minutes) if self.end else None,
            utc_offset_minutes=self.utc_offset_minutes,
            bot_threshold=self.bot_threshold,
            allow=allow,
            deny=deny,
        )


@dataclass
class StageRecord:
    name: str
    status: str = "ok"
    seconds: float = 0.0
    outputs: list[str] = field(default_factory=list)
    note: str = ""


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def load_geometry(cfg: RunConfig, need_spaces: bool = True):
    try:
        districts = geometry.load_districts(cfg.districts)
        spaces = geometry.load_spaces(cfg.spaces) if need_spaces else []
    except geometry.LoadError as exc:
        raise StageError("geometry", f"load error: {exc}") from exc
    return districts, spaces


# ---------------------------------------------------------------------------
# stages; each writes its files into ``out`` and returns its in-memory result


def stage_clean(cfg: RunConfig, out: Path):
    config = cfg.cleaning()
    try:
        raw, errors = ingest.read_records(cfg.input, config)
    except FileNotFoundError as exc:
        raise StageError("clean", f"input not found: {cfg.input}") from exc
    clean, n_dup, report = ingest.clean(raw, config)
    ingest.write_records(clean, out / "clean.ndjson")
    ingest.write_bots(report, out / "bots.csv")
    ingest.write_records(raw, out / "parsed.ndjson")
    error_fields: dict[str, int] = {}
    for _, err in errors:
        error_fields[err.field] = error_fields.get(err.field, 0) + 1
    _dump_json(
        {
            "parsed": len(raw),
            "rejected": len(errors),
            "rejected_by_field": error_fields,
            "duplicates_removed": n_dup,
            "bots_auto_flagged": len(report.auto_flagged),
            "bots_removed": len(report.removed),
            "clean": len(clean),
        },
        out / "clean_report.json",
    )
    return raw, clean, report


def stage_summarize(cfg: RunConfig, raw, clean, out: Path):
    zones = ingest.load_zones(cfg.zones) if cfg.zones else None
    rows = ingest.summarize(raw, clean, zones)
    ingest.write_summary(rows, out / "summary.csv")
    return rows


def stage_homes(cfg: RunConfig, clean, districts, out: Path) -> home.HomeLocator:
    locator = home.HomeLocator(districts, utc_offset_minutes=cfg.utc_offset_minutes).fit(clean)
    home.write_homes(locator.profiles_, out / "homes.csv")
    return locator


def visitors_by_home(visits, homes: dict[str, str], district_ids) -> np.ndarray:
    """Distinct resolved-home users per district with at least one public-space visit."""
    users = {v.user_id for v in visits}
    counts = dict.fromkeys(district_ids, 0)
    for u in users:
        d = homes.get(u)
        if d in counts:
            counts[d] += 1
    return np.array([counts[d] for d in district_ids], dtype=float)


def stage_moran(cfg: RunConfig, clean, districts, spaces, homes: dict[str, str], out: Path):
    try:
        weights = geometry.build_weights(districts, cfg.scheme, standardize=True)
    except geometry.DegenerateWeightsError as exc:
        raise StageError("moran", str(exc)) from exc
    (out / "weights.txt").write_text(weights.to_adjacency_text(), encoding="utf-8")
    by_id = {d.district_id: d for d in districts}
    population = np.array([by_id[i].population for i in weights.ids])
    visits = flows.detect_visits(clean, spaces, utc_offset_minutes=cfg.utc_offset_minutes)
    visitors = visitors_by_home(visits, homes, weights.ids)
    x, y = (visitors, population) if cfg.swap_roles else (population, visitors)
    model = stats.BivariateMoran(weights, cfg.permutations, cfg.alpha, cfg.seed, cfg.alternative, cfg.threads)
    try:
        model.fit(x, y)
    except (stats.ConstantVariableError, stats.AllIslandsError) as exc:
        (out / "moran.csv").write_text("district_id,x,y,zx,lag_zy,local_I,pseudo_p,label\n", encoding="utf-8")
        (out / "moran_global.txt").write_text(
            f"I nan\nn 0\nP {cfg.permutations}\nseed {cfg.seed}\nundefined {exc}\n", encoding="utf-8"
        )
        _dump_json(geometry.feature_collection([], []), out / "lisa.geojson")
        return None, str(exc)
    result = model.result(weights.ids)
    result.write(out / "moran.csv", out / "moran_global.txt")
    labels = dict(zip(result.ids, result.labels))
    lisa = geometry.feature_collection(
        [by_id[i] for i in result.ids],
        [{"district_id": i, "label": labels[i], "pseudo_p": float(p)} for i, p in zip(result.ids, result.pseudo_p)],
    )
    _dump_json(lisa, out / "lisa.geojson")
    return result, ""


def stage_flows(cfg: RunConfig, clean, districts, spaces, homes: dict[str, str], out: Path) -> flows.FlowBuilder:
    builder = flows.FlowBuilder(
        spaces, [d.district_id for d in districts], utc_offset_minutes=cfg.utc_offset_minutes,
        denominator=cfg.denominator,
    ).fit(clean, homes)
    flows.write_visits(builder.visits_, out / "visits.csv")
    builder.raw_.write(out / "od_raw.csv", out / "od_raw_marginals.csv")
    builder.normalized_.write(out / "od_normalized.csv", out / "od_normalized_marginals.csv")
    return builder


def read_od(out: Path):
    raw_path, norm_path = out / "od_raw.csv", out / "od_normalized.csv"
    if not raw_path.exists() or not norm_path.exists():
        raise StageError("flowmaps", f"missing OD matrix in {out} (run flows first)")
    return flows.read_flow_matrix(raw_path, "raw"), flows.read_flow_matrix(norm_path, "normalized")


def stage_flowmaps(cfg: RunConfig, raw, normalized, districts, spaces, out: Path):
    scale = flowmap.WidthScale(cfg.width_k)
    centroids = {d.district_id: geometry.centroid(d) for d in districts}
    anchors = {s.space_id: geometry.centroid(s) for s in spaces}
    lat0 = geometry.reference_latitude(districts)
    missing = sorted(set(raw.space_ids) - set(anchors))
    if missing:
        raise StageError("flowmaps", f"OD matrix references unknown spaces: {', '.join(missing)}")
    result = {}
    for kind, matrix in (("raw", raw), ("normalized", normalized)):
        trees = flowmap.trees_from_matrix(matrix, anchors, centroids, cfg.merge_angle_max, lat0)
        folder = out / "flowmaps" / kind
        folder.mkdir(parents=True, exist_ok=True)
        for sid, tree in trees.items():
            _dump_json(flowmap.tree_to_geojson(tree, scale, {"kind": kind}), folder / f"flow_{sid}.geojson")
        result[kind] = trees
    return result


def stage_render(cfg: RunConfig, trees, districts, spaces, moran_labels, out: Path) -> list[str]:
    scale = flowmap.WidthScale(cfg.width_k)
    palette = render.Palette.named(cfg.palette)
    maps = out / "maps"
    maps.mkdir(parents=True, exist_ok=True)
    names = {s.space_id: s.name for s in spaces}
    by_cat: dict[str, list[str]] = {}
    for s in spaces:
        by_cat.setdefault(s.category, []).append(s.space_id)
    written = []
    for kind, kind_trees in trees.items():
        for cat in geometry.CATEGORIES:
            sids = [sid for sid in by_cat.get(cat, []) if sid in kind_trees]
            if not sids:
                continue
            try:
                svg = render.render_flow_map({sid: kind_trees[sid] for sid in sids}, scale, palette, districts,
                                             title=f"{cat} ({kind})", names=names)
            except render.RenderConfigError as exc:
                raise StageError("render", str(exc)) from exc
            path = maps / f"flows_{kind}_{cat}.svg"
            path.write_text(svg, encoding="utf-8")
            written.append(str(path.relative_to(out)))
    if moran_labels:
        (maps / "lisa.svg").write_text(render.render_lisa_map(districts, moran_labels), encoding="utf-8")
        written.append("maps/lisa.svg")
    return written


# ---------------------------------------------------------------------------


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _snapshot(out: Path) -> dict[str, int]:
    """``relpath -> mtime_ns`` of every file except the manifest."""
    return {str(p.relative_to(out)): p.stat().st_mtime_ns for p in out.rglob("*")
            if p.is_file() and p.name != "manifest.json"}


def run_pipeline(cfg: RunConfig) -> dict:
    """Run all seven stages in order and write ``manifest.json`` into the output dir.

    A failing stage stops the run; files written so far are kept and the
    manifest marks the run as partial before the :class:`StageError` propagates.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    records: list[StageRecord] = []
    state: dict = {}
    error: StageError | None = None

    def step(name, fn):
        before = _snapshot(out)
        rec = StageRecord(name)
        t0 = time.perf_counter()
        try:
            note = fn()
            rec.note = note or ""
        except StageError:
            rec.status = "failed"
            raise
        except (ValueError, OSError, KeyError) as exc:
            rec.status = "failed"
            raise StageError(name, str(exc)) from exc
        finally:
            rec.seconds = round(time.perf_counter() - t0, 6)
            after = _snapshot(out)
            rec.outputs = sorted(p for p, t in after.items() if before.get(p) != t)
            records.append(rec)

    def do_clean():
        state["raw"], state["clean"], _ = stage_clean(cfg, out)

    def do_summarize():
        stage_summarize(cfg, state["raw"], state["clean"], out)

    def do_homes():
        state["districts"], state["spaces"] = load_geometry(cfg)
        state["homes"] = stage_homes(cfg, state["clean"], state["districts"], out).homes_

    def do_moran():
        state["moran"], note = stage_moran(cfg, state["clean"], state["districts"], state["spaces"], state["homes"], out)
        return note

    def do_flows():
        b = stage_flows(cfg, state["clean"], state["districts"], state["spaces"], state["homes"], out)
        state["raw_od"], state["norm_od"] = b.raw_, b.normalized_

    def do_flowmaps():
        state["trees"] = stage_flowmaps(cfg, state["raw_od"], state["norm_od"], state["districts"], state["spaces"], out)

    def do_render():
        m = state.get("moran")
        labels = dict(zip(m.ids, m.labels)) if m is not None else None
        stage_render(cfg, state["trees"], state["districts"], state["spaces"], labels, out)

    try:
        # layers are validated up front so a bad file fails fast under the geometry name
        load_geometry(cfg)
        for name, fn in zip(STAGES, (do_clean, do_summarize, do_homes, do_moran, do_flows, do_flowmaps, do_render)):
            step(name, fn)
    except StageError as exc:
        error = exc
    manifest = {
        "config": asdict(cfg),
        "seed": cfg.seed,
        "stages": [asdict(r) for r in records],
        "status": "ok" if error is None else "failed",
        "partial": error is not None,
        "error": str(error) if error else None,
        "files": {p: _file_digest(out / p) for p in sorted(_snapshot(out))},
    }
    _dump_json(manifest, out / "manifest.json")
    if error is not None:
        raise error
    return manifest


def strip_timings(manifest: dict) -> dict:
    """Copy of a manifest without the per-stage timings."""
    m = json.loads(json.dumps(manifest))
    for stage in m.get("stages", []):
        stage.pop("seconds", None)
    return m
