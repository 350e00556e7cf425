"""Command-line front end: ``mobiflow <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
from pathlib import Path

from . import capture, geometry, home, ingest, pipeline, synth
from .pipeline import RunConfig, StageError

OUT_ENV = "MOBIFLOW_OUT"


def _common(p: argparse.ArgumentParser, *names: str) -> None:
    d = RunConfig()
    opts = {
        "out": lambda: p.add_argument("--out", default=os.environ.get(OUT_ENV, d.out),
                                      help=f"output directory (default ${OUT_ENV} or %(default)s)"),
        "input": lambda: p.add_argument("--input", required=True, help="raw NDJSON records"),
        "districts": lambda: p.add_argument("--districts", required=True, help="district GeoJSON"),
        "spaces": lambda: p.add_argument("--spaces", required=True, help="public-space GeoJSON"),
        "time": lambda: (
            p.add_argument("--start", default=d.start, help="study start, local ISO time"),
            p.add_argument("--end", default=d.end, help="study end (exclusive), local ISO time"),
            p.add_argument("--utc-offset", dest="utc_offset_minutes", type=int, default=d.utc_offset_minutes,
                           help="local time = UTC + offset minutes (default %(default)s)"),
        ),
        "offset": lambda: p.add_argument("--utc-offset", dest="utc_offset_minutes", type=int,
                                         default=d.utc_offset_minutes),
        "bots": lambda: (
            p.add_argument("--bot-threshold", type=int, default=d.bot_threshold),
            p.add_argument("--overrides", help="CSV user_id,decision (allow|deny)"),
        ),
        "moran": lambda: (
            p.add_argument("--scheme", choices=("queen", "rook"), default=d.scheme),
            p.add_argument("--permutations", type=int, default=d.permutations),
            p.add_argument("--alpha", type=float, default=d.alpha),
            p.add_argument("--alternative", choices=("two-sided", "directed"), default=d.alternative),
            p.add_argument("--seed", type=int, default=d.seed),
            p.add_argument("--swap-roles", action="store_true", help="use visitors as x and population as y"),
        ),
        "flows": lambda: p.add_argument("--denominator", choices=("resolved", "moved"), default=d.denominator),
        "map": lambda: (
            p.add_argument("--merge-angle", dest="merge_angle_max", type=float, default=d.merge_angle_max),
            p.add_argument("--width-k", type=float, default=d.width_k, help="stroke width per flow unit"),
            p.add_argument("--palette", default=d.palette),
        ),
        "threads": lambda: p.add_argument("--threads", type=int, default=d.threads),
        "zones": lambda: p.add_argument("--zones", help="GeoJSON of named analysis zones"),
    }
    for name in names:
        opts[name]()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobiflow", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("capture", help="append in-bbox records from an NDJSON stream")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--bbox", required=True, help="lonmin,latmin,lonmax,latmax")
    p.add_argument("--out", required=True, help="NDJSON file to append to")
    p.add_argument("--backoff-initial", type=float, default=1.0)
    p.add_argument("--backoff-max", type=float, default=60.0)
    p.add_argument("--headers", help="file of 'Name: value' request headers")

    p = sub.add_parser("clean", help="parse, deduplicate and remove bot accounts")
    _common(p, "input", "out", "time", "bots")

    p = sub.add_parser("summarize", help="per-zone summary table")
    _common(p, "out", "zones")
    p.add_argument("--input", help="raw NDJSON (default: <out>/parsed.ndjson)")
    p.add_argument("--clean", help="cleaned NDJSON (default: <out>/clean.ndjson)")
    p.add_argument("--counts", help="CSV of zone,total_tweets,valid_tweets,users,users_moved counts")

    p = sub.add_parser("homes", help="infer home districts")
    _common(p, "out", "districts", "offset")
    p.add_argument("--clean", help="cleaned NDJSON (default: <out>/clean.ndjson)")

    p = sub.add_parser("moran", help="bivariate Moran's I and LISA clusters")
    _common(p, "out", "districts", "spaces", "offset", "moran", "threads")
    p.add_argument("--clean", help="cleaned NDJSON (default: <out>/clean.ndjson)")
    p.add_argument("--homes", help="homes CSV (default: <out>/homes.csv)")

    p = sub.add_parser("flows", help="visits and raw/normalized OD matrices")
    _common(p, "out", "districts", "spaces", "offset", "flows")
    p.add_argument("--clean", help="cleaned NDJSON (default: <out>/clean.ndjson)")
    p.add_argument("--homes", help="homes CSV (default: <out>/homes.csv)")

    p = sub.add_parser("map", help="flow trees, GeoJSON and SVG maps from OD matrices")
    _common(p, "out", "districts", "spaces", "map")

    p = sub.add_parser("synth", help="generate a synthetic city")
    p.add_argument("--scenario", help="key = value scenario file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=os.environ.get(OUT_ENV, "synth"))

    p = sub.add_parser("run", help="run the full pipeline and write a manifest")
    _common(p, "input", "districts", "spaces", "out", "time", "bots", "moran", "flows", "map", "threads", "zones")
    return parser


def _config(args) -> RunConfig:
    known = RunConfig.__dataclass_fields__
    return RunConfig(**{k: v for k, v in vars(args).items() if k in known and v is not None})


def _records(path) -> list[ingest.TweetRecord]:
    recs, errors = ingest.read_records(path)
    if errors:
        lineno, err = errors[0]
        raise ValueError(f"{path}:{lineno}: {err}")
    return recs


def _default(path, out: Path, name: str) -> Path:
    p = Path(path) if path else out / name
    if not p.exists():
        raise FileNotFoundError(f"missing input {p}")
    return p


def cmd_capture(args) -> int:
    config = capture.CaptureConfig(
        args.endpoint, args.bbox, args.out, args.backoff_initial, args.backoff_max,
        headers=capture.read_headers(args.headers) if args.headers else {},
    )
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    report = capture.stream_capture(config, stop)
    print(json.dumps(vars(report)))
    return 0


def cmd_clean(args, cfg: RunConfig, out: Path) -> int:
    _, clean, report = pipeline.stage_clean(cfg, out)
    print(f"{len(clean)} clean records, {len(report.removed)} accounts removed")
    return 0


def cmd_summarize(args, cfg: RunConfig, out: Path) -> int:
    if args.counts:
        rows = ingest.read_summary_counts(args.counts)
        ingest.write_summary(rows, out / "summary.csv")
    else:
        raw = _records(_default(args.input, out, "parsed.ndjson"))
        clean = _records(_default(args.clean, out, "clean.ndjson"))
        rows = pipeline.stage_summarize(cfg, raw, clean, out)
    for row in rows:
        print(",".join(str(v) for v in row.as_dict().values()))
    return 0


def cmd_homes(args, cfg: RunConfig, out: Path) -> int:
    districts, _ = pipeline.load_geometry(cfg, need_spaces=False)
    locator = pipeline.stage_homes(cfg, _records(_default(args.clean, out, "clean.ndjson")), districts, out)
    print(f"{len(locator.homes_)} of {len(locator.profiles_)} users resolved")
    return 0


def cmd_moran(args, cfg: RunConfig, out: Path) -> int:
    districts, spaces = pipeline.load_geometry(cfg)
    clean = _records(_default(args.clean, out, "clean.ndjson"))
    homes = home.read_homes(_default(args.homes, out, "homes.csv"))
    result, note = pipeline.stage_moran(cfg, clean, districts, spaces, homes, out)
    print(f"global I = {result.global_I!r}" if result is not None else f"Moran's I undefined: {note}")
    return 0


def cmd_flows(args, cfg: RunConfig, out: Path) -> int:
    districts, spaces = pipeline.load_geometry(cfg)
    clean = _records(_default(args.clean, out, "clean.ndjson"))
    homes = home.read_homes(_default(args.homes, out, "homes.csv"))
    b = pipeline.stage_flows(cfg, clean, districts, spaces, homes, out)
    print(f"{len(b.visits_)} visits")
    return 0


def cmd_map(args, cfg: RunConfig, out: Path) -> int:
    districts, spaces = pipeline.load_geometry(cfg)
    raw, normalized = pipeline.read_od(out)
    trees = pipeline.stage_flowmaps(cfg, raw, normalized, districts, spaces, out)
    labels = None
    lisa = out / "lisa.geojson"
    if lisa.exists():
        feats = json.loads(lisa.read_text(encoding="utf-8"))["features"]
        labels = {f["properties"]["district_id"]: f["properties"]["label"] for f in feats} or None
    written = pipeline.stage_render(cfg, trees, districts, spaces, labels, out)
    print("\n".join(written))
    return 0


def cmd_synth(args) -> int:
    scenario = synth.SynthScenario.from_file(args.scenario) if args.scenario else synth.SynthScenario()
    if args.seed is not None:
        scenario = synth.SynthScenario(**{**scenario.__dict__, "seed": args.seed})
    corpus = synth.generate(scenario)
    paths = corpus.write(args.out)
    print(f"{len(corpus.lines)} records -> {paths['records']}")
    return 0


def cmd_run(args, cfg: RunConfig, out: Path) -> int:
    manifest = pipeline.run_pipeline(cfg)
    print(f"{len(manifest['stages'])} stages ok; manifest at {out / 'manifest.json'}")
    return 0


COMMANDS = {
    "clean": ("clean", cmd_clean),
    "summarize": ("summarize", cmd_summarize),
    "homes": ("homes", cmd_homes),
    "moran": ("moran", cmd_moran),
    "flows": ("flows", cmd_flows),
    "map": ("flowmaps", cmd_map),
    "run": ("run", cmd_run),
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "capture":
            return cmd_capture(args)
        if args.command == "synth":
            return cmd_synth(args)
        stage, fn = COMMANDS[args.command]
        cfg = _config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        return fn(args, cfg, out)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except capture.CaptureError as exc:
        print(f"capture: {exc}", file=sys.stderr)
        return pipeline.EXIT_CODES["capture"]
    except (ValueError, OSError, geometry.LoadError) as exc:
        name = "synth" if args.command == "synth" else COMMANDS.get(args.command, (args.command,))[0]
        print(f"error: {name}: {exc}", file=sys.stderr)
        return pipeline.EXIT_CODES.get(name, 1)


if __name__ == "__main__":
    sys.exit(main())
