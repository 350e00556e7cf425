import csv
import json
import subprocess
import sys

import pytest

from conftest import DATA
from mobiflow.cli import main
from mobiflow.pipeline import EXIT_CODES, STAGES, strip_timings


@pytest.fixture(scope="module")
def city(tmp_path_factory):
    root = tmp_path_factory.mktemp("city")
    (root / "scenario.txt").write_text("seed = 3\nn_users = 150\nn_bots = 1\nbot_tweets = 260\n")
    assert main(["synth", "--scenario", str(root / "scenario.txt"), "--out", str(root / "synth")]) == 0
    return root / "synth"


def _run_args(city, out, *extra):
    return ["run", "--input", str(city / "records.ndjson"), "--districts", str(city / "districts.geojson"),
            "--spaces", str(city / "spaces.geojson"), "--out", str(out), *extra]


def test_full_run_writes_manifest(city, tmp_path):
    assert main(_run_args(city, tmp_path / "out", "--permutations", "99")) == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert [s["name"] for s in manifest["stages"]] == list(STAGES)
    assert manifest["status"] == "ok" and manifest["partial"] is False
    for rel in ("summary.csv", "homes.csv", "moran.csv", "od_raw.csv", "od_normalized.csv", "maps/lisa.svg"):
        assert rel in manifest["files"]
    assert all(s["outputs"] for s in manifest["stages"])


def test_rerun_same_dir_identical_manifest(city, tmp_path):
    out = tmp_path / "out"
    main(_run_args(city, out, "--permutations", "99"))
    first = json.loads((out / "manifest.json").read_text())
    main(_run_args(city, out, "--permutations", "99"))
    second = json.loads((out / "manifest.json").read_text())
    assert strip_timings(first) == strip_timings(second)


def test_missing_districts_file(city, tmp_path, capsys):
    args = _run_args(city, tmp_path / "out")
    args[args.index("--districts") + 1] = str(tmp_path / "nope.geojson")
    assert main(args) == EXIT_CODES["geometry"]
    assert "geometry: load error" in capsys.readouterr().err


def test_map_without_flows(city, tmp_path, capsys):
    code = main(["map", "--districts", str(city / "districts.geojson"), "--spaces", str(city / "spaces.geojson"),
                 "--out", str(tmp_path)])
    assert code == EXIT_CODES["flowmaps"]
    assert "missing OD matrix" in capsys.readouterr().err


def test_stagewise_subcommands_match_full_run(city, tmp_path):
    full, step = tmp_path / "full", tmp_path / "step"
    main(_run_args(city, full, "--permutations", "99"))
    geo = ["--districts", str(city / "districts.geojson")]
    both = geo + ["--spaces", str(city / "spaces.geojson")]
    assert main(["clean", "--input", str(city / "records.ndjson"), "--out", str(step)]) == 0
    assert main(["summarize", "--out", str(step)]) == 0
    assert main(["homes", *geo, "--out", str(step)]) == 0
    assert main(["moran", *both, "--permutations", "99", "--out", str(step)]) == 0
    assert main(["flows", *both, "--out", str(step)]) == 0
    assert main(["map", *both, "--out", str(step)]) == 0
    for rel in ("clean.ndjson", "bots.csv", "summary.csv", "homes.csv", "moran.csv", "od_raw.csv",
                "od_normalized.csv", "maps/lisa.svg"):
        assert (full / rel).read_bytes() == (step / rel).read_bytes(), rel


def test_moran_permutation_granularity(city, tmp_path):
    out = tmp_path / "out"
    main(_run_args(city, out, "--permutations", "99"))
    with (out / "moran.csv").open() as fh:
        ps = [float(row["pseudo_p"]) for row in csv.DictReader(fh)]
    assert all(abs(p * 100 - round(p * 100)) < 1e-9 and p >= 0.01 for p in ps)
    assert "P 99" in (out / "moran_global.txt").read_text()


def test_summarize_counts_table(tmp_path, capsys):
    assert main(["summarize", "--counts", str(DATA / "table1_counts.csv"), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "summary.csv").open()))
    assert [(r["valid_pct"], r["moved_pct"]) for r in rows] == [("72.02", "54.90"), ("72.04", "54.99"),
                                                                ("80.78", "67.96")]


def test_clean_missing_input(tmp_path, capsys):
    assert main(["clean", "--input", str(tmp_path / "none.ndjson"), "--out", str(tmp_path)]) == EXIT_CODES["clean"]
    assert "input not found" in capsys.readouterr().err


def test_unknown_flag_usage_error():
    proc = subprocess.run([sys.executable, "-m", "mobiflow", "run", "--bogus"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr


def test_palette_overflow_is_render_error(tmp_path, capsys):
    (tmp_path / "s.txt").write_text("seed = 1\nn_spaces = 12\nn_users = 40\n")
    main(["synth", "--scenario", str(tmp_path / "s.txt"), "--out", str(tmp_path / "c")])
    c = tmp_path / "c"
    layer = json.loads((c / "spaces.geojson").read_text())
    for feat in layer["features"]:
        feat["properties"]["category"] = "Park"
    (c / "spaces.geojson").write_text(json.dumps(layer))
    code = main(_run_args(c, tmp_path / "out", "--permutations", "99", "--palette", "Set1"))
    assert code == EXIT_CODES["render"]
    assert "no colour left for" in capsys.readouterr().err
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["partial"] and manifest["stages"][-1] == {**manifest["stages"][-1], "name": "render",
                                                             "status": "failed"}


def test_out_env_default(city, tmp_path, monkeypatch):
    monkeypatch.setenv("MOBIFLOW_OUT", str(tmp_path / "envout"))
    assert main(["clean", "--input", str(city / "records.ndjson")]) == 0
    assert (tmp_path / "envout" / "clean.ndjson").exists()
