import json
import subprocess
import sys

import pytest

from adlink.cli import main
from adlink.pipeline import ConfigError, PipelineOutputs, load_config

SMALL_SYNTH = """
n_entities = 120
posts_per_entity = [4, 10]
ads_per_entity = [10, 40]
attach_probability = 0.05
"""


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "synth.toml").write_text(SMALL_SYNTH)
    assert main(["synth", "--config", str(d / "synth.toml"), "--out", str(d / "ads.jsonl"),
                 "--truth", str(d / "truth.tsv")]) == 0
    return d


def write_config(d, out="out", **extra):
    body = f"""
seed = 3
threads = 1

[paths]
input = "ads.jsonl"
gazetteer = "builtin"
overlay = "builtin"
out_dir = "{out}"

[classifier]
n_pos = 200
n_neg = 1800

[report]
region = "TX"
"""
    for k, v in extra.items():
        body += f"\n{k}\n{v}\n"
    (d / "run.toml").write_text(body)
    return d / "run.toml"


def test_run_produces_every_artifact(small):
    cfg = write_config(small)
    assert main(["--config", str(cfg), "run"]) == 0
    out = PipelineOutputs(small / "out")
    for name in ("dataset", "ingest_summary", "locations", "unmatched", "classifier", "pairs", "curve", "assignment", "metrics", "timings", "summary", "details"):
        assert getattr(out, name).exists(), name
    assert (out.graph / "graph.json").exists()
    m = json.loads(out.metrics.read_text())
    assert m["post_coverage"] == 1.0


def test_identical_runs_identical_files(small):
    cfg = write_config(small)
    assert main(["--config", str(cfg), "--threads", "1", "run", "--out-dir", str(small / "a")]) == 0
    assert main(["--config", str(cfg), "--threads", "3", "run", "--out-dir", str(small / "b")]) == 0
    a, b = PipelineOutputs(small / "a"), PipelineOutputs(small / "b")
    for name in ("assignment", "metrics", "summary", "details", "classifier", "pairs"):
        assert getattr(a, name).read_bytes() == getattr(b, name).read_bytes(), name


def test_missing_gazetteer_fails_validation(small, capsys):
    cfg = small / "bad.toml"
    cfg.write_text('[paths]\ninput = "ads.jsonl"\ngazetteer = "nope.csv"\nout_dir = "never"\n')
    assert main(["--config", str(cfg), "run"]) == 2
    assert "nope.csv" in capsys.readouterr().err
    assert not (small / "never").exists()
    cfg.write_text('[paths]\ninput = "ads.jsonl"\n')
    with pytest.raises(ConfigError, match="gazetteer"):
        load_config(cfg)


def test_unknown_config_key(small):
    cfg = small / "typo.toml"
    cfg.write_text('[paths]\ninput = "ads.jsonl"\ngazetteer = "builtin"\n[filter]\ndelat = 0.5\n')
    assert main(["--config", str(cfg), "run"]) == 2


def test_stage_by_stage(small):
    d = small
    s = d / "stages"
    s.mkdir()
    assert main(["ingest", "--input", str(d / "ads.jsonl"), "--out", str(s / "ds.jsonl"),
                 "--summary", str(s / "sum.tsv")]) == 0
    assert main(["locations", "--dataset", str(s / "ds.jsonl"), "--gazetteer", "builtin", "--overlay", "builtin",
                 "--report", str(s / "unmatched.tsv"), "--out", str(s / "loc.tsv")]) == 0
    assert main(["build-graph", "--dataset", str(s / "ds.jsonl"), "--out", str(s / "graph")]) == 0
    assert main(["--seed", "1", "train-classifier", "--graph", str(s / "graph"), "--out", str(s / "clf.txt"),
                 "--n-pos", "100", "--n-neg", "900", "--curve", str(s / "curve.tsv")]) == 0
    assert main(["filter-gc", "--graph", str(s / "graph"), "--classifier", str(s / "clf.txt"),
                 "--out", str(s / "assign.tsv"), "--metrics", str(s / "m.json")]) == 0
    assert main(["bc-filter", "--graph", str(s / "graph"), "--out", str(s / "removed.tsv"),
                 "--metrics", str(s / "bc.json")]) == 0
    assert main(["benchmark", "--graph", str(s / "graph"), "--classifier", str(s / "clf.txt"),
                 "--percentiles", "0.9,0.99", "--out", str(s / "bench.tsv")]) == 0
    assert len((s / "bench.tsv").read_text().splitlines()) == 4
    assert main(["report", "summary", "--assignment", str(s / "assign.tsv"), "--dataset", str(s / "ds.jsonl"),
                 "--locations", str(s / "loc.tsv"), "--region", "TX", "--window-days", "0",
                 "--out", str(s / "summary.tsv"), "--json", str(s / "summary.json")]) == 0
    rows = json.loads((s / "summary.json").read_text())
    assert rows
    cid = rows[0]["component_id"]
    assert main(["report", "detail", "--assignment", str(s / "assign.tsv"), "--dataset", str(s / "ds.jsonl"),
                 "--locations", str(s / "loc.tsv"), "--component", str(cid), "--window-days", "0",
                 "--out", str(s / "detail.json")]) == 0
    block = json.loads((s / "detail.json").read_text())[0]
    assert sum(sum(r.values()) for r in block["matrix"].values()) == rows[0]["ad_count"]


def test_stage_failure_exit_code(small, capsys):
    assert main(["build-graph", "--dataset", str(small / "missing.jsonl"), "--out", str(small / "g2")]) == 3
    assert "build-graph" in capsys.readouterr().err


def test_bad_region_is_stage_failure(small, tmp_path, capsys):
    cfg = write_config(small, out=str(tmp_path / "r"))
    cfg.write_text(cfg.read_text().replace('region = "TX"', 'region = "QQ"'))
    assert main(["--config", str(cfg), "run"]) == 3
    err = capsys.readouterr().err
    assert "report" in err and "valid state codes" in err


def test_timeout_exit_code(small):
    s = small / "stages"
    if not (s / "graph").exists():
        pytest.skip("stage test did not run")
    assert main(["bc-filter", "--graph", str(s / "graph"), "--fraction", "1.0", "--time-limit", "0",
                 "--out", str(small / "timeout.tsv")]) == 4


def test_console_entry_point(small, tmp_path):
    r = subprocess.run([sys.executable, "-m", "adlink.cli", "--seed", "2", "synth", "--config",
                        str(small / "synth.toml"), "--out", str(tmp_path / "x.jsonl"), "--truth",
                        str(tmp_path / "t.tsv")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "x.jsonl").stat().st_size > 0
