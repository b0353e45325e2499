import json
import shutil
import subprocess
import sys

import pytest

from trajcurate.cli import main
from trajcurate.sampler import read_manifest

PIPELINE_ARTIFACTS = ("segments.json", "weights.json", "samples.jsonl", "run_manifest.json")


@pytest.fixture(scope="module")
def world_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("world")
    assert main(["generate", "--output", str(out), "--num-tasks", "3", "--per-task", "8", "--world-seed", "4"]) == 0
    return out


def _data(world_dir):
    return ["--target", str(world_dir / "target"), "--prior", str(world_dir / "prior")]


def _fast():
    return ["--k", "10", "--num-batches", "20"]


def _snapshot(path):
    return {str(p.relative_to(path)): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_generate_layout(world_dir):
    assert (world_dir / "target" / "manifest.json").exists()
    labels = json.loads((world_dir / "labels.json").read_text())
    assert len(labels) == 5 + 24


def test_pipeline_artifacts_and_rerun_bytes(world_dir, tmp_path):
    for name in ("a", "b"):
        assert main(["pipeline", *_data(world_dir), *_fast(), "--output", str(tmp_path / name)]) == 0
    a, b = _snapshot(tmp_path / "a"), _snapshot(tmp_path / "b")
    for name in PIPELINE_ARTIFACTS:
        assert name in a
    assert {"retrieved/visual.jsonl", "retrieved/motion.jsonl", "retrieved/language.jsonl"} <= set(a)
    assert a == b
    manifest = json.loads(a["run_manifest.json"])
    assert manifest["config"]["k"] == 10
    assert set(manifest["artifacts"]) >= set(PIPELINE_ARTIFACTS) - {"run_manifest.json"}


def test_thread_flag_does_not_change_artifacts(world_dir, tmp_path):
    for t in ("1", "3"):
        assert main(["pipeline", *_data(world_dir), *_fast(), "--threads", t, "--output", str(tmp_path / t)]) == 0
    assert _snapshot(tmp_path / "1") == _snapshot(tmp_path / "3")


def test_missing_dataset_is_config_error(tmp_path, capsys):
    code = main(["pipeline", "--target", str(tmp_path / "nope"), "--prior", str(tmp_path), "--output", str(tmp_path)])
    assert code == 2
    assert "target" in capsys.readouterr().err


def test_corrupt_dataset_is_data_error(world_dir, tmp_path):
    bad = tmp_path / "target"
    shutil.copytree(world_dir / "target", bad)
    rec = bad / "traj_000000.bin"
    rec.write_bytes(rec.read_bytes()[:-7])
    code = main(["pipeline", "--target", str(bad), "--prior", str(world_dir / "prior"), "--output", str(tmp_path / "o")])
    assert code == 3


def test_bad_flag_values_are_config_errors(world_dir, tmp_path):
    assert main(["pipeline", *_data(world_dir), "--k", "0", "--output", str(tmp_path)]) == 2
    assert main(["pipeline", *_data(world_dir), "--scorer", "magic", "--output", str(tmp_path)]) == 2


def test_stagewise_commands_match_pipeline(world_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": 10, "num_batches": 20}))
    common = ["--config", str(cfg)]
    seg = tmp_path / "segments.json"
    assert main(["segment", *common, "--target", str(world_dir / "target"), "--output", str(seg)]) == 0
    assert main(["retrieve", *common, *_data(world_dir), "--segments", str(seg),
                 "--output", str(tmp_path / "retrieved")]) == 0
    assert main(["weigh", *common, *_data(world_dir), "--retrieved", str(tmp_path / "retrieved"),
                 "--output", str(tmp_path / "weights.json")]) == 0
    assert main(["sample", *common, "--target", str(world_dir / "target"),
                 "--retrieved", str(tmp_path / "retrieved"), "--weights", str(tmp_path / "weights.json"),
                 "--output", str(tmp_path / "samples.jsonl")]) == 0
    assert main(["pipeline", *common, *_data(world_dir), "--output", str(tmp_path / "full")]) == 0
    full = tmp_path / "full"
    assert seg.read_bytes() == (full / "segments.json").read_bytes()
    assert (tmp_path / "weights.json").read_bytes() == (full / "weights.json").read_bytes()
    for f in (full / "retrieved").iterdir():
        assert (tmp_path / "retrieved" / f.name).read_bytes() == f.read_bytes()
    assert (tmp_path / "samples.jsonl").read_bytes() == (full / "samples.jsonl").read_bytes()


def test_segment_to_stdout(world_dir, capsys):
    assert main(["segment", "--target", str(world_dir / "target"), "--preset", "real"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["segments"]


def test_external_scores_and_temperature(world_dir, tmp_path):
    scores = tmp_path / "scores.json"
    scores.write_text(json.dumps({"visual": -10.0, "motion": -12.0, "language": None}))
    out = tmp_path / "run"
    assert main(["pipeline", *_data(world_dir), *_fast(), "--scorer", f"external:{scores}", "--tau", "2",
                 "--output", str(out)]) == 0
    doc = json.loads((out / "weights.json").read_text())
    assert doc["weights"]["language"] == 0.0
    e = 2.718281828459045  # weights are softmax(-10/2, -12/2) over the two finite scores
    assert doc["weights"]["visual"] == pytest.approx(1 / (1 + e ** -1), rel=1e-12)


def test_uniform_sampling_flag(world_dir, tmp_path):
    out = tmp_path / "run"
    assert main(["pipeline", *_data(world_dir), *_fast(), "--uniform", "--output", str(out)]) == 0
    header, _ = read_manifest(out / "samples.jsonl")
    assert set(header["weights"].values()) == {1 / 3}


def test_config_file_and_preset(world_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"preset": "real", "k": 10, "num_batches": 5, "language": False}))
    out = tmp_path / "run"
    assert main(["pipeline", "--config", str(cfg), *_data(world_dir), "--output", str(out)]) == 0
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["config"]["temperature"] == 10.0 and manifest["config"]["epsilon"] == 2e-3
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["pipeline", "--config", str(cfg), *_data(world_dir), "--output", str(out)]) == 2


def test_bench_prints_summary(tmp_path, capsys):
    code = main(["bench", "--output", str(tmp_path), "--num-tasks", "3", "--per-task", "8", "--k", "10",
                 "--num-batches", "10", "--language-dim", "0"])
    assert code == 0
    assert "weight argmax" in capsys.readouterr().out
    assert (tmp_path / "eval_report.json").exists()


def test_stage_logs_are_json(world_dir, tmp_path):
    log = tmp_path / "log.jsonl"
    assert main(["pipeline", *_data(world_dir), *_fast(), "-v", "--log-file", str(log),
                 "--output", str(tmp_path / "run")]) == 0
    events = [json.loads(line) for line in log.read_text().splitlines()]
    stages = {e.get("stage") for e in events}
    assert {"load", "segment", "retrieve", "weigh", "sample"} <= stages
    assert any("seconds" in e for e in events)


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "trajcurate.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "pipeline" in res.stdout
