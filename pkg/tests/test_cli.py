import json
import subprocess
import sys

import numpy as np
import pytest

from padaction.cli import run

SMALL_BENCH = {"benchmark": {"tiers": {"opaque": {"opacity": [1.0, 1.0], "scale": [0.8, 1.2], "jpeg_quality": None},
                                       "mild": {"opacity": [0.8, 1.0], "scale": [0.8, 1.2], "jpeg_quality": [90, 100]}},
                             "videos_per_cell": 1, "n_frames": 4, "frame_size": [480, 270]}}


def tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def bench_cfg(tmp_path):
    path = tmp_path / "bench.json"
    path.write_text(json.dumps(SMALL_BENCH))
    return path


def test_usage_errors(capsys):
    assert run([]) == 1
    assert run(["no-such-command"]) == 1
    assert run(["replay-check", "--bogus"]) == 1
    assert run(["replay-check", "--jobs", "0"]) == 1
    assert run(["rollout", "--policy", "model", "--out", "x"]) == 1


def test_data_errors_name_the_file(tmp_path, capsys):
    assert run(["locate", "--frames", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2
    assert "missing" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["replay-check", "--config", str(bad), "--steps", "5", "--pauses", "0"]) == 2
    assert "bad.json" in capsys.readouterr().err
    track = tmp_path / "t.padtrack"
    track.write_text("PADTRACK v1 v 60 x kind=raw\n0101 5 5 5 5\n")
    assert run(["filter", str(track), "--out", str(tmp_path / "f")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_numeric_failure_exit_code(tmp_path):
    obs = np.zeros((4, 64, 64, 3), np.uint8)
    chunks = np.full((4, 16, 20), np.nan, np.float32)
    np.savez(tmp_path / "d.npz", obs=obs, chunks=chunks)
    assert run(["train", "--data", str(tmp_path / "d.npz"), "--steps", "3", "--out", str(tmp_path / "t")]) == 3


def test_synth_gen_twice_identical(tmp_path, bench_cfg):
    for name in ("a", "b"):
        assert run(["synth-gen", "--config", str(bench_cfg), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
    assert a == b
    assert "manifest.json" in a and "opaque-generic-000/frames/frame_000003.png" in a
    summary = json.loads(a["summary.json"])
    assert summary["seed"] == 7 and summary["command"] == "synth-gen" and "wall_time_s" not in summary


def test_pipeline_locate_parse_filter(tmp_path, bench_cfg):
    assert run(["synth-gen", "--config", str(bench_cfg), "--seed", "1", "--out", str(tmp_path / "b")]) == 0
    vid = tmp_path / "b" / "mild-xbox-like-000"
    assert run(["locate", "--frames", str(vid / "frames"), "--out", str(tmp_path / "loc")]) == 0
    placement = json.loads((tmp_path / "loc" / "placement.json").read_text())
    assert placement["found"] and placement["template"] == "xbox-like"
    assert run(["parse", "--frames", str(vid / "frames"), "--placement", str(tmp_path / "loc" / "placement.json"),
                "--video-id", "v", "--out", str(tmp_path / "p")]) == 0
    assert {"raw.padtrack", "normalized.padtrack", "parse_report.json", "centroids.npy"} <= set(tree(tmp_path / "p"))
    truth = (tmp_path / "b" / "mild-xbox-like-000" / "truth.padtrack").read_text().splitlines()[1:]
    parsed = (tmp_path / "p" / "raw.padtrack").read_text().splitlines()[1:]
    assert [line.split()[0] for line in parsed] == [line.split()[0] for line in truth]
    assert run(["filter", str(tmp_path / "p" / "raw.padtrack"), "--segment-len", "2", "--out", str(tmp_path / "f")]) == 0
    assert len((tmp_path / "f" / "segments.jsonl").read_text().splitlines()) == 2


def test_rollout_oracle_and_random(tmp_path, capsys):
    assert run(["rollout", "--policy", "oracle", "--episodes", "2", "--out", str(tmp_path / "o"), "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["metrics"]["success_rate"] == 1.0 and "wall_time_s" in out
    assert run(["rollout", "--policy", "random", "--episodes", "2", "--out", str(tmp_path / "r")]) == 0


def test_train_then_rollout(tmp_path):
    assert run(["train", "--collect", "64", "--steps", "6", "--seed", "2", "--out", str(tmp_path / "t")]) == 0
    log = (tmp_path / "t" / "training_log.jsonl").read_text().splitlines()
    assert len(log) == 6
    assert run(["rollout", "--checkpoint", str(tmp_path / "t" / "checkpoint.bin"), "--episodes", "1",
                "--out", str(tmp_path / "r")]) == 0
    env = tmp_path / "env.json"
    env.write_text(json.dumps({"resolution": 32}))
    assert run(["rollout", "--checkpoint", str(tmp_path / "t" / "checkpoint.bin"), "--env-config", str(env),
                "--episodes", "1", "--out", str(tmp_path / "r2")]) == 2


def test_replay_check_command_line(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "padaction.cli", "replay-check", "--steps", "10000",
                           "--pauses", "1000", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip() == "divergence: none"
    assert json.loads((tmp_path / "summary.json").read_text())["metrics"]["first_divergence"] is None
