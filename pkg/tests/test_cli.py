import json
import subprocess
import sys

import numpy as np
import pytest

from timeconv.cli import main
from timeconv.data import DatasetArchive


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "--per-class", 3, "--seed", 1, "--out", d / "s.tcvx") == 0
    assert run("train", "--arch", "timeconv_xception", "--data", d / "s.tcvx", "--epochs", 1,
               "--batch-size", 8, "--no-augment", "--seed", 1, "--out", d / "m.tcwt") == 0
    return d


def test_synth_report(workdir):
    report = json.loads((workdir / "s.tcvx.report.json").read_text())
    assert report["total"] == 21 and report["seed"] == 1
    assert len(DatasetArchive.load(workdir / "s.tcvx")) == 21


def test_train_outputs(workdir):
    report = json.loads((workdir / "m.tcwt.report.json").read_text())
    assert report["arch"] == "timeconv_xception" and report["params"] == 57_239
    assert (workdir / "m.tcwt.metrics.tsv").read_text().startswith("epoch\tlr")


def test_eval(workdir, capsys):
    assert run("eval", "--model", workdir / "m.tcwt", "--data", workdir / "s.tcvx", "--split", "all",
               "--report", workdir / "e.json") == 0
    report = json.loads((workdir / "e.json").read_text())
    assert sum(report["support"]) == 21 and report["seed"] == 1
    assert "accuracy" in capsys.readouterr().out


def test_bench_and_stream(workdir):
    assert run("bench", "--model", workdir / "m.tcwt", "--runs", 3, "--warmup", 1) == 0
    bench = json.loads((workdir / "m.tcwt.bench.json").read_text())
    assert bench["runs"] == 3 and len(bench["latencies_ms"]) == 3
    np.save(workdir / "frames.npy", (np.random.default_rng(0).random((9, 60, 60)) * 255).astype(np.uint8))
    assert run("stream", "--model", workdir / "m.tcwt", "--frames", workdir / "frames.npy",
               "--report", workdir / "st.json") == 0
    stream = json.loads((workdir / "st.json").read_text())
    assert stream["frames"] == 9 and len(stream["predictions"]) == 5


def test_stream_synthetic_frames(tmp_path):
    assert run("stream", "--arch", "xception2d", "--synthetic-frames", 12, "--report", tmp_path / "r.json") == 0
    assert json.loads((tmp_path / "r.json").read_text())["frames"] == 12


def test_grad_check_cli(tmp_path):
    assert run("grad-check", "--layers", "dense", "relu", "--seeds", 2, "--report", tmp_path / "g.json") == 0
    report = json.loads((tmp_path / "g.json").read_text())
    assert set(report["max_rel_error"]) == {"dense", "relu"} and report["passed"]
    assert run("grad-check", "--layers", "nonsense", "--report", tmp_path / "x.json") == 1


def test_build_dataset_cli(tmp_path):
    np.save(tmp_path / "c.npy", np.zeros((7, 30, 30), np.uint8))
    (tmp_path / "m.json").write_text(json.dumps({"clips": [{"id": "c", "frames": "c.npy", "label": "sad"}]}))
    assert run("build-dataset", "--manifest", tmp_path / "m.json", "--out", tmp_path / "d.tcvx") == 0
    assert json.loads((tmp_path / "d.tcvx.report.json").read_text())["total"] == 3
    (tmp_path / "bad.json").write_text(json.dumps({"clips": [{"id": "c", "frames": "c.npy", "label": "contempt"}]}))
    assert run("build-dataset", "--manifest", tmp_path / "bad.json", "--out", tmp_path / "e.tcvx") == 1


def test_handled_errors(tmp_path, capsys):
    assert run("eval", "--model", tmp_path / "missing.tcwt", "--data", tmp_path / "missing.tcvx") == 1
    (tmp_path / "junk.tcwt").write_bytes(b"not a checkpoint at all, definitely not")
    assert run("bench", "--model", tmp_path / "junk.tcwt", "--runs", 1) == 1
    assert "error" in capsys.readouterr().err


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        run("train", "--arch", "nope", "--data", "x", "--out", "y")
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        run()
    assert exc.value.code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "timeconv.cli", "bench"], capture_output=True, text=True)
    assert proc.returncode == 2 and "one of the arguments" in proc.stderr
