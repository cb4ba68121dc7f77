import json
import subprocess
import sys

import pytest

from tasaux.cli import EXIT_ARM, EXIT_CONFIG, EXIT_EVAL, EXIT_GRADCHECK, main
from tasaux.model import load_checkpoint

SMALL_DATA = ["--set", "synth.num_videos=5", "--set", "synth.frames_min=100", "--set", "synth.frames_max=110",
              "--set", "synth.segments_min=3", "--set", "synth.segments_max=4"]
SMALL_TRAIN = ["--set", "train.epochs=2", "--set", "train.eval_every=1", "--set", "backbone.layers_per_stage=2",
               "--set", "backbone.hidden_width=6"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(root), "--seed", "1", *SMALL_DATA]) == 0
    return root


def test_gen_data_writes_layout_and_manifest(dataset):
    for rel in ("classes.txt", "splits/train.txt", "splits/test.txt", "manifest.json"):
        assert (dataset / rel).is_file()
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert manifest["seed"] == 1 and manifest["num_train"] + manifest["num_test"] == 5
    assert len(manifest["config_hash"]) == 64


def test_gen_data_is_reproducible(tmp_path, dataset):
    main(["gen-data", "--out", str(tmp_path), "--seed", "1", *SMALL_DATA])
    a = json.loads((tmp_path / "manifest.json").read_text())
    b = json.loads((dataset / "manifest.json").read_text())
    assert a["corpus_fingerprint"] == b["corpus_fingerprint"]


def test_train_writes_artifacts(tmp_path, dataset):
    out = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--out", str(out), *SMALL_TRAIN]) == 0
    runlog = json.loads((out / "runlog.json").read_text())
    assert len(runlog["epochs"]) == 2 and "wall_clock_seconds" not in runlog
    params, cfg, meta = load_checkpoint(out / "model.ckpt")
    assert meta["config_hash"] == runlog["config_hash"]
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0].startswith("# config=") and lines[1] == "epoch,F1@10,F1@25,F1@50,Edit,Acc"
    assert (out / "timing.json").is_file()


def test_train_is_bit_reproducible(tmp_path, dataset):
    for name in ("a", "b"):
        main(["train", "--data", str(dataset), "--out", str(tmp_path / name), *SMALL_TRAIN])
    for f in ("model.ckpt", "runlog.json", "metrics.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_bad_override_exits_with_config_code(tmp_path, dataset, capsys):
    code = main(["train", "--data", str(dataset), "--out", str(tmp_path), "--set", "loss.lambda_Q=1"])
    assert code == EXIT_CONFIG
    assert "lambda_Q" in capsys.readouterr().err


def test_missing_dataset_exits_with_config_code(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def _write_tokens(d, stem, tokens):
    d.mkdir(exist_ok=True)
    (d / f"{stem}.txt").write_text("\n".join(tokens) + "\n")


def test_eval_scores_directories(tmp_path):
    gt, pred = tmp_path / "gt", tmp_path / "pred"
    _write_tokens(gt, "v1", ["a"] * 4 + ["b"] * 4)
    _write_tokens(pred, "v1", ["a"] * 4 + ["b"] * 4)
    _write_tokens(gt, "v2", ["a"] * 4)
    _write_tokens(pred, "v2", ["b"] * 4)
    out = tmp_path / "eval.json"
    assert main(["eval", "--pred-dir", str(pred), "--gt-dir", str(gt), "--out", str(out)]) == 0
    report = json.loads(out.read_text())["report"]
    assert report["acc"] == pytest.approx(8 / 12 * 100)
    assert report["edit"] == pytest.approx(50.0)


def test_eval_reports_missing_stems(tmp_path, capsys):
    gt, pred = tmp_path / "gt", tmp_path / "pred"
    _write_tokens(gt, "v1", ["a"])
    _write_tokens(gt, "v2", ["a"])
    _write_tokens(pred, "v1", ["a"])
    _write_tokens(pred, "v9", ["a"])
    assert main(["eval", "--pred-dir", str(pred), "--gt-dir", str(gt), "--out", str(tmp_path / "e.json")]) == EXIT_EVAL
    err = capsys.readouterr().err
    assert "v2" in err and "v9" in err


def test_eval_length_mismatch(tmp_path):
    gt, pred = tmp_path / "gt", tmp_path / "pred"
    _write_tokens(gt, "v1", ["a", "a"])
    _write_tokens(pred, "v1", ["a"])
    assert main(["eval", "--pred-dir", str(pred), "--gt-dir", str(gt), "--out", str(tmp_path / "e.json")]) == EXIT_EVAL


def test_gradcheck_passes_and_fault_is_caught(capsys):
    small = ["--set", "gradcheck.inputs=2", "--set", "gradcheck.coords=40"]
    assert main(["gradcheck", *small]) == 0
    assert "FAIL" not in capsys.readouterr().out
    assert main(["gradcheck", *small, "--inject-fault"]) == EXIT_GRADCHECK
    assert "FAIL" in capsys.readouterr().out


def test_ablate_unknown_arm(tmp_path):
    assert main(["ablate", "--arms", "baseline,+LX", "--out", str(tmp_path)]) == EXIT_ARM


def test_ablate_outputs(tmp_path, dataset):
    out = tmp_path / "abl"
    assert main(["ablate", "--data", str(dataset), "--arms", "baseline,+both", "--seeds", "0,1",
                 "--out", str(out), *SMALL_TRAIN]) == 0
    doc = json.loads((out / "ablation.json").read_text())
    assert doc["arms"] == ["baseline", "+both"]
    row = doc["rows"][1]
    assert row["config"]["train"]["loss"]["lambda_B"] == 1e-4
    assert set(row["mean"]) == {"F1@10", "F1@25", "F1@50", "Edit", "Acc"}
    csv_lines = (out / "ablation.csv").read_text().splitlines()
    assert csv_lines[0].startswith("# config_hash=") and len(csv_lines) == 4


def test_seed_count_shorthand(tmp_path, dataset):
    out = tmp_path / "abl"
    main(["ablate", "--data", str(dataset), "--arms", "baseline", "--seeds", "2", "--out", str(out), *SMALL_TRAIN])
    assert json.loads((out / "ablation.json").read_text())["seeds"] == [0, 1]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tasaux", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "tasaux" in proc.stdout
