import json

import numpy as np
import pytest

from iclip import checkpoint as ckpt_io
from iclip.cli import main
from iclip.config import RunConfig, merge
from iclip.pipeline import initial_model

TINY = ["--set", "videos=6", "--set", "frames_per_video=3", "--set", "labels=8", "--set", "dim=8"]


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def workspace(tmp_path, capsys):
    fx, out = tmp_path / "fx", tmp_path
    assert run(["synth", "--out", fx, *TINY], capsys)[0] == 0
    assert run(["split", "--fixtures", fx, "--out", out, *TINY], capsys)[0] == 0
    return fx, out / "split.json", tmp_path


def _common(fx, split):
    return ["--fixtures", fx, "--split", split, *TINY]


def test_synth_writes_three_stamped_files(tmp_path, capsys):
    code, out, _ = run(["synth", "--out", tmp_path, "--labels", "6", "--dim", "16"], capsys)
    assert code == 0
    digest = out.strip().splitlines()[-1].split()[-1]
    for name in ("frames.jsonl", "labels.jsonl", "ground_truth.jsonl"):
        head = json.loads((tmp_path / name).read_text().splitlines()[0])
        assert head["version"] == 1 and head["config_digest"] == digest
    labels = json.loads((tmp_path / "labels.jsonl").read_text().splitlines()[1])
    assert len(labels) == 6
    for lab in labels:
        assert len(lab["embedding"]) == 16
        assert abs(np.linalg.norm(lab["embedding"]) - 1) < 1e-12


def test_synth_same_seed_same_digest_and_bytes(tmp_path, capsys):
    a = run(["synth", "--seed", 7, "--out", tmp_path / "a", *TINY], capsys)[1].splitlines()[-1]
    b = run(["synth", "--seed", 7, "--out", tmp_path / "b", *TINY], capsys)[1].splitlines()[-1]
    c = run(["synth", "--seed", 8, "--out", tmp_path / "c", *TINY], capsys)[1].splitlines()[-1]
    assert a == b != c
    assert (tmp_path / "a" / "frames.jsonl").read_bytes() == (tmp_path / "b" / "frames.jsonl").read_bytes()


def test_split_on_24_labels(tmp_path, capsys):
    run(["synth", "--out", tmp_path, "--set", "videos=2"], capsys)
    code, out, _ = run(["split", "--fixtures", tmp_path, "--out", tmp_path, "--set", "videos=2"], capsys)
    split = json.loads((tmp_path / "split.json").read_text())
    assert code == 0 and (len(split["train"]), len(split["test"])) == (18, 6)
    assert "config_digest" in split and "split_id" in split


def test_train_zero_iterations_equals_initialization(workspace, capsys):
    fx, split, root = workspace
    code, _, _ = run(["train", *_common(fx, split), "--iterations", 0, "--set", "warmup_iterations=0",
                      "--out", root / "run"], capsys)
    assert code == 0
    ckpt = ckpt_io.load(root / "run" / "checkpoint.json")
    cfg = merge(RunConfig(), {"labels": 8, "dim": 8, "videos": 6, "frames_per_video": 3,
                              "iterations": 0, "warmup_iterations": 0})
    init = initial_model(cfg, 8)
    for k, v in init.params.items():
        np.testing.assert_array_equal(ckpt.model.params[k], v)


def test_train_eval_and_baseline(workspace, capsys):
    fx, split, root = workspace
    args = [*_common(fx, split), "--set", "iterations=6", "--set", "warmup_iterations=2"]
    assert run(["train", *args, "--out", root / "run"], capsys)[0] == 0
    trace = (root / "run" / "loss.csv").read_text().splitlines()
    assert trace[0].startswith("# config_digest=") and trace[1] == "step,lr,loss" and len(trace) == 8
    code, out, _ = run(["eval", *args, "--checkpoint", root / "run" / "checkpoint.json", "--out", root / "run"],
                       capsys)
    assert code == 0 and "frame mAP" in out
    assert run(["eval", *args, "--baseline", "--out", root / "run"], capsys)[0] == 0
    model = json.loads((root / "run" / "report_model.json").read_text())
    base = json.loads((root / "run" / "report_baseline.json").read_text())
    assert model["split_id"] == base["split_id"]
    assert model["config_digest"] != base["config_digest"]
    head = json.loads((root / "run" / "detections_model.jsonl").read_text().splitlines()[0])
    assert head["config_digest"] == model["config_digest"]


def test_reruns_are_byte_identical(workspace, capsys):
    fx, split, root = workspace
    args = [*_common(fx, split), "--set", "iterations=4", "--set", "warmup_iterations=1"]
    for name in ("r1", "r2"):
        run(["train", *args, "--out", root / name], capsys)
        run(["eval", *args, "--checkpoint", root / name / "checkpoint.json", "--out", root / name], capsys)
    for f in ("checkpoint.json", "loss.csv", "detections_model.jsonl", "report_model.json"):
        assert (root / "r1" / f).read_bytes() == (root / "r2" / f).read_bytes(), f


def test_gradcheck_passes_and_fault_fails(capsys):
    code, out, _ = run(["gradcheck", "--seeds", 2], capsys)
    assert code == 0 and "FAIL" not in out
    code, out, err = run(["gradcheck", "--seeds", 1, "--inject-fault", "softmax_rows"], capsys)
    assert code == 2
    rows = {line.split()[0]: line.split()[-1] for line in out.splitlines()[1:-1]}
    assert rows["softmax_rows"] == "FAIL" and rows["matmul"] == "pass"


def test_ablate_dry_run(capsys):
    code, out, _ = run(["ablate", "--dry-run"], capsys)
    assert code == 0
    assert "20 rows, 18 distinct trainings" in out
    code, out, _ = run(["ablate", "--dry-run", "--mode", "units"], capsys)
    assert "8 rows, 8 distinct trainings" in out


def test_exit_codes(tmp_path, capsys):
    assert run(["train", "--set", "tau=-1"], capsys)[0] == 1
    assert run(["train", "--set", "nonsense"], capsys)[0] == 1
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1
    code, _, err = run(["split", "--fixtures", tmp_path / "missing"], capsys)
    assert code == 3 and "missing" in err
    assert run(["train", "--fixtures", tmp_path], capsys)[0] == 1  # no split given
    (tmp_path / "cfg.json").write_text("{bad")
    code, _, err = run(["synth", "--config", tmp_path / "cfg.json"], capsys)
    assert code == 1 and "cfg.json" in err
