"""End-to-end acceptance checks, one test per criterion.

Each test prints (and records for the terminal summary) a single
``criterion N [PASS|FAIL] ...`` line before asserting.
"""

import json
import math
import time

import numpy as np
import pytest

from helpers import moving_average, oracle_ap, overfit_run, random_ap_instance, record
from iclip import checkpoint as ckpt_io
from iclip.boxes import iou
from iclip.checks import TOLERANCE, run_checks
from iclip.cli import main
from iclip.config import RunConfig, merge
from iclip.evaluation import frame_ap
from iclip.features import MemoryWindow, SynthConfig, memory_contexts, synthesize
from iclip.inference import run_inference, score_frame
from iclip.interaction import StackConfig, cross_block, init_stack_params, person_block
from iclip.model import ICLIPModel
from iclip.pipeline import Fixtures, evaluate_model, train_model
from iclip.prompting import PromptConfig, init_prompt_params, prompt_labels
from iclip.tensor import Tensor
from iclip.training import contrastive_loss, make_split


def test_criterion_1_gradient_fidelity():
    start = time.perf_counter()
    rows = run_checks(range(20))
    elapsed = time.perf_counter() - start
    worst_name, worst = max(rows, key=lambda r: r[1])
    ok = worst < TOLERANCE and elapsed < 30 and any(n.startswith("end_to_end") for n, _ in rows)
    record(1, "gradient fidelity", ok,
           f"{len(rows)} checks x 20 seeds, worst {worst:.2e} ({worst_name}) < {TOLERANCE:g}, {elapsed:.1f}s < 30s")
    assert ok


def test_criterion_2_zero_init_reductions():
    d = 16
    rng = np.random.default_rng(0)
    stack_params = {k: Tensor(v) for k, v in
                    init_stack_params(d, StackConfig(), rng, "zeros").items()}
    persons = Tensor(rng.normal(size=(3, d)))
    identity = np.array_equal(person_block(persons, stack_params).data, persons.data) and all(
        np.array_equal(cross_block(persons, Tensor(rng.normal(size=(k, d))), stack_params, b).data, persons.data)
        for b, k in (("object", 2), ("context", 1), ("memory", 5)))

    cfg = PromptConfig()
    prompt_params = {k: Tensor(v) for k, v in init_prompt_params(d, cfg, rng, "zeros").items()}
    labels = rng.normal(size=(6, d))
    worst_cos = 0.0
    for out in prompt_labels(Tensor(labels), persons, prompt_params, cfg):
        cos = (out.data * labels).sum(1) / (np.linalg.norm(out.data, axis=1) * np.linalg.norm(labels, axis=1))
        worst_cos = max(worst_cos, float(np.max(np.abs(cos - 1))))

    data = synthesize(SynthConfig(seed=0))
    model = ICLIPModel.initialize(data.vocabulary.dim, mode="zeros")
    unit = data.vocabulary.matrix() / np.linalg.norm(data.vocabulary.matrix(), axis=1, keepdims=True)
    videos = {}
    for f in data.frames:
        videos.setdefault(f.video_id, {})[f.frame_idx] = f
    agree = total = 0
    for frame in data.frames:
        mem = memory_contexts(videos[frame.video_id], frame.frame_idx, MemoryWindow())
        scores = np.array([r.score for r in score_frame(frame, mem, model, data.vocabulary)])
        got = scores.reshape(len(frame.persons), -1).argmax(1)
        pooled = np.stack([(p.feat + frame.context) / 2 for p in frame.persons])
        agree += int(np.sum(got == (pooled @ unit.T).argmax(1)))
        total += len(frame.persons)
    ok = identity and worst_cos <= 1e-12 and agree == total
    record(2, "zero-init reductions", ok,
           f"blocks identity={identity}, max |cos-1|={worst_cos:.1e}, argmax agreement {agree}/{total}")
    assert ok


def _sims_loss(sims, targets, tau):
    sims = np.asarray(sims, dtype=float)
    n, l = sims.shape
    feats, sets = np.zeros((n, l + 1)), []
    feats[:, 0] = 1
    for i in range(n):
        lab = np.zeros((l, l + 1))
        lab[:, 0] = sims[i]
        lab[np.arange(l), np.arange(l) + 1] = np.sqrt(1 - sims[i] ** 2)
        sets.append(Tensor(lab))
    return contrastive_loss(Tensor(feats), sets, targets, tau).item()


def test_criterion_3_loss_exactness():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        n, l = int(rng.integers(1, 6)), int(rng.integers(2, 10))
        loss = _sims_loss(np.full((n, l), rng.uniform(-0.9, 0.9)), rng.integers(l, size=n).tolist(),
                          float(rng.uniform(0.01, 2)))
        worst = max(worst, abs(loss - math.log(l)))
    hand = abs(_sims_loss([[1.0, 0.0]], [0], 1.0) - math.log(1 + math.exp(-1)))
    ok = worst <= 1e-12 and hand <= 1e-9
    record(3, "loss exactness", ok, f"uniform |loss - ln L| max {worst:.1e}, hand case error {hand:.1e}")
    assert ok


def test_criterion_4_evaluation_oracle():
    mismatches = 0
    for seed in range(200):
        dets, gts = random_ap_instance(np.random.default_rng(seed))
        expected, got = oracle_ap(dets, gts), frame_ap(dets, gts)
        same = math.isnan(got) if expected is None else abs(got - float(expected)) <= 1e-12
        mismatches += not same
    iou_err = max(abs(iou((0, 0, 2, 2), (0, 0, 2, 2)) - 1.0), abs(iou((0, 0, 1, 1), (2, 2, 3, 3))),
                  abs(iou((0, 0, 2, 2), (1, 1, 3, 3)) - 1 / 7))
    ok = mismatches == 0 and iou_err <= 1e-12
    record(4, "evaluation oracle equivalence", ok,
           f"{200 - mismatches}/200 instances match the brute-force oracle, IoU hand-case error {iou_err:.1e}")
    assert ok


def test_criterion_5_split_protocol():
    sizes = {}
    for n in (21, 24):
        s = make_split([f"a{i}" for i in range(n)], 0.75, 0)
        sizes[n] = (len(s.train_labels), len(s.test_labels))
    partition_ok = True
    for seed in range(300):
        names = [f"a{i}" for i in range(24)]
        for ratio in (0.25, 0.5, 0.75, 0.9):
            s = make_split(names, ratio, seed)
            partition_ok &= (set(s.train_labels).isdisjoint(s.test_labels)
                             and set(s.train_labels) | set(s.test_labels) == set(names)
                             and make_split(names, ratio, seed) == s)
    ok = sizes == {21: (15, 6), 24: (18, 6)} and partition_ok
    record(5, "split protocol", ok, f"21 -> {sizes[21]}, 24 -> {sizes[24]}, 1200 splits disjoint/exhaustive/"
                                    f"deterministic={partition_ok}")
    assert ok


def test_criterion_6_overfit_sanity():
    details, ok = [], True
    for seed in range(3):
        start = time.perf_counter()
        _, _, result, before, after = overfit_run(seed)
        elapsed = time.perf_counter() - start
        monotone = bool(np.all(np.diff(moving_average(result.losses, 20)) <= 0))
        ok &= len(result.trace) == 200 and after >= 0.95 and monotone and elapsed < 120
        details.append(f"seed {seed}: top-1 {before:.3f} -> {after:.3f}, loss {result.losses[0]:.3f} -> "
                       f"{result.losses[-1]:.4f}, smoothed nonincreasing={monotone}, {elapsed:.1f}s")
    record(6, "overfit sanity", ok, "; ".join(details))
    assert ok


def test_criterion_7_zero_shot_benchmark():
    start = time.perf_counter()
    gaps, detail = [], []
    for seed in range(3):
        cfg = merge(RunConfig(), {"seed": seed})
        data = synthesize(cfg.synth_config())
        fixtures = Fixtures(data.frames, data.vocabulary, data.ground_truth)
        split = make_split(data.vocabulary, cfg.ratio, seed)
        model = train_model(cfg, fixtures, split).model
        ours = evaluate_model(cfg, fixtures, split, model)[1].mean_ap
        base = evaluate_model(cfg, fixtures, split, None)[1].mean_ap
        gaps.append(100 * (ours - base))
        detail.append(f"seed {seed}: {100 * ours:.2f} vs {100 * base:.2f}")
    elapsed = time.perf_counter() - start
    ok = float(np.mean(gaps)) >= 5 and elapsed < 600
    record(7, "synthetic zero-shot benchmark", ok,
           f"mean gain {np.mean(gaps):+.2f} mAP ({'; '.join(detail)}), {elapsed:.0f}s")
    assert ok


def _ablate(tmp_path, capsys, name, mode):
    code = main(["ablate", "--fixtures", str(tmp_path / "fx"), "--split", str(tmp_path / "split.json"),
                 "--mode", mode, "--out", str(tmp_path / name)])
    capsys.readouterr()
    assert code == 0
    return json.loads((tmp_path / name / "ablation.json").read_text())


def test_criterion_8_ablation_structure(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "fx")]) == 0
    assert main(["split", "--fixtures", str(tmp_path / "fx"), "--out", str(tmp_path)]) == 0
    summary = _ablate(tmp_path, capsys, "all", "all")
    units, orders = summary["tables"]["units"], summary["tables"]["orders"]
    columns = all({"mAP_no_iap", "mAP_iap"} <= set(r) for r in units + orders)
    person_only, full = units[0], units[-1]
    margin = min(full[c] - person_only[c] for c in ("mAP_no_iap", "mAP_iap"))
    again = _ablate(tmp_path, capsys, "again", "units")
    deterministic = again["tables"]["units"] == units and (
        (tmp_path / "again" / "rows" / "POCM_iap" / "report.json").read_bytes()
        == (tmp_path / "all" / "rows" / "POCM_iap" / "report.json").read_bytes())
    ok = len(units) == 4 and len(orders) == 6 and columns and 100 * margin >= -0.5 and deterministic
    record(8, "ablation structure", ok,
           f"{len(units)} unit rows, {len(orders)} order rows, +/-IAP columns={columns}, full minus person-only "
           f">= {100 * margin:+.2f} mAP, deterministic={deterministic}")
    assert ok


def test_criterion_9_determinism_and_persistence(tmp_path, capsys):
    small = ["--set", "iterations=60", "--set", "warmup_iterations=10"]
    assert main(["synth", "--out", str(tmp_path / "fx")]) == 0
    assert main(["split", "--fixtures", str(tmp_path / "fx"), "--out", str(tmp_path)]) == 0
    common = ["--fixtures", str(tmp_path / "fx"), "--split", str(tmp_path / "split.json"), *small]
    for run in ("a", "b"):
        out = str(tmp_path / run)
        assert main(["train", *common, "--out", out]) == 0
        assert main(["eval", *common, "--checkpoint", str(tmp_path / run / "checkpoint.json"), "--out", out]) == 0
    capsys.readouterr()
    files = ("checkpoint.json", "loss.csv", "detections_model.jsonl", "report_model.json")
    identical = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)

    ckpt = ckpt_io.load(tmp_path / "a" / "checkpoint.json")
    ckpt_io.save(tmp_path / "resaved.json", ckpt)
    resave_ok = (tmp_path / "resaved.json").read_bytes() == (tmp_path / "a" / "checkpoint.json").read_bytes()
    cfg = merge(RunConfig(), {"iterations": 60, "warmup_iterations": 10})
    data = synthesize(cfg.synth_config())
    fixtures = Fixtures(data.frames, data.vocabulary, data.ground_truth)
    split = make_split(data.vocabulary, cfg.ratio, cfg.seed)
    fresh = train_model(cfg, fixtures, split).model
    scores_equal = run_inference(data.frames, data.vocabulary, fresh) == run_inference(
        data.frames, data.vocabulary, ckpt.model)
    ok = identical and resave_ok and scores_equal
    record(9, "determinism and persistence", ok,
           f"rerun artifacts byte-identical={identical}, checkpoint re-save identical={resave_ok}, "
           f"loaded checkpoint scores exact={scores_equal}")
    assert ok
