"""Glue shared by the CLI and the ablation runner: load, train, score, evaluate."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .config import RunConfig
from .errors import FormatError
from .evaluation import DetectionRecord, EvalReport, evaluate
from .features import (
    FRAMES_FILE,
    GT_FILE,
    LABELS_FILE,
    FrameBundle,
    GroundTruthRecord,
    LabelVocabulary,
    load_frames,
    load_ground_truth,
    load_labels,
)
from .inference import evaluation_keys, run_inference
from .model import ICLIPModel
from .training import SplitSpec, TrainResult, train


@dataclass
class Fixtures:
    frames: list[FrameBundle]
    vocabulary: LabelVocabulary
    ground_truth: list[GroundTruthRecord]


def load_fixtures(directory: str | os.PathLike) -> Fixtures:
    """Read the three fixture files from ``directory`` and check they agree on D."""
    d = Path(directory)
    vocab = load_labels(d / LABELS_FILE)
    frames = load_frames(d / FRAMES_FILE)
    if frames and frames[0].dim != vocab.dim:
        raise FormatError(f"{d / FRAMES_FILE}: dim {frames[0].dim} vs labels dim {vocab.dim}")
    return Fixtures(frames, vocab, load_ground_truth(d / GT_FILE, vocab))


def initial_model(cfg: RunConfig, dim: int) -> ICLIPModel:
    return ICLIPModel.initialize(dim, cfg.stack_config(), cfg.prompt_config(), cfg.tau, cfg.seed, cfg.init)


def train_model(cfg: RunConfig, fixtures: Fixtures, split: SplitSpec) -> TrainResult:
    train_vocab = fixtures.vocabulary.subset(split.train_labels)
    model = initial_model(cfg, fixtures.vocabulary.dim)
    return train(model, fixtures.frames, fixtures.ground_truth, train_vocab, cfg.train_config())


def evaluate_model(cfg: RunConfig, fixtures: Fixtures, split: SplitSpec,
                   model: ICLIPModel | None, digest: str = "") -> tuple[list[DetectionRecord], EvalReport]:
    """Score the evaluation frames with ``model`` (``None`` = whole-frame baseline).

    Evaluation frames are those whose ground truth holds a test-label box.
    """
    test_vocab = fixtures.vocabulary.subset(split.test_labels)
    keys = evaluation_keys(fixtures.ground_truth, split.test_labels)
    detections = run_inference(fixtures.frames, test_vocab, model, cfg.conf_threshold, cfg.raw_cosine,
                               tau=cfg.tau, only=keys)
    gt = [r for r in fixtures.ground_truth if r.key in keys]
    report = evaluate(detections, gt, split.test_labels, cfg.iou_threshold)
    report.split_id = split.split_id
    report.config_digest = digest
    report.notes.append("baseline: whole-frame context scoring" if model is None
                        else f"model: {model.stack.label}, prompting {'on' if model.prompt.enabled else 'off'}")
    return detections, report
