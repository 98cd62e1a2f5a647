"""Zero-shot scoring of person boxes against an unseen label set."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import FormatError
from .evaluation import DetectionRecord
from .features import (
    FrameBundle,
    GroundTruthRecord,
    LabelVocabulary,
    MemoryWindow,
    Person,
    filter_persons,
    group_by_video,
    memory_contexts,
)
from .model import ICLIPModel, cosine_rows, frame_forward, person_label_sets
from .tensor import Tensor

CONF_THRESHOLD = 0.2


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def class_scores(cosines: np.ndarray, tau: float, raw_cosine: bool = False) -> np.ndarray:
    """Class probabilities from cosines: softmax(cos / tau), or (cos + 1) / 2 when ``raw_cosine``."""
    return (cosines + 1.0) / 2.0 if raw_cosine else _softmax(cosines / tau)


def _records(bundle: FrameBundle, persons: Sequence[Person], probs: np.ndarray,
             vocab: LabelVocabulary) -> list[DetectionRecord]:
    names = vocab.names
    return [
        DetectionRecord(bundle.video_id, bundle.frame_idx, p.box, names[j], float(p.conf * probs[i, j]))
        for i, p in enumerate(persons)
        for j in range(len(names))
    ]


def model_cosines(bundle: FrameBundle, memory: Sequence[np.ndarray], model: ICLIPModel,
                  vocab: LabelVocabulary, persons: Sequence[Person]) -> np.ndarray:
    """N x L cosine similarities between interaction features and prompted labels."""
    if vocab.dim != model.dim:
        raise FormatError(f"vocabulary dim {vocab.dim} vs checkpoint dim {model.dim}")
    params = model.tensors()
    out = frame_forward(bundle, persons, memory, params, model)
    return cosine_rows(out.features, person_label_sets(out, Tensor(vocab.matrix()), params, model)).data


def score_frame(bundle: FrameBundle, memory: Sequence[np.ndarray], model: ICLIPModel,
                vocab: LabelVocabulary, persons: Sequence[Person] | None = None,
                raw_cosine: bool = False) -> list[DetectionRecord]:
    """One record per (person, label); score = person confidence x class probability.

    ``persons`` should already be confidence-filtered; defaults to every
    person in the bundle.
    """
    persons = list(bundle.persons if persons is None else persons)
    if not persons:
        return []
    probs = class_scores(model_cosines(bundle, memory, model, vocab, persons), model.tau, raw_cosine)
    return _records(bundle, persons, probs, vocab)


def score_frame_baseline(bundle: FrameBundle, vocab: LabelVocabulary, tau: float = 0.01,
                         persons: Sequence[Person] | None = None,
                         raw_cosine: bool = False) -> list[DetectionRecord]:
    """Whole-frame baseline: the frame context alone scores the labels, shared by every person."""
    persons = list(bundle.persons if persons is None else persons)
    if not persons:
        return []
    if vocab.dim != bundle.dim:
        raise FormatError(f"vocabulary dim {vocab.dim} vs frame dim {bundle.dim}")
    labels = vocab.matrix()
    labels = labels / np.linalg.norm(labels, axis=1, keepdims=True)
    ctx = bundle.context / np.linalg.norm(bundle.context)
    probs = class_scores((labels @ ctx)[None, :], tau, raw_cosine)
    return _records(bundle, persons, np.repeat(probs, len(persons), axis=0), vocab)


def evaluation_keys(ground_truth: Sequence[GroundTruthRecord], test_labels: Sequence[str]) -> set:
    """Keys of frames whose ground truth contains at least one test-label box."""
    wanted = set(test_labels)
    return {r.key for r in ground_truth if any(name in wanted for _, name in r.boxes)}


def run_inference(frames: Sequence[FrameBundle], vocab: LabelVocabulary, model: ICLIPModel | None = None,
                  conf_threshold: float = CONF_THRESHOLD, raw_cosine: bool = False,
                  tau: float | None = None, only: set | None = None) -> list[DetectionRecord]:
    """Score frames; ``model=None`` runs the whole-frame baseline.

    ``only`` restricts scoring to the given (video_id, frame_idx) keys; memory
    windows are always drawn from all of ``frames``.
    """
    videos = group_by_video(frames)
    window = MemoryWindow(model.stack.memory_window if model is not None else 0)
    tau = tau if tau is not None else (model.tau if model is not None else 0.01)
    out: list[DetectionRecord] = []
    for bundle in sorted(frames, key=lambda b: b.key):
        if only is not None and bundle.key not in only:
            continue
        persons = filter_persons(bundle, conf_threshold)
        if not persons:
            continue
        if model is None:
            out.extend(score_frame_baseline(bundle, vocab, tau, persons, raw_cosine))
        else:
            memory = memory_contexts(videos[bundle.video_id], bundle.frame_idx, window)
            out.extend(score_frame(bundle, memory, model, vocab, persons, raw_cosine))
    return out
