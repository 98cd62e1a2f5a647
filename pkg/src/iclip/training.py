"""Label splits, the contrastive objective, the SGD schedule and the training loop."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .boxes import iou
from .errors import NumericError, UsageError
from .features import (
    FrameBundle,
    GroundTruthRecord,
    LabelVocabulary,
    MemoryWindow,
    Person,
    group_by_video,
    memory_contexts,
    select_objects,
)
from .model import ICLIPModel, cosine_rows, frame_forward, person_label_sets
from .tensor import Tensor

log = logging.getLogger(__name__)

GT_MATCH_IOU = 0.5


@dataclass(frozen=True)
class SplitSpec:
    train_labels: tuple[str, ...]
    test_labels: tuple[str, ...]
    ratio: float
    seed: int

    def __post_init__(self):
        overlap = set(self.train_labels) & set(self.test_labels)
        if overlap:
            raise UsageError(f"train and test labels overlap: {sorted(overlap)}")

    @property
    def split_id(self) -> str:
        payload = json.dumps({"train": list(self.train_labels), "test": list(self.test_labels)})
        return hashlib.sha256(payload.encode()).hexdigest()[:12]

    def to_dict(self) -> dict:
        return {"ratio": self.ratio, "seed": self.seed,
                "train": list(self.train_labels), "test": list(self.test_labels)}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        try:
            return cls(tuple(d["train"]), tuple(d["test"]), float(d["ratio"]), int(d["seed"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"malformed split: {exc}") from exc


def make_split(vocab: LabelVocabulary | Sequence[str], ratio: float, seed: int) -> SplitSpec:
    """Shuffle labels with ``seed``; the first floor(ratio * L) become training labels.

    Both lists are returned in canonical vocabulary order.
    """
    names = vocab.names if isinstance(vocab, LabelVocabulary) else list(vocab)
    if not 0 < ratio < 1:
        raise UsageError(f"split ratio {ratio} must lie strictly between 0 and 1")
    n_train = math.floor(ratio * len(names))
    if n_train < 1 or len(names) - n_train < 1:
        raise UsageError(f"ratio {ratio} over {len(names)} labels leaves an empty side")
    perm = np.random.default_rng(seed).permutation(len(names))
    train_idx = set(int(i) for i in perm[:n_train])
    train = tuple(n for i, n in enumerate(names) if i in train_idx)
    test = tuple(n for i, n in enumerate(names) if i not in train_idx)
    return SplitSpec(train, test, ratio, seed)


def contrastive_loss(features: Tensor, label_sets: Sequence[Tensor], targets: Sequence[int],
                     tau: float) -> Tensor:
    """Mean cross-entropy of temperature-scaled cosine similarities.

    Row i scores L2-normalized feature i against its own L2-normalized label set;
    the softmax runs over those L labels.
    """
    if tau <= 0:
        raise UsageError("temperature must be positive")
    loss = T.cross_entropy(T.scale(cosine_rows(features, label_sets), 1.0 / tau), targets)
    if not math.isfinite(loss.item()):
        raise NumericError("contrastive loss is not finite")
    return loss


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 300
    warmup_iterations: int = 30
    base_lr: float = 0.003
    batch_size: int = 8
    tau: float = 0.01
    seed: int = 0
    init: str = "uniform"
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.iterations < 0 or self.warmup_iterations < 0:
            raise UsageError("iteration counts must be non-negative")
        if self.warmup_iterations > self.iterations:
            raise UsageError("warmup_iterations cannot exceed iterations")
        if self.tau <= 0:
            raise UsageError("tau must be positive")
        if self.batch_size < 2:
            raise UsageError("batch_size must be >= 2 for a contrastive batch")
        if self.base_lr < 0:
            raise UsageError("base_lr must be non-negative")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:12]


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear warmup from 0 to base_lr, constant afterwards."""
    if config.warmup_iterations == 0 or step >= config.warmup_iterations:
        return config.base_lr
    return config.base_lr * step / config.warmup_iterations


@dataclass
class TrainingFrame:
    bundle: FrameBundle
    persons: list[Person]
    targets: list[int]
    memory: list[np.ndarray]


def ground_truth_persons(bundle: FrameBundle, record: GroundTruthRecord) -> list[tuple[Person, str]]:
    """GT boxes (confidence 1) carrying the feature of their best-overlapping detection.

    Each detection is used at most once; GT boxes without a detection at
    IoU >= 0.5 are dropped.
    """
    used: set[int] = set()
    out = []
    for box, name in record.boxes:
        best, best_iou = -1, GT_MATCH_IOU
        for j, p in enumerate(bundle.persons):
            if j in used:
                continue
            o = iou(box, p.box)
            if o >= best_iou and (best < 0 or o > best_iou):
                best, best_iou = j, o
        if best >= 0:
            used.add(best)
            out.append((Person(box, 1.0, bundle.persons[best].feat), name))
    return out


def build_training_frames(frames: Sequence[FrameBundle], ground_truth: Sequence[GroundTruthRecord],
                          train_vocab: LabelVocabulary, window: MemoryWindow) -> list[TrainingFrame]:
    """Frames with at least one training-label person; other persons are dropped."""
    gt_by_key = {r.key: r for r in ground_truth}
    videos = group_by_video(frames)
    allowed = {n: i for i, n in enumerate(train_vocab.names)}
    out = []
    for bundle in sorted(frames, key=lambda b: b.key):
        record = gt_by_key.get(bundle.key)
        if record is None:
            continue
        kept = [(p, allowed[n]) for p, n in ground_truth_persons(bundle, record) if n in allowed]
        if not kept:
            continue
        memory = memory_contexts(videos[bundle.video_id], bundle.frame_idx, window)
        out.append(TrainingFrame(bundle, [p for p, _ in kept], [t for _, t in kept], memory))
    return out


@dataclass
class TrainResult:
    model: ICLIPModel
    trace: list[tuple[int, float, float]]  # (step, lr, loss)

    @property
    def losses(self) -> list[float]:
        return [loss for _, _, loss in self.trace]


def _sample_batch(frames: Sequence[TrainingFrame], batch_size: int,
                  rng: np.random.Generator) -> list[tuple[TrainingFrame, int]]:
    """Frames drawn uniformly without replacement until ``batch_size`` persons are collected.

    Returns (frame, number of its persons used), sorted by frame key.
    """
    picked, total = [], 0
    for i in rng.permutation(len(frames)):
        if total >= batch_size:
            break
        frame = frames[int(i)]
        take = min(len(frame.persons), batch_size - total)
        picked.append((frame, take))
        total += take
    return sorted(picked, key=lambda ft: ft[0].bundle.key)


def batch_loss(model: ICLIPModel, params, labels: Tensor,
               batch: Sequence[tuple[TrainingFrame, int]]) -> Tensor:
    features, label_sets, targets = [], [], []
    for frame, take in batch:
        out = frame_forward(frame.bundle, frame.persons, frame.memory, params, model,
                            select_objects(frame.bundle, frame.persons))
        sets = person_label_sets(out, labels, params, model)
        rows = list(range(take))
        features.append(T.take_rows(out.features, rows))
        label_sets.extend(sets[:take])
        targets.extend(frame.targets[:take])
    return contrastive_loss(T.concat_rows(features), label_sets, targets, model.tau)


def train(
    model: ICLIPModel,
    frames: Sequence[FrameBundle],
    ground_truth: Sequence[GroundTruthRecord],
    train_vocab: LabelVocabulary,
    config: TrainConfig,
    callback: Callable[[int, float, float], None] | None = None,
) -> TrainResult:
    """Plain SGD on the contrastive loss over training-label persons.

    Deterministic given ``config.seed``. The model passed in is not modified.
    """
    window = MemoryWindow(model.stack.memory_window)
    samples = build_training_frames(frames, ground_truth, train_vocab, window)
    if not samples:
        raise UsageError("no training frames: no ground-truth person carries a training label")
    model = model.copy()
    model.tau = config.tau
    rng = np.random.default_rng(config.seed)
    labels = Tensor(train_vocab.matrix())
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    trace = []
    for step in range(config.iterations):
        lr = lr_at(step, config)
        params = model.tensors(requires_grad=True)
        loss = batch_loss(model, params, labels, _sample_batch(samples, config.batch_size, rng))
        loss.backward()
        for name, p in params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            if config.weight_decay:
                grad = grad + config.weight_decay * model.params[name]
            if config.momentum:
                velocity[name] = config.momentum * velocity[name] + grad
                grad = velocity[name]
            model.params[name] = model.params[name] - lr * grad
        value = loss.item()
        trace.append((step, lr, value))
        if callback is not None:
            callback(step, lr, value)
        if step % 50 == 0:
            log.debug("step %d lr %.3g loss %.4f", step, lr, value)
    return TrainResult(model, trace)


def training_accuracy(model: ICLIPModel, frames: Sequence[FrameBundle],
                      ground_truth: Sequence[GroundTruthRecord], train_vocab: LabelVocabulary) -> float:
    """Top-1 accuracy over all training-label GT persons."""
    samples = build_training_frames(frames, ground_truth, train_vocab,
                                    MemoryWindow(model.stack.memory_window))
    params = model.tensors()
    labels = Tensor(train_vocab.matrix())
    correct = total = 0
    for frame in samples:
        out = frame_forward(frame.bundle, frame.persons, frame.memory, params, model)
        sims = cosine_rows(out.features, person_label_sets(out, labels, params, model)).data
        correct += int(np.sum(np.argmax(sims, axis=1) == np.asarray(frame.targets)))
        total += len(frame.targets)
    return correct / total if total else 0.0


def write_loss_trace(path, trace: Sequence[tuple[int, float, float]], digest: str = "") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if digest:
            fh.write(f"# config_digest={digest}\n")
        fh.write("step,lr,loss\n")
        for step, lr, loss in trace:
            fh.write(f"{step},{lr!r},{loss!r}\n")
