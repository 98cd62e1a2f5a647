"""Embedding fixtures standing in for frozen image/text encoder outputs.

Three line-oriented JSON files, each starting with a header line
``{"format": "iclip-fixture", "version": 1, "dim": D, "kind": ...}``:

* frames: one frame per line with ``video_id``, ``frame_idx``, ``context``,
  ``persons`` (``box``, ``conf``, ``feat``) and ``objects`` (``box``, ``feat``).
* labels: a single JSON array of ``{"name", "embedding"}`` in canonical order.
* ground truth: one frame per line with ``boxes`` of ``{"box", "label_name"}``.

Floats are written with ``repr`` precision so a write/load cycle is bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .boxes import Box, check_box, iou
from .errors import FixtureParseError, FormatError, UsageError

FORMAT_NAME = "iclip-fixture"
FORMAT_VERSION = 1
DEFAULT_MEMORY_HALF_WIDTH = 4

FRAMES_FILE = "frames.jsonl"
LABELS_FILE = "labels.jsonl"
GT_FILE = "ground_truth.jsonl"


@dataclass(frozen=True)
class Person:
    box: Box
    conf: float
    feat: np.ndarray


@dataclass(frozen=True)
class DetectedObject:
    box: Box
    feat: np.ndarray


@dataclass(frozen=True)
class FrameBundle:
    video_id: str
    frame_idx: int
    context: np.ndarray
    persons: tuple[Person, ...] = ()
    objects: tuple[DetectedObject, ...] = ()

    @property
    def key(self) -> tuple[str, int]:
        return (self.video_id, self.frame_idx)

    @property
    def dim(self) -> int:
        return int(self.context.shape[0])


@dataclass(frozen=True)
class Label:
    name: str
    embedding: np.ndarray


@dataclass(frozen=True)
class LabelVocabulary:
    labels: tuple[Label, ...]

    def __post_init__(self):
        names = [lab.name for lab in self.labels]
        if len(set(names)) != len(names):
            raise UsageError("label names must be unique")
        dims = {lab.embedding.shape for lab in self.labels}
        if len(dims) > 1:
            raise FormatError(f"label embeddings have mixed shapes {sorted(dims)}")

    @classmethod
    def from_arrays(cls, names: Sequence[str], embeddings: np.ndarray) -> "LabelVocabulary":
        return cls(tuple(Label(n, np.array(e, dtype=np.float64)) for n, e in zip(names, embeddings)))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def names(self) -> list[str]:
        return [lab.name for lab in self.labels]

    @property
    def dim(self) -> int:
        return int(self.labels[0].embedding.shape[0])

    def matrix(self) -> np.ndarray:
        return np.stack([lab.embedding for lab in self.labels])

    def index(self, name: str) -> int:
        for i, lab in enumerate(self.labels):
            if lab.name == name:
                return i
        raise UsageError(f"unknown label '{name}'")

    def subset(self, names: Iterable[str]) -> "LabelVocabulary":
        """Sub-vocabulary in the order given by ``names``."""
        by_name = {lab.name: lab for lab in self.labels}
        missing = [n for n in names if n not in by_name]
        if missing:
            raise UsageError(f"labels not in vocabulary: {missing}")
        return LabelVocabulary(tuple(by_name[n] for n in names))

    def digest(self) -> str:
        h = hashlib.sha256()
        for lab in self.labels:
            h.update(lab.name.encode("utf-8"))
            h.update(b"\0")
            h.update(np.ascontiguousarray(lab.embedding, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class GroundTruthRecord:
    video_id: str
    frame_idx: int
    boxes: tuple[tuple[Box, str], ...]

    @property
    def key(self) -> tuple[str, int]:
        return (self.video_id, self.frame_idx)


@dataclass(frozen=True)
class MemoryWindow:
    half_width: int = DEFAULT_MEMORY_HALF_WIDTH

    def __post_init__(self):
        if self.half_width < 0:
            raise UsageError("memory half width must be non-negative")


def select_objects(bundle: FrameBundle, persons: Sequence[Person] | None = None) -> list[DetectedObject]:
    """Objects whose box overlaps (IoU > 0) at least one person box, in input order.

    ``persons`` defaults to every person in the bundle; inference passes the
    confidence-filtered list instead.
    """
    persons = bundle.persons if persons is None else persons
    return [o for o in bundle.objects if any(iou(o.box, p.box) > 0 for p in persons)]


def filter_persons(bundle: FrameBundle, threshold: float = 0.2) -> list[Person]:
    """Persons with confidence strictly above ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise UsageError(f"confidence threshold {threshold} outside [0, 1]")
    return [p for p in bundle.persons if p.conf > threshold]


def memory_contexts(
    video_frames: Mapping[int, FrameBundle] | Sequence[FrameBundle],
    frame_idx: int,
    window: MemoryWindow = MemoryWindow(),
) -> list[np.ndarray]:
    """Context features of frames t-T..t+T (excluding t) that exist, in temporal order."""
    if not isinstance(video_frames, Mapping):
        video_frames = {b.frame_idx: b for b in video_frames}
    if frame_idx not in video_frames:
        raise UsageError(f"frame {frame_idx} not in video")
    t, w = frame_idx, window.half_width
    return [video_frames[i].context for i in range(t - w, t + w + 1) if i != t and i in video_frames]


def group_by_video(frames: Iterable[FrameBundle]) -> dict[str, dict[int, FrameBundle]]:
    videos: dict[str, dict[int, FrameBundle]] = {}
    for b in frames:
        videos.setdefault(b.video_id, {})[b.frame_idx] = b
    return videos


# ---------------------------------------------------------------------------
# serialization


def _header(kind: str, dim: int, digest: str = "") -> str:
    head = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "dim": dim, "kind": kind}
    if digest:
        head["config_digest"] = digest
    return json.dumps(head)


def _floats(arr: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(arr, dtype=np.float64).reshape(-1)]


def _write_lines(path: Path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def frame_to_dict(b: FrameBundle) -> dict:
    return {
        "video_id": b.video_id,
        "frame_idx": b.frame_idx,
        "context": _floats(b.context),
        "persons": [{"box": list(p.box), "conf": p.conf, "feat": _floats(p.feat)} for p in b.persons],
        "objects": [{"box": list(o.box), "feat": _floats(o.feat)} for o in b.objects],
    }


def write_frames(path: str | os.PathLike, frames: Sequence[FrameBundle], dim: int | None = None,
                 digest: str = "") -> None:
    frames = sorted(frames, key=lambda b: b.key)
    if dim is None:
        if not frames:
            raise UsageError("dim is required when writing an empty frames file")
        dim = frames[0].dim
    _write_lines(Path(path), [_header("frames", dim, digest)] + [json.dumps(frame_to_dict(b)) for b in frames])


def write_labels(path: str | os.PathLike, vocab: LabelVocabulary, digest: str = "") -> None:
    body = [{"name": lab.name, "embedding": _floats(lab.embedding)} for lab in vocab.labels]
    _write_lines(Path(path), [_header("labels", vocab.dim, digest), json.dumps(body)])


def write_ground_truth(path: str | os.PathLike, records: Sequence[GroundTruthRecord], dim: int,
                       digest: str = "") -> None:
    records = sorted(records, key=lambda r: r.key)
    lines = [_header("ground_truth", dim, digest)]
    for r in records:
        boxes = [{"box": list(box), "label_name": name} for box, name in r.boxes]
        lines.append(json.dumps({"video_id": r.video_id, "frame_idx": r.frame_idx, "boxes": boxes}))
    _write_lines(Path(path), lines)


def _read_header(fh, path, kind: str) -> int | None:
    first = fh.readline()
    if not first.strip():
        return None
    try:
        head = json.loads(first)
    except json.JSONDecodeError as exc:
        raise FixtureParseError(f"bad header in {path}: {exc.msg}", line_no=1) from exc
    if not isinstance(head, dict) or head.get("format") != FORMAT_NAME:
        raise FormatError(f"{path}: not an {FORMAT_NAME} file")
    if head.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {head.get('version')!r}")
    if head.get("kind", kind) != kind:
        raise FormatError(f"{path}: expected a {kind} file, found {head.get('kind')!r}")
    dim = head.get("dim")
    if not isinstance(dim, int) or dim < 1:
        raise FormatError(f"{path}: bad dim {dim!r}")
    return dim


def _vector(value, dim: int, line_no: int, name: str) -> np.ndarray:
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
        raise FixtureParseError("expected a list of numbers", line_no, name)
    if len(value) != dim:
        raise FormatError(f"line {line_no}: field '{name}' has length {len(value)}, header dim is {dim}")
    return np.array(value, dtype=np.float64)


def _box(value, line_no: int, name: str) -> Box:
    if not isinstance(value, list):
        raise FixtureParseError("expected [x1, y1, x2, y2]", line_no, name)
    try:
        return check_box(value)
    except (ValueError, TypeError) as exc:
        raise FixtureParseError(str(exc), line_no, name) from exc


def _record(line: str, line_no: int, required: Sequence[str]) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FixtureParseError(f"invalid JSON: {exc.msg}", line_no) from exc
    if not isinstance(rec, dict):
        raise FixtureParseError("record must be an object", line_no)
    for key in required:
        if key not in rec:
            raise FixtureParseError("missing", line_no, key)
    return rec


def _parse_frame(line: str, line_no: int, dim: int) -> FrameBundle:
    rec = _record(line, line_no, ("video_id", "frame_idx", "context", "persons", "objects"))
    video_id, frame_idx = rec["video_id"], rec["frame_idx"]
    if not isinstance(video_id, str):
        raise FixtureParseError("expected a string", line_no, "video_id")
    if not isinstance(frame_idx, int) or isinstance(frame_idx, bool) or frame_idx < 0:
        raise FixtureParseError("expected a non-negative integer", line_no, "frame_idx")
    persons = []
    for i, p in enumerate(rec["persons"]):
        conf = p.get("conf") if isinstance(p, dict) else None
        if not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
            raise FixtureParseError("confidence must be a number in [0, 1]", line_no, f"persons[{i}].conf")
        persons.append(Person(
            _box(p.get("box"), line_no, f"persons[{i}].box"),
            float(conf),
            _vector(p.get("feat"), dim, line_no, f"persons[{i}].feat"),
        ))
    objects = []
    for i, o in enumerate(rec["objects"]):
        if not isinstance(o, dict):
            raise FixtureParseError("expected an object", line_no, f"objects[{i}]")
        objects.append(DetectedObject(
            _box(o.get("box"), line_no, f"objects[{i}].box"),
            _vector(o.get("feat"), dim, line_no, f"objects[{i}].feat"),
        ))
    return FrameBundle(video_id, frame_idx, _vector(rec["context"], dim, line_no, "context"),
                       tuple(persons), tuple(objects))


def iter_frames(path: str | os.PathLike) -> Iterator[FrameBundle]:
    """Stream frame bundles in file order."""
    with open(path, encoding="utf-8") as fh:
        dim = _read_header(fh, path, "frames")
        if dim is None:
            return
        for line_no, line in enumerate(fh, start=2):
            if line.strip():
                yield _parse_frame(line, line_no, dim)


def load_frames(path: str | os.PathLike) -> list[FrameBundle]:
    """All frames, sorted by (video_id, frame_idx). An empty file gives []."""
    return sorted(iter_frames(path), key=lambda b: b.key)


def read_dim(path: str | os.PathLike, kind: str) -> int | None:
    with open(path, encoding="utf-8") as fh:
        return _read_header(fh, path, kind)


def load_labels(path: str | os.PathLike) -> LabelVocabulary:
    with open(path, encoding="utf-8") as fh:
        dim = _read_header(fh, path, "labels")
        if dim is None:
            raise FormatError(f"{path}: empty labels file")
        body = fh.read()
    try:
        items = json.loads(body)
    except json.JSONDecodeError as exc:
        raise FixtureParseError(f"invalid JSON: {exc.msg}", 2) from exc
    if not isinstance(items, list) or not items:
        raise FixtureParseError("expected a non-empty array of labels", 2)
    labels = []
    for i, item in enumerate(items):
        if not isinstance(item, dict) or not isinstance(item.get("name"), str):
            raise FixtureParseError("expected {name, embedding}", 2, f"[{i}].name")
        labels.append(Label(item["name"], _vector(item.get("embedding"), dim, 2, f"[{i}].embedding")))
    return LabelVocabulary(tuple(labels))


def load_ground_truth(path: str | os.PathLike, vocab: LabelVocabulary | None = None) -> list[GroundTruthRecord]:
    known = set(vocab.names) if vocab is not None else None
    out = []
    with open(path, encoding="utf-8") as fh:
        if _read_header(fh, path, "ground_truth") is None:
            return []
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            rec = _record(line, line_no, ("video_id", "frame_idx", "boxes"))
            boxes = []
            for i, item in enumerate(rec["boxes"]):
                name = item.get("label_name") if isinstance(item, dict) else None
                if not isinstance(name, str):
                    raise FixtureParseError("expected a string", line_no, f"boxes[{i}].label_name")
                if known is not None and name not in known:
                    raise FixtureParseError(f"unknown label '{name}'", line_no, f"boxes[{i}].label_name")
                boxes.append((_box(item.get("box"), line_no, f"boxes[{i}].box"), name))
            out.append(GroundTruthRecord(str(rec["video_id"]), int(rec["frame_idx"]), tuple(boxes)))
    return sorted(out, key=lambda r: r.key)


# ---------------------------------------------------------------------------
# synthetic fixtures


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic generator.

    ``signal`` scales the label direction in person features, ``noise`` is the
    per-coordinate Gaussian std, ``object_signal`` mixes the owner's label into
    each person's object (the remainder is a random object identity).
    """

    n_labels: int = 24
    dim: int = 32
    videos: int = 48
    frames_per_video: int = 8
    persons_per_frame: int = 2
    signal: float = 1.0
    noise: float = 0.5
    object_signal: float = 0.5
    seed: int = 0
    false_detection_rate: float = 0.3
    frame_size: tuple[int, int] = (320, 240)

    def validate(self) -> None:
        if self.n_labels < 2:
            raise UsageError("n_labels must be >= 2")
        if self.dim < 4:
            raise UsageError("dim must be >= 4")
        for name in ("videos", "frames_per_video", "persons_per_frame"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.persons_per_frame > 4:
            raise UsageError("persons_per_frame must be <= 4 (fixed horizontal slots)")
        if self.noise < 0 or self.signal < 0 or not 0 <= self.object_signal <= 1:
            raise UsageError("need noise >= 0, signal >= 0, 0 <= object_signal <= 1")
        if self.signal == 0 and self.noise == 0:
            raise UsageError("signal and noise cannot both be zero")
        if not 0 <= self.false_detection_rate <= 1:
            raise UsageError("false_detection_rate must be in [0, 1]")


@dataclass
class SyntheticData:
    frames: list[FrameBundle]
    vocabulary: LabelVocabulary
    ground_truth: list[GroundTruthRecord]
    config: SynthConfig = field(default_factory=SynthConfig)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def synthesize(cfg: SynthConfig) -> SyntheticData:
    """Generate videos whose person/object/context embeddings carry label signal.

    Each video has ``persons_per_frame`` person tracks with fixed labels
    (distinct within a video when possible). Per frame, a person feature is
    ``unit(signal * c_label + noise)``, the person's object is
    ``unit(object_signal * c_label + (1 - object_signal) * o + noise)`` for a
    per-track object identity ``o``, and the context is the normalized mean of
    the persons' label targets plus noise. Frames also carry one distractor
    object away from every person and, with ``false_detection_rate``, a
    low-confidence spurious person detection.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    d, sigma = cfg.dim, cfg.noise
    width, height = cfg.frame_size
    label_emb = np.stack([_unit(v) for v in rng.normal(size=(cfg.n_labels, d))])
    vocab = LabelVocabulary.from_arrays([f"action_{i:02d}" for i in range(cfg.n_labels)], label_emb)
    slot_w = width / cfg.persons_per_frame

    frames, gts = [], []
    for v in range(cfg.videos):
        video_id = f"video_{v:03d}"
        replace = cfg.persons_per_frame > cfg.n_labels
        track_labels = rng.choice(cfg.n_labels, size=cfg.persons_per_frame, replace=replace)
        tracks = []
        for k, lab in enumerate(track_labels):
            x0 = k * slot_w + rng.uniform(0.1, 0.25) * slot_w
            bw = rng.uniform(0.45, 0.6) * slot_w
            y0 = rng.uniform(90, 110)
            tracks.append({
                "label": int(lab),
                "box": np.array([x0, y0, x0 + bw, y0 + rng.uniform(100, 125)]),
                "obj_identity": _unit(rng.normal(size=d)),
            })
        distractor_identity = _unit(rng.normal(size=d))
        distractor_label = int(rng.integers(cfg.n_labels))

        for t in range(cfg.frames_per_video):
            persons, objects, gt_boxes = [], [], []
            for tr in tracks:
                drift = rng.uniform(-2.0, 2.0, size=2)
                gt_box = tr["box"] + np.array([drift[0], drift[1], drift[0], drift[1]])
                gt_box = tuple(round(float(x), 2) for x in gt_box)
                det_box = tuple(round(float(x + j), 2) for x, j in zip(gt_box, rng.uniform(-2, 2, size=4)))
                c = label_emb[tr["label"]]
                feat = _unit(cfg.signal * c + sigma * rng.normal(size=d))
                persons.append(Person(det_box, round(float(rng.uniform(0.5, 1.0)), 4), feat))
                gt_boxes.append((gt_box, vocab.labels[tr["label"]].name))
                ox, oy = gt_box[2] - 10.0, (gt_box[1] + gt_box[3]) / 2
                obj_box = (round(ox, 2), round(oy, 2), round(ox + 25.0, 2), round(oy + 20.0, 2))
                b = cfg.object_signal
                obj_feat = _unit(b * c + (1 - b) * tr["obj_identity"] + sigma * rng.normal(size=d))
                objects.append(DetectedObject(obj_box, obj_feat))
            dx = rng.uniform(10, width - 60)
            distractor = _unit(cfg.object_signal * label_emb[distractor_label]
                               + (1 - cfg.object_signal) * distractor_identity + sigma * rng.normal(size=d))
            objects.append(DetectedObject((round(dx, 2), 10.0, round(dx + 40.0, 2), 50.0), distractor))
            if rng.uniform() < cfg.false_detection_rate:
                fx = rng.uniform(10, width - 60)
                fake = _unit(rng.normal(size=d))
                persons.append(Person((round(fx, 2), 5.0, round(fx + 30.0, 2), 60.0),
                                      round(float(rng.uniform(0.02, 0.2)), 4), fake))
            targets = np.mean([cfg.signal * label_emb[tr["label"]] for tr in tracks], axis=0)
            context = _unit(targets + sigma * rng.normal(size=d))
            frames.append(FrameBundle(video_id, t, context, tuple(persons), tuple(objects)))
            gts.append(GroundTruthRecord(video_id, t, tuple(gt_boxes)))
    return SyntheticData(frames, vocab, gts, cfg)


def write_fixtures(data: SyntheticData, out_dir: str | os.PathLike, digest: str = "") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"frames": out / FRAMES_FILE, "labels": out / LABELS_FILE, "ground_truth": out / GT_FILE}
    write_frames(paths["frames"], data.frames, data.vocabulary.dim, digest)
    write_labels(paths["labels"], data.vocabulary, digest)
    write_ground_truth(paths["ground_truth"], data.ground_truth, data.vocabulary.dim, digest)
    return paths
