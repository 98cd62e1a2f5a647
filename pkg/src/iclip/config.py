"""Flat run configuration shared by every CLI command.

A config file is a single JSON object whose keys are ``RunConfig`` field
names. Command-line overrides are applied on top (flag wins over file), the
merged result is validated field by field, and its digest stamps every
artifact the run writes. Path fields are left out of the digest so the same
settings reproduce the same bytes wherever the files live.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, fields
from typing import Any, Mapping

from .errors import UsageError
from .features import SynthConfig
from .interaction import BLOCK_TYPES, SHORT_NAMES, StackConfig
from .prompting import TOKEN_MODES, PromptConfig
from .training import TrainConfig

PATH_FIELDS = ("fixtures", "split_file", "checkpoint")
ABLATION_MODES = ("units", "orders", "all")
_LETTERS = {v: k for k, v in SHORT_NAMES.items()}


def parse_order(value) -> tuple[str, ...]:
    """Accept ``"P->O->C->M"``, ``"P,O,C,M"``, ``"person,object"`` or a list of either."""
    if isinstance(value, str):
        text = value.replace("->", ",").replace(" ", "")
        parts = [p for p in text.split(",") if p]
    elif isinstance(value, (list, tuple)):
        parts = [str(p) for p in value]
    else:
        raise UsageError(f"field 'order': expected a string or list, got {type(value).__name__}")
    out = []
    for p in parts:
        name = _LETTERS.get(p.upper(), p.lower())
        if name not in BLOCK_TYPES:
            raise UsageError(f"field 'order': unknown block '{p}'")
        out.append(name)
    return tuple(out)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # fixture synthesis
    labels: int = 24
    dim: int = 32
    videos: int = 48
    frames_per_video: int = 8
    persons_per_frame: int = 2
    signal: float = 1.0
    noise: float = 0.5
    object_signal: float = 0.5
    false_detection_rate: float = 0.3
    # split
    ratio: float = 0.75
    # interaction stack
    order: tuple[str, ...] = BLOCK_TYPES
    memory_window: int = 4
    # prompting
    prompting: bool = True
    prompt_blocks: int = 2
    prompt_heads: int = 4
    prompt_hidden: int | None = None
    prompt_tokens: str = "pooled"
    # training
    iterations: int = 300
    warmup_iterations: int = 30
    base_lr: float = 0.003
    batch_size: int = 8
    tau: float = 0.01
    init: str = "uniform"
    momentum: float = 0.0
    weight_decay: float = 0.0
    # inference / evaluation
    conf_threshold: float = 0.2
    iou_threshold: float = 0.5
    raw_cosine: bool = False
    # ablation
    ablate_mode: str = "all"
    # input paths (not part of the digest)
    fixtures: str = ""
    split_file: str = ""
    checkpoint: str = ""

    def __post_init__(self):
        object.__setattr__(self, "order", parse_order(self.order))
        self.validate()

    def validate(self) -> None:
        def need(ok: bool, name: str, msg: str) -> None:
            if not ok:
                raise UsageError(f"field '{name}': {msg} (got {getattr(self, name)!r})")

        for name in ("labels", "dim", "videos", "frames_per_video", "persons_per_frame",
                     "prompt_blocks", "prompt_heads", "batch_size"):
            need(getattr(self, name) >= 1, name, "must be a positive integer")
        need(self.labels >= 2, "labels", "need at least 2 labels")
        need(self.dim >= 4, "dim", "must be >= 4")
        need(self.persons_per_frame <= 4, "persons_per_frame", "must be <= 4")
        need(self.batch_size >= 2, "batch_size", "must be >= 2")
        need(self.signal >= 0, "signal", "must be >= 0")
        need(self.noise >= 0, "noise", "must be >= 0")
        need(0 <= self.object_signal <= 1, "object_signal", "must lie in [0, 1]")
        need(0 <= self.false_detection_rate <= 1, "false_detection_rate", "must lie in [0, 1]")
        need(0 < self.ratio < 1, "ratio", "must lie strictly between 0 and 1")
        need(self.memory_window >= 0, "memory_window", "must be >= 0")
        need(self.prompt_hidden is None or self.prompt_hidden >= 1, "prompt_hidden", "must be positive or null")
        need(self.prompt_tokens in TOKEN_MODES, "prompt_tokens", f"must be one of {TOKEN_MODES}")
        need(self.dim % self.prompt_heads == 0, "prompt_heads", f"must divide dim {self.dim}")
        need(self.iterations >= 0, "iterations", "must be >= 0")
        need(0 <= self.warmup_iterations <= self.iterations, "warmup_iterations",
             "must lie in [0, iterations]")
        need(self.base_lr >= 0, "base_lr", "must be >= 0")
        need(self.tau > 0, "tau", "must be > 0")
        need(self.init in ("uniform", "zeros"), "init", "must be 'uniform' or 'zeros'")
        need(0 <= self.momentum < 1, "momentum", "must lie in [0, 1)")
        need(self.weight_decay >= 0, "weight_decay", "must be >= 0")
        need(0 <= self.conf_threshold < 1, "conf_threshold", "must lie in [0, 1)")
        need(0 < self.iou_threshold < 1, "iou_threshold", "must lie strictly between 0 and 1")
        need(self.ablate_mode in ABLATION_MODES, "ablate_mode", f"must be one of {ABLATION_MODES}")

    # -- views onto the module configs ---------------------------------------------------------

    def synth_config(self) -> SynthConfig:
        return SynthConfig(n_labels=self.labels, dim=self.dim, videos=self.videos,
                           frames_per_video=self.frames_per_video, persons_per_frame=self.persons_per_frame,
                           signal=self.signal, noise=self.noise, object_signal=self.object_signal,
                           seed=self.seed, false_detection_rate=self.false_detection_rate)

    def stack_config(self) -> StackConfig:
        return StackConfig(self.order, self.memory_window)

    def prompt_config(self) -> PromptConfig:
        return PromptConfig(self.prompting, self.prompt_blocks, self.prompt_heads,
                            self.prompt_hidden, self.prompt_tokens)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.iterations, self.warmup_iterations, self.base_lr, self.batch_size,
                           self.tau, self.seed, self.init, self.momentum, self.weight_decay)

    # -- serialization ------------------------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["order"] = list(self.order)
        return d

    def digest(self, **extra) -> str:
        """Stable hash of every non-path field, plus any command-level ``extra`` settings."""
        payload = {k: v for k, v in self.to_dict().items() if k not in PATH_FIELDS}
        payload.update(extra)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return merge(self, changes)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value: Any) -> Any:
    kind = _FIELD_TYPES[name]
    if name == "order":
        return parse_order(value)
    if name == "prompt_hidden":
        if value is None or (isinstance(value, str) and value.lower() in ("", "none", "null")):
            return None
        kind = "int"
    try:
        if kind == "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("1", "true", "yes", "on", "0", "false", "no", "off"):
                return value.lower() in ("1", "true", "yes", "on")
            raise ValueError("not a boolean")
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError("not an integer")
            return int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError("not a number")
            return float(value)
        if kind == "str":
            if not isinstance(value, str):
                raise ValueError("not a string")
            return value
    except (TypeError, ValueError) as exc:
        raise UsageError(f"field '{name}': cannot use {value!r} ({exc})") from exc
    return value


def merge(base: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """Return ``base`` with ``overrides`` applied; unknown keys are usage errors."""
    unknown = sorted(set(overrides) - set(_FIELD_TYPES))
    if unknown:
        raise UsageError(f"unknown config field(s): {unknown}")
    current = base.to_dict()
    current.update({k: _coerce(k, v) for k, v in overrides.items()})
    return RunConfig(**current)


def load_config(path: str | os.PathLike | None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Defaults, then the JSON file at ``path`` (if any), then ``overrides``."""
    cfg = RunConfig()
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON at line {exc.lineno}") from exc
        if not isinstance(raw, dict):
            raise UsageError(f"{path}: config must be a JSON object")
        try:
            cfg = merge(cfg, raw)
        except UsageError as exc:
            raise UsageError(f"{path}: {exc}") from exc
    return merge(cfg, overrides or {})


def save_config(path: str | os.PathLike, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
