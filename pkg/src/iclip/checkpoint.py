"""Checkpoint files: every trainable tensor plus the metadata needed to reuse it.

Layout (UTF-8 JSON, keys sorted, two-space indent, trailing newline)::

    {
      "format": "iclip-checkpoint",
      "version": 1,
      "dim": D,
      "tau": float,
      "stack": {"order": [...], "memory_window": int},
      "prompt": {"enabled": bool, "blocks": K, "heads": H, "hidden": F, "tokens": str},
      "train_digest": str,
      "vocabulary_hash": str,
      "params": {"interaction.person.w_q": {"shape": [D, D], "data": [...]}, ...}
    }

Parameter names are ``interaction.<block>.<role>`` and
``prompt.<index>.<role>``. Floats are written with Python's shortest
round-trip repr, so load followed by save reproduces the same bytes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .interaction import StackConfig
from .model import ICLIPModel
from .prompting import PromptConfig

FORMAT_NAME = "iclip-checkpoint"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: ICLIPModel
    train_digest: str = ""
    vocabulary_hash: str = ""

    def to_dict(self) -> dict:
        m = self.model
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "dim": m.dim,
            "tau": m.tau,
            "stack": {"order": list(m.stack.order), "memory_window": m.stack.memory_window},
            "prompt": {"enabled": m.prompt.enabled, "blocks": m.prompt.blocks, "heads": m.prompt.heads,
                       "hidden": m.prompt.hidden_dim(m.dim), "tokens": m.prompt.tokens},
            "train_digest": self.train_digest,
            "vocabulary_hash": self.vocabulary_hash,
            "params": {
                name: {"shape": list(arr.shape), "data": [float(x) for x in arr.reshape(-1)]}
                for name, arr in sorted(m.params.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict, source: str = "checkpoint") -> "Checkpoint":
        if d.get("format") != FORMAT_NAME:
            raise FormatError(f"{source}: not an {FORMAT_NAME} file")
        if d.get("version") != FORMAT_VERSION:
            raise FormatError(f"{source}: unsupported version {d.get('version')}")
        try:
            dim = int(d["dim"])
            stack = StackConfig(tuple(d["stack"]["order"]), int(d["stack"]["memory_window"]))
            p = d["prompt"]
            prompt = PromptConfig(bool(p["enabled"]), int(p["blocks"]), int(p["heads"]),
                                  int(p["hidden"]), str(p["tokens"]))
            params = {}
            for name, entry in d["params"].items():
                arr = np.array(entry["data"], dtype=np.float64)
                shape = tuple(int(s) for s in entry["shape"])
                if arr.size != int(np.prod(shape)):
                    raise FormatError(f"{source}: parameter '{name}' has {arr.size} values for shape {shape}")
                params[name] = arr.reshape(shape)
            expected = ICLIPModel.initialize(dim, stack, prompt, mode="zeros").params
            model = ICLIPModel(dim, stack, prompt, float(d["tau"]), params)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"{source}: malformed checkpoint ({exc!r})") from exc
        if set(params) != set(expected):
            raise FormatError(f"{source}: parameter names differ from the configuration's: "
                              f"missing {sorted(set(expected) - set(params))}, "
                              f"unexpected {sorted(set(params) - set(expected))}")
        for name, arr in params.items():
            if arr.shape != expected[name].shape:
                raise FormatError(f"{source}: parameter '{name}' has shape {arr.shape}, "
                                  f"expected {expected[name].shape} for dim {dim}")
        return cls(model, str(d.get("train_digest", "")), str(d.get("vocabulary_hash", "")))

    def check_vocabulary(self, vocab) -> None:
        """Raise if ``vocab`` differs in width or (when recorded) in content hash."""
        if vocab.dim != self.model.dim:
            raise FormatError(f"vocabulary dim {vocab.dim} vs checkpoint dim {self.model.dim}")
        if self.vocabulary_hash and vocab.digest() != self.vocabulary_hash:
            raise FormatError(
                f"vocabulary hash {vocab.digest()} does not match checkpoint's {self.vocabulary_hash}")


def dumps(ckpt: Checkpoint) -> str:
    return json.dumps(ckpt.to_dict(), indent=2, sort_keys=True) + "\n"


def save(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(ckpt))


def load(path: str | os.PathLike, vocab=None, dim: int | None = None) -> Checkpoint:
    """Read a checkpoint; optionally validate it against a vocabulary and/or width."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}") from exc
    ckpt = Checkpoint.from_dict(raw, str(path))
    if dim is not None and dim != ckpt.model.dim:
        raise FormatError(f"{path}: checkpoint dim {ckpt.model.dim} vs expected {dim}")
    if vocab is not None:
        ckpt.check_vocabulary(vocab)
    return ckpt
