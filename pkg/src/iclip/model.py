"""Parameter container and the shared forward path used by training and inference."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError, UsageError
from .features import DetectedObject, FrameBundle, Person, select_objects
from .interaction import StackConfig, init_stack_params, run_stack
from .prompting import PromptConfig, init_prompt_params, prompt_labels
from .tensor import Tensor

DEFAULT_TAU = 0.01


@dataclass
class ICLIPModel:
    dim: int
    stack: StackConfig = field(default_factory=StackConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    tau: float = DEFAULT_TAU
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.tau <= 0:
            raise UsageError("temperature must be positive")
        if self.prompt.enabled:
            self.prompt.check(self.dim)

    @classmethod
    def initialize(cls, dim: int, stack: StackConfig | None = None, prompt: PromptConfig | None = None,
                   tau: float = DEFAULT_TAU, seed: int = 0, mode: str = "uniform") -> "ICLIPModel":
        stack = stack or StackConfig()
        prompt = prompt or PromptConfig()
        rng = np.random.default_rng(seed)
        params = init_stack_params(dim, stack, rng, mode)
        params.update(init_prompt_params(dim, prompt, rng, mode))
        return cls(dim, stack, prompt, tau, params)

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}

    def copy(self) -> "ICLIPModel":
        return ICLIPModel(self.dim, self.stack, self.prompt, self.tau,
                          {k: v.copy() for k, v in self.params.items()})


@dataclass
class FrameOutput:
    features: Tensor  # pooled interaction features, N x D
    enhanced: Tensor  # person features after the blocks, N x D
    context: Tensor   # 1 x D


def _stack_rows(vectors: Sequence[np.ndarray]) -> Tensor | None:
    return Tensor(np.stack(vectors)) if len(vectors) else None


def frame_forward(
    bundle: FrameBundle,
    persons: Sequence[Person],
    memory: Sequence[np.ndarray],
    params: Mapping[str, Tensor],
    model: ICLIPModel,
    objects: Sequence[DetectedObject] | None = None,
) -> FrameOutput:
    if not persons:
        raise UsageError(f"frame {bundle.key} has no persons")
    if bundle.dim != model.dim:
        raise DimensionError(f"frame dim {bundle.dim} vs model dim {model.dim}")
    objects = select_objects(bundle, persons) if objects is None else objects
    context = Tensor(bundle.context.reshape(1, -1))
    features, enhanced = run_stack(
        Tensor(np.stack([p.feat for p in persons])),
        _stack_rows([o.feat for o in objects]),
        context,
        _stack_rows(list(memory)),
        params,
        model.stack,
    )
    return FrameOutput(features, enhanced, context)


def person_label_sets(out: FrameOutput, labels: Tensor, params: Mapping[str, Tensor],
                      model: ICLIPModel) -> list[Tensor]:
    return prompt_labels(labels, out.features, params, model.prompt, out.enhanced, out.context)


def cosine_rows(features: Tensor, label_sets: Sequence[Tensor]) -> Tensor:
    """N x L cosine similarities: row i compares feature i with its own label set."""
    if features.shape[0] != len(label_sets):
        raise DimensionError(f"{features.shape[0]} features vs {len(label_sets)} label sets")
    feats = T.l2_normalize(features)
    rows = [
        T.matmul(T.take_rows(feats, [i]), T.transpose(T.l2_normalize(labels)))
        for i, labels in enumerate(label_sets)
    ]
    return T.concat_rows(rows)
