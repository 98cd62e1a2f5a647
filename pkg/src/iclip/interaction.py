"""Interaction blocks that enrich per-person features.

Each block is a single-head residual attention layer::

    out = query + LN(softmax(w_q(query) w_k(keys)^T / sqrt(D)) w_v(keys))

The person block attends over the persons themselves; object, context and
memory blocks attend over their own feature sets. After the blocks run in the
configured order, the enhanced features are averaged with the frame context.
Projections act on row vectors (``x @ W``) and have no bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError, UsageError
from .features import DEFAULT_MEMORY_HALF_WIDTH, FrameBundle, Person, select_objects
from .tensor import Tensor

BLOCK_TYPES = ("person", "object", "context", "memory")
BLOCK_ROLES = ("w_q", "w_k", "w_v", "ln_gain", "ln_bias")
LN_GAIN_SCALE = 0.1
SHORT_NAMES = {"person": "P", "object": "O", "context": "C", "memory": "M"}


@dataclass(frozen=True)
class StackConfig:
    """Which interaction blocks run, and in what order."""

    order: tuple[str, ...] = BLOCK_TYPES
    memory_window: int = DEFAULT_MEMORY_HALF_WIDTH

    def __post_init__(self):
        order = tuple(self.order)
        object.__setattr__(self, "order", order)
        unknown = [b for b in order if b not in BLOCK_TYPES]
        if unknown:
            raise UsageError(f"unknown interaction blocks {unknown}; choose from {BLOCK_TYPES}")
        if len(set(order)) != len(order):
            raise UsageError(f"interaction block repeated in order {order}")
        if self.memory_window < 0:
            raise UsageError("memory_window must be non-negative")

    @property
    def enabled(self) -> frozenset[str]:
        return frozenset(self.order)

    @property
    def label(self) -> str:
        return "->".join(SHORT_NAMES[b] for b in self.order) or "none"


def param_name(block: str, role: str) -> str:
    return f"interaction.{block}.{role}"


def init_stack_params(dim: int, config: StackConfig, rng: np.random.Generator,
                      mode: str = "uniform") -> dict[str, np.ndarray]:
    """Fresh parameters for every enabled block.

    ``uniform``: projections drawn from U(-1/sqrt(D), 1/sqrt(D)), with the
    identity added to ``w_v``, and LN gain ``0.1/sqrt(D)``. LN output is
    invariant to the scale of ``w_v``, so a small gain is what keeps each
    block near identity; the identity term keeps directions that training
    never touches from injecting a random rotation.
    ``zeros``: zero projections and LN gain 1, which makes every block an
    exact identity. LN bias starts at 0 in both modes.
    """
    if mode not in ("uniform", "zeros"):
        raise UsageError(f"unknown init mode '{mode}'")
    bound = 1.0 / math.sqrt(dim)
    params = {}
    for block in BLOCK_TYPES:
        if block not in config.enabled:
            continue
        for role in ("w_q", "w_k", "w_v"):
            if mode == "zeros":
                params[param_name(block, role)] = np.zeros((dim, dim))
            else:
                w = rng.uniform(-bound, bound, size=(dim, dim))
                params[param_name(block, role)] = w + np.eye(dim) if role == "w_v" else w
        gain = 1.0 if mode == "zeros" else LN_GAIN_SCALE * bound
        params[param_name(block, "ln_gain")] = np.full(dim, gain)
        params[param_name(block, "ln_bias")] = np.zeros(dim)
    return params


def _attend(query: Tensor, keys: Tensor, params: Mapping[str, Tensor], block: str) -> Tensor:
    d = query.shape[1]
    if keys.shape[1] != d:
        raise DimensionError(f"{block} block: query width {d} vs key width {keys.shape[1]}")
    q = T.matmul(query, params[param_name(block, "w_q")])
    k = T.matmul(keys, params[param_name(block, "w_k")])
    v = T.matmul(keys, params[param_name(block, "w_v")])
    weights = T.softmax_rows(T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d)))
    attended = T.matmul(weights, v)
    normed = T.layer_norm(attended, params[param_name(block, "ln_gain")], params[param_name(block, "ln_bias")])
    return T.add(query, normed)


def person_block(persons: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Self-attention over the persons of one frame (N x D -> N x D)."""
    return _attend(persons, persons, params, "person")


def cross_block(enhanced: Tensor, keys: Tensor | None, params: Mapping[str, Tensor], block: str) -> Tensor:
    """Cross-attention from persons to ``keys`` (M x D); no keys means passthrough."""
    if keys is None:
        return enhanced
    return _attend(enhanced, keys, params, block)


def _rows(vectors: Sequence[np.ndarray]) -> Tensor | None:
    return Tensor(np.stack(vectors)) if len(vectors) else None


def run_stack(
    persons: Tensor,
    objects: Tensor | None,
    context: Tensor,
    memory: Tensor | None,
    params: Mapping[str, Tensor],
    config: StackConfig,
) -> tuple[Tensor, Tensor]:
    """Apply the configured blocks, then pool with the context.

    Returns ``(interaction_features, enhanced_persons)``, both N x D with row
    i belonging to input person i.
    """
    if context.shape != (1, persons.shape[1]):
        raise DimensionError(f"context shape {context.shape} does not match persons {persons.shape}")
    keys = {"object": objects, "context": context, "memory": memory}
    h = persons
    for block in config.order:
        h = person_block(h, params) if block == "person" else cross_block(h, keys[block], params, block)
    pooled = T.mean_pool_pair(h, T.repeat_rows(context, persons.shape[0]))
    return pooled, h


def interaction_features(
    bundle: FrameBundle,
    memory: Sequence[np.ndarray],
    params: Mapping[str, Tensor],
    config: StackConfig,
    persons: Sequence[Person] | None = None,
) -> Tensor:
    """Per-person interaction features (N x D) for one frame.

    ``persons`` defaults to all persons in the bundle; objects are those
    overlapping any of them.
    """
    persons = list(bundle.persons if persons is None else persons)
    if not persons:
        raise UsageError(f"frame {bundle.key} has no persons to score")
    pooled, _ = run_stack(
        Tensor(np.stack([p.feat for p in persons])),
        _rows([o.feat for o in select_objects(bundle, persons)]),
        Tensor(bundle.context.reshape(1, -1)),
        _rows(list(memory)),
        params,
        config,
    )
    return pooled
