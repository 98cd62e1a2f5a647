"""Interaction-aware prompting of label text embeddings.

Each prompt block lets the label embeddings (queries) attend to a person's
interaction tokens (keys/values) with multi-head attention, then applies a
row-wise feed-forward network, both with raw residual adds::

    C_bar = C + MSA(C, tokens)
    C_hat = C_bar + FFN(C_bar)

Blocks are chained, and the final per-person label set is ``C + C_hat``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError, UsageError
from .tensor import Tensor

TOKEN_MODES = ("pooled", "rich")
PROMPT_ROLES = ("w_q", "w_k", "w_v", "w_o", "ffn_w1", "ffn_w2")


@dataclass(frozen=True)
class PromptConfig:
    """``tokens='pooled'`` uses the single interaction feature as key/value;
    ``'rich'`` adds the enhanced person feature and the frame context."""

    enabled: bool = True
    blocks: int = 2
    heads: int = 4
    hidden: int | None = None
    tokens: str = "pooled"

    def __post_init__(self):
        if self.blocks < 1:
            raise UsageError("prompt blocks must be >= 1")
        if self.heads < 1:
            raise UsageError("prompt heads must be >= 1")
        if self.tokens not in TOKEN_MODES:
            raise UsageError(f"token mode must be one of {TOKEN_MODES}")

    def hidden_dim(self, dim: int) -> int:
        return self.hidden if self.hidden is not None else 4 * dim

    def check(self, dim: int) -> None:
        if dim % self.heads:
            raise DimensionError(f"{self.heads} heads do not divide dimension {dim}")


def param_name(block: int, role: str) -> str:
    return f"prompt.{block}.{role}"


def init_prompt_params(dim: int, config: PromptConfig, rng: np.random.Generator,
                       mode: str = "uniform") -> dict[str, np.ndarray]:
    if not config.enabled:
        return {}
    if mode not in ("uniform", "zeros"):
        raise UsageError(f"unknown init mode '{mode}'")
    config.check(dim)
    hidden = config.hidden_dim(dim)
    shapes = {"w_q": (dim, dim), "w_k": (dim, dim), "w_v": (dim, dim), "w_o": (dim, dim),
              "ffn_w1": (dim, hidden), "ffn_w2": (hidden, dim)}
    params = {}
    for k in range(config.blocks):
        for role in PROMPT_ROLES:
            shape = shapes[role]
            bound = 1.0 / math.sqrt(shape[0])
            params[param_name(k, role)] = (
                rng.uniform(-bound, bound, size=shape) if mode == "uniform" else np.zeros(shape)
            )
    return params


def multi_head_attention(queries: Tensor, tokens: Tensor, params: Mapping[str, Tensor],
                         block: int, heads: int) -> Tensor:
    d = queries.shape[1]
    if tokens.ndim != 2 or tokens.shape[1] != d:
        raise DimensionError(f"prompt tokens shape {tokens.shape} vs label width {d}")
    dh = d // heads
    q = T.matmul(queries, params[param_name(block, "w_q")])
    k = T.matmul(tokens, params[param_name(block, "w_k")])
    v = T.matmul(tokens, params[param_name(block, "w_v")])
    w_o = params[param_name(block, "w_o")]
    out = None
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        logits = T.matmul(T.take_cols(q, lo, hi), T.transpose(T.take_cols(k, lo, hi)))
        weights = T.softmax_rows(T.scale(logits, 1.0 / math.sqrt(dh)))
        head = T.matmul(T.matmul(weights, T.take_cols(v, lo, hi)), T.take_rows(w_o, range(lo, hi)))
        out = head if out is None else T.add(out, head)
    return out


def feed_forward(x: Tensor, params: Mapping[str, Tensor], block: int) -> Tensor:
    hidden = T.gelu(T.matmul(x, params[param_name(block, "ffn_w1")]))
    return T.matmul(hidden, params[param_name(block, "ffn_w2")])


def prompt_block(labels: Tensor, tokens: Tensor, params: Mapping[str, Tensor],
                 block: int = 0, heads: int = 4) -> Tensor:
    """One attention + FFN block over L x D label embeddings."""
    if labels.ndim != 2:
        raise DimensionError(f"label embeddings must be L x D, got {labels.shape}")
    mixed = T.add(labels, multi_head_attention(labels, tokens, params, block, heads))
    return T.add(mixed, feed_forward(mixed, params, block))


def prompt_stack(labels: Tensor, tokens: Tensor, params: Mapping[str, Tensor], config: PromptConfig) -> Tensor:
    x = labels
    for k in range(config.blocks):
        x = prompt_block(x, tokens, params, k, config.heads)
    return x


def prompt_tokens(features: Tensor, enhanced: Tensor | None, context: Tensor | None,
                  i: int, config: PromptConfig) -> Tensor:
    """Key/value tokens for person ``i``."""
    pooled = T.take_rows(features, [i])
    if config.tokens == "pooled":
        return pooled
    if enhanced is None or context is None:
        raise UsageError("'rich' prompt tokens need the enhanced persons and the context")
    return T.concat_rows([pooled, T.take_rows(enhanced, [i]), context])


def prompt_labels(
    labels: Tensor,
    features: Tensor,
    params: Mapping[str, Tensor],
    config: PromptConfig,
    enhanced: Tensor | None = None,
    context: Tensor | None = None,
) -> list[Tensor]:
    """Per-person label sets ``C + PromptStack(C, tokens_i)``, one L x D tensor per row of ``features``.

    With prompting disabled every person gets ``labels`` unchanged.
    """
    n = features.shape[0]
    if not config.enabled:
        return [labels] * n
    if labels.shape[1] != features.shape[1]:
        raise DimensionError(f"label width {labels.shape[1]} vs feature width {features.shape[1]}")
    out = []
    for i in range(n):
        tokens = prompt_tokens(features, enhanced, context, i, config)
        out.append(T.add(labels, prompt_stack(labels, tokens, params, config)))
    return out


def stack_prompted(prompted: Sequence[Tensor]) -> np.ndarray:
    """N x L x D array of prompted label sets."""
    return np.stack([p.data for p in prompted])
