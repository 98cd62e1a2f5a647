"""Gradient-check suite over random micro-instances.

Each check builds a small random problem from a seed and returns the max
relative error between backprop and central differences, per named input.
Used by the test-suite and by ``iclip gradcheck``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import tensor as T
from .gradcheck import gradcheck
from .interaction import StackConfig, init_stack_params, run_stack
from .model import cosine_rows
from .prompting import PromptConfig, init_prompt_params, prompt_block, prompt_labels
from .tensor import Tensor
from .training import contrastive_loss

TOLERANCE = 1e-4
# Coordinates sampled per parameter tensor in the heavy checks; None = all.
SAMPLED = 4
# The end-to-end checks touch ~30 tensors and each probe re-runs the whole model.
SAMPLED_END_TO_END = 2


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar functional sum(out * W) with fixed random W."""
    return T.sum_all(T.mul(out, Tensor(weights.reshape(out.shape))))


def _perturbed(params: dict[str, np.ndarray], rng: np.random.Generator) -> dict[str, np.ndarray]:
    # Move LN gains/biases off their constant init so every path carries signal.
    out = {}
    for k, v in params.items():
        out[k] = v + rng.normal(scale=0.3, size=v.shape) if "ln_" in k else v
    return out


def check_matmul(seed: int) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(3, 2))
    return gradcheck(lambda t: _weighted_sum(T.matmul(t["a"], t["b"]), w),
                     {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 2))})


def check_softmax(seed: int) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(3, 5))
    return gradcheck(lambda t: _weighted_sum(T.softmax_rows(t["x"]), w), {"x": rng.normal(size=(3, 5))})


def check_layer_norm(seed: int) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(2, 8))
    return gradcheck(
        lambda t: _weighted_sum(T.layer_norm(t["x"], t["gain"], t["bias"]), w),
        {"x": rng.normal(size=(2, 8)), "gain": rng.normal(size=8), "bias": rng.normal(size=8)},
    )


def check_l2_normalize(seed: int) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(3, 5))
    return gradcheck(lambda t: _weighted_sum(T.l2_normalize(t["x"]), w), {"x": rng.normal(size=(3, 5))})


def check_elementwise(seed: int) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(3, 4))

    def f(t):
        pooled = T.mean_pool_pair(T.add(t["a"], t["b"]), T.scale(t["a"], -0.7))
        return _weighted_sum(T.gelu(T.mul(pooled, t["b"])), w)

    return gradcheck(f, {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(3, 4))})


def check_fan_out(seed: int) -> dict[str, float]:
    """One leaf feeding several consumers."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(3, 3))

    def f(t):
        x = t["x"]
        return _weighted_sum(T.add(T.matmul(x, T.transpose(x)), T.softmax_rows(T.matmul(x, T.transpose(x)))), w)

    return gradcheck(f, {"x": rng.normal(size=(3, 4))})


def check_indexing(seed: int) -> dict[str, float]:
    """Row/column selection, concatenation, row broadcasting and the full sum."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(5, 2))

    def f(t):
        x = t["x"]
        picked = T.take_rows(x, [2, 0, 2])
        rows = T.concat_rows([picked, T.repeat_rows(t["row"], 2)])
        return _weighted_sum(T.take_cols(rows, 1, 3), w)

    return gradcheck(f, {"x": rng.normal(size=(3, 4)), "row": rng.normal(size=(1, 4))})


def _micro_instance(seed: int, dim: int = 8, n_persons: int = 3, n_objects: int = 2, n_memory: int = 2):
    rng = np.random.default_rng(seed)
    return rng, {
        "persons": rng.normal(size=(n_persons, dim)),
        "objects": rng.normal(size=(n_objects, dim)),
        "context": rng.normal(size=(1, dim)),
        "memory": rng.normal(size=(n_memory, dim)),
    }


def check_interaction_stack(seed: int, entries: int | None = SAMPLED) -> dict[str, float]:
    """Every block parameter of the full P->O->C->M stack (N=2, 1 object, 1 memory context, D=8)."""
    rng, data = _micro_instance(seed, n_persons=2, n_objects=1, n_memory=1)
    cfg = StackConfig()
    params = _perturbed(init_stack_params(8, cfg, rng), rng)
    w = rng.normal(size=(2, 8))
    fixed = {k: Tensor(v) for k, v in data.items()}

    def f(t):
        pooled, _ = run_stack(fixed["persons"], fixed["objects"], fixed["context"], fixed["memory"], t, cfg)
        return _weighted_sum(pooled, w)

    return gradcheck(f, params, max_entries=entries, rng=rng)


def check_prompt_block(seed: int, entries: int | None = SAMPLED) -> dict[str, float]:
    """One prompt block (L=3, D=8, H=2, F=16) w.r.t. weights, labels and the key token."""
    rng = np.random.default_rng(seed)
    cfg = PromptConfig(blocks=1, heads=2, hidden=16)
    inputs = dict(init_prompt_params(8, cfg, rng))
    inputs["labels"] = rng.normal(size=(3, 8))
    inputs["token"] = rng.normal(size=(1, 8))
    w = rng.normal(size=(3, 8))
    return gradcheck(lambda t: _weighted_sum(prompt_block(t["labels"], t["token"], t, 0, 2), w), inputs,
                     max_entries=entries, rng=rng)


def check_contrastive_loss(seed: int) -> dict[str, float]:
    """Loss w.r.t. raw (pre-normalization) features and label sets."""
    rng = np.random.default_rng(seed)
    n, labels, dim = 3, 4, 8
    inputs = {"features": rng.normal(size=(n, dim))}
    for i in range(n):
        inputs[f"labels{i}"] = rng.normal(size=(labels, dim))
    targets = rng.integers(labels, size=n).tolist()
    return gradcheck(
        lambda t: contrastive_loss(t["features"], [t[f"labels{i}"] for i in range(n)], targets, 0.5),
        inputs,
    )


def end_to_end_loss(params: Mapping[str, Tensor], data: Mapping[str, Tensor], labels: Tensor,
                    targets, stack: StackConfig, prompt: PromptConfig, tau: float) -> Tensor:
    pooled, enhanced = run_stack(data["persons"], data["objects"], data["context"], data["memory"], params, stack)
    label_sets = prompt_labels(labels, pooled, params, prompt, enhanced, data["context"])
    return contrastive_loss(pooled, label_sets, targets, tau)


def check_end_to_end(seed: int, tokens: str = "pooled", entries: int | None = SAMPLED_END_TO_END) -> dict[str, float]:
    """Full stack + prompting + contrastive loss on N=3, L=4, D=8."""
    rng, data = _micro_instance(seed)
    stack = StackConfig()
    prompt = PromptConfig(blocks=2, heads=2, hidden=16, tokens=tokens)
    params = _perturbed(init_stack_params(8, stack, rng), rng)
    params.update(init_prompt_params(8, prompt, rng))
    labels = Tensor(rng.normal(size=(4, 8)))
    targets = rng.integers(4, size=3).tolist()
    fixed = {k: Tensor(v) for k, v in data.items()}
    return gradcheck(lambda t: end_to_end_loss(t, fixed, labels, targets, stack, prompt, 0.1), params,
                     max_entries=entries, rng=rng)


@dataclass(frozen=True)
class Check:
    name: str
    fn: Callable[[int], dict[str, float]]
    ops: tuple[str, ...]


CHECKS = (
    Check("matmul", check_matmul, ("matmul",)),
    Check("softmax_rows", check_softmax, ("softmax_rows",)),
    Check("layer_norm", check_layer_norm, ("layer_norm",)),
    Check("l2_normalize", check_l2_normalize, ("l2_normalize",)),
    Check("elementwise", check_elementwise, ("add", "scale", "mean_pool_pair", "mul", "gelu")),
    Check("fan_out", check_fan_out, ("matmul", "transpose", "softmax_rows")),
    Check("indexing", check_indexing, ("take_rows", "concat_rows", "repeat_rows", "take_cols", "sum")),
    Check("interaction_stack", check_interaction_stack, ()),
    Check("prompt_block", check_prompt_block, ()),
    Check("contrastive_loss", check_contrastive_loss, ("cross_entropy",)),
    Check("end_to_end", check_end_to_end, ()),
    Check("end_to_end_rich_tokens", lambda s: check_end_to_end(s, "rich"), ()),
)


def run_checks(seeds, checks=CHECKS) -> list[tuple[str, float]]:
    """(check name, worst relative error over seeds and inputs) per check."""
    rows = []
    for check in checks:
        worst = 0.0
        for seed in seeds:
            worst = max(worst, max(check.fn(seed).values()))
        rows.append((check.name, worst))
    return rows
