"""Central finite-difference checks against the analytic backward pass."""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import Tensor

FD_STEP = 1e-5
REL_FLOOR = 1e-8


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = FD_STEP,
                       entries: Sequence[int] | None = None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``x``, perturbed in place and restored.

    Only flat positions in ``entries`` are filled when given; the rest stay 0.
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if entries is None else entries):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def gradcheck(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
    inputs: Mapping[str, np.ndarray],
    h: float = FD_STEP,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Return the max relative error per named input.

    ``loss_fn`` receives a dict of tensors keyed like ``inputs`` and must return
    a scalar tensor. With ``max_entries``, each input larger than that is
    checked on a random subset of that many coordinates drawn from ``rng``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    values = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    tracked = {k: Tensor(v, requires_grad=True) for k, v in values.items()}
    loss_fn(tracked).backward()

    def evaluate() -> float:
        return loss_fn({k: Tensor(v) for k, v in values.items()}).item()

    errors = {}
    for name, value in values.items():
        analytic = tracked[name].grad
        if analytic is None:
            analytic = np.zeros_like(value)
        if max_entries is None or value.size <= max_entries:
            errors[name] = relative_error(analytic, numerical_gradient(evaluate, value, h))
            continue
        picked = rng.choice(value.size, size=max_entries, replace=False)
        numeric = numerical_gradient(evaluate, value, h, picked)
        errors[name] = relative_error(analytic.reshape(-1)[picked], numeric.reshape(-1)[picked])
    return errors
