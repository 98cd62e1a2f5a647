"""Small dense tensor engine with reverse-mode differentiation.

Only what the model needs: rank <= 3 float64 arrays, row-wise ops along the
last axis, rank-2 matmul. Every op records a closure that maps the output
gradient to parent gradients; ``Tensor.backward`` walks the graph once in
reverse topological order.

Non-finite values are rejected at op boundaries unless ``release_mode`` is
active.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, UsageError

LN_EPS = 1e-5
L2_EPS = 1e-12

_check_finite = True

# Test hook: names of ops whose backward is deliberately corrupted.
FAULTS: set[str] = set()


@contextlib.contextmanager
def release_mode():
    """Tolerate NaN/Inf silently inside the block."""
    global _check_finite
    previous = _check_finite
    _check_finite = False
    try:
        yield
    finally:
        _check_finite = previous


def _ensure_finite(data: np.ndarray, where: str) -> None:
    # The sum is non-finite iff some entry is (or the total overflows, which is an error too).
    if _check_finite and not math.isfinite(data.sum()):
        raise NumericError(f"{where}: non-finite value encountered")


class Tensor:
    """A float64 array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 3:
            raise DimensionError(f"rank {arr.ndim} exceeds the supported maximum of 3")
        if any(n == 0 for n in arr.shape):
            raise DimensionError(f"empty extent in shape {arr.shape}")
        _ensure_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def backward(self) -> dict["Tensor", np.ndarray]:
        """Accumulate d(self)/d(leaf) into every tracked leaf's ``grad``.

        Returns a map from each tracked leaf reached to its accumulated
        gradient. Calling twice without ``zero_grad`` accumulates.
        """
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return {}
        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        leaves: dict[Tensor, np.ndarray] = {}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                leaves[node] = node.grad
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg
        return leaves


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    _ensure_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        if op in FAULTS:
            inner = backward
            backward = lambda g: tuple(None if x is None else 1.5 * x for x in inner(g))  # noqa: E731
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose needs rank 2, got shape {a.shape}")
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(x: Tensor, alpha: float) -> Tensor:
    alpha = float(alpha)
    return _result(alpha * x.data, (x,), lambda g: (alpha * g,), "scale")


def mean_pool_pair(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise average of two same-shaped tensors."""
    _same_shape(a, b, "mean_pool_pair")
    return _result(0.5 * (a.data + b.data), (a, b), lambda g: (0.5 * g, 0.5 * g), "mean_pool_pair")


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def repeat_rows(x: Tensor, n: int) -> Tensor:
    """Stack a single row ``n`` times: (1, D) or (D,) -> (n, D)."""
    row = x.data.reshape(1, -1) if x.ndim == 1 or x.shape[0] == 1 else None
    if row is None or x.ndim > 2:
        raise DimensionError(f"repeat_rows needs a single row, got shape {x.shape}")
    shape = x.shape
    return _result(np.repeat(row, n, axis=0), (x,), lambda g: (g.sum(axis=0).reshape(shape),), "repeat_rows")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise DimensionError("concat_rows needs at least one tensor")
    width = parts[0].shape[1:]
    for p in parts:
        if p.ndim != 2 or p.shape[1:] != width:
            raise DimensionError(f"concat_rows: incompatible shapes {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=0), tuple(parts), backward, "concat_rows")


def take_rows(x: Tensor, index: Iterable[int]) -> Tensor:
    idx = np.asarray(list(index), dtype=np.int64)
    if x.ndim != 2 or idx.size == 0 or idx.min() < 0 or idx.max() >= x.shape[0]:
        raise DimensionError(f"take_rows: bad index {idx.tolist()} for shape {x.shape}")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _result(x.data[idx], (x,), backward, "take_rows")


def take_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"take_cols: bad range [{start}, {stop}) for shape {x.shape}")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _result(x.data[:, start:stop].copy(), (x,), backward, "take_cols")


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis, stabilised by subtracting the row max."""
    if np.any(np.isnan(x.data)):
        raise NumericError("softmax_rows: NaN input")
    z = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    y = z / z.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward, "softmax_rows")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise each row to zero mean / unit variance, then apply gain and bias."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: input width {d} vs gain {gain.shape}, bias {bias.shape}")
    if eps <= 0:
        raise UsageError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    gd = gain.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        dxhat = g * gd
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gd + bias.data, (x, gain, bias), backward, "layer_norm")


def l2_normalize(x: Tensor, eps: float = L2_EPS) -> Tensor:
    norms = np.sqrt((x.data ** 2).sum(axis=-1, keepdims=True))
    if np.any(norms <= eps):
        bad = np.argwhere(norms[..., 0] <= eps)[0]
        raise NumericError(f"l2_normalize: row {tuple(int(i) for i in bad)} has norm <= {eps}")
    y = x.data / norms

    def backward(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norms,)

    return _result(y, (x,), backward, "l2_normalize")


_GELU_K = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    t = np.tanh(_GELU_K * (xd + 0.044715 * xd ** 3))

    def backward(g):
        dt = (1.0 - t ** 2) * _GELU_K * (1.0 + 3 * 0.044715 * xd ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * dt),)

    return _result(0.5 * xd * (1.0 + t), (x,), backward, "gelu")


def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log-softmax of the target column of each row."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy needs rank-2 logits, got {logits.shape}")
    n, k = logits.shape
    t = np.asarray(list(targets), dtype=np.int64)
    if t.shape != (n,):
        raise DimensionError(f"cross_entropy: {t.size} targets for {n} rows")
    if np.any(t < 0) or np.any(t >= k):
        raise UsageError(f"cross_entropy: target out of range [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -log_p[np.arange(n), t].mean()

    def backward(g):
        d = np.exp(log_p)
        d[np.arange(n), t] -= 1.0
        return (d * (g / n),)

    return _result(np.array(loss), (logits,), backward, "cross_entropy")
