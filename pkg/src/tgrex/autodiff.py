"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation allocates fresh arrays and records a backward closure, so
values are effectively immutable once created. Gradients accumulate into
``Tensor.grad`` across repeated ``backward`` calls until explicitly cleared
with ``zero_grads``; training code is expected to clear before each backward
pass. All math is double precision and deterministic: no operation draws
random numbers (seeded initializers live with the model code).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "constant",
    "parameter",
    "add",
    "mul",
    "neg",
    "sub",
    "matmul",
    "transpose",
    "concat",
    "gather_rows",
    "scatter_rows",
    "log",
    "sum_all",
    "softmax_rows",
    "layer_norm",
    "weighted_cross_entropy",
    "backward",
    "zero_grads",
]


class Tensor:
    """A node in the computation graph holding a float64 array."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    """A trainable leaf. ``grad`` stays ``None`` until first cleared or reached."""
    return Tensor(data, requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_holder = []

    def _bk():
        g = out_holder[0].grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    out = _make(a.data + b.data, (a, b), _bk)
    out_holder.append(out)
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out_holder = []

    def _bk():
        if a.requires_grad:
            a._accumulate(-out_holder[0].grad)

    out = _make(-a.data, (a,), _bk)
    out_holder.append(out)
    return out


def sub(a, b) -> Tensor:
    return add(a, neg(b))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_holder = []

    def _bk():
        g = out_holder[0].grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    out = _make(a.data * b.data, (a, b), _bk)
    out_holder.append(out)
    return out


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul expects 2-D operands, got shapes {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}"
        )
    out_holder = []

    def _bk():
        g = out_holder[0].grad
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    out = _make(a.data @ b.data, (a, b), _bk)
    out_holder.append(out)
    return out


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    out_holder = []

    def _bk():
        if a.requires_grad:
            a._accumulate(out_holder[0].grad.T)

    out = _make(a.data.T, (a,), _bk)
    out_holder.append(out)
    return out


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat needs at least one input")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    out_holder = []

    def _bk():
        g = out_holder[0].grad
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p._accumulate(g[tuple(sl)])

    out = _make(np.concatenate([p.data for p in parts], axis=axis), parts, _bk)
    out_holder.append(out)
    return out


def gather_rows(a, indices) -> Tensor:
    """Select rows of a 2-D tensor; duplicate indices are allowed."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"gather_rows expects a 2-D tensor, got shape {a.data.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise IndexError(f"gather_rows index out of range for {a.data.shape[0]} rows")
    out_holder = []

    def _bk():
        if a.requires_grad:
            da = np.zeros_like(a.data)
            np.add.at(da, idx, out_holder[0].grad)
            a._accumulate(da)

    out = _make(a.data[idx], (a,), _bk)
    out_holder.append(out)
    return out


def scatter_rows(rows, indices, total_rows: int) -> Tensor:
    """Place the rows of a (k, d) tensor at distinct row positions in a zero (n, d) tensor."""
    rows = _as_tensor(rows)
    idx = np.asarray(indices, dtype=np.intp)
    if len(set(idx.tolist())) != idx.size:
        raise ValueError("scatter_rows requires distinct target indices")
    if idx.size and (idx.min() < 0 or idx.max() >= total_rows):
        raise IndexError(f"scatter_rows index out of range for {total_rows} rows")
    data = np.zeros((total_rows, rows.data.shape[1]), dtype=np.float64)
    data[idx] = rows.data
    out_holder = []

    def _bk():
        if rows.requires_grad:
            rows._accumulate(out_holder[0].grad[idx])

    out = _make(data, (rows,), _bk)
    out_holder.append(out)
    return out


def log(a) -> Tensor:
    a = _as_tensor(a)
    out_holder = []

    def _bk():
        if a.requires_grad:
            a._accumulate(out_holder[0].grad / a.data)

    out = _make(np.log(a.data), (a,), _bk)
    out_holder.append(out)
    return out


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out_holder = []

    def _bk():
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, out_holder[0].grad))

    out = _make(a.data.sum(), (a,), _bk)
    out_holder.append(out)
    return out


def softmax_rows(x) -> Tensor:
    """Numerically stabilized per-row softmax of an (n, k) tensor.

    Each output row is nonnegative and sums to 1 within 1e-12. Non-finite
    inputs are rejected with the offending row named.
    """
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ValueError(f"softmax_rows expects an (n, k) tensor, got shape {x.data.shape}")
    finite = np.isfinite(x.data)
    if not finite.all():
        row = int(np.nonzero(~finite.all(axis=1))[0][0])
        raise ValueError(f"softmax_rows: non-finite value in row {row}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    out_holder = []

    def _bk():
        g = out_holder[0].grad
        if x.requires_grad:
            inner = (g * p).sum(axis=1, keepdims=True)
            x._accumulate(p * (g - inner))

    out = _make(p, (x,), _bk)
    out_holder.append(out)
    return out


def layer_norm(x, gain, bias, eps: float) -> Tensor:
    """Per-row normalization: gain * (x - mean) / sqrt(var + eps) + bias.

    Mean and population variance are taken over the feature axis of an
    (n, d) tensor; gain and bias have d entries (either (d,) or (1, d)).
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if x.data.ndim != 2:
        raise ValueError(f"layer_norm expects an (n, d) tensor, got shape {x.data.shape}")
    d = x.data.shape[1]
    if gain.data.size != d or bias.data.size != d:
        raise ValueError(
            f"layer_norm gain/bias must have {d} entries, got {gain.data.size} and {bias.data.size}"
        )
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    gain_row = gain.data.reshape(1, d)
    bias_row = bias.data.reshape(1, d)
    mu = x.data.mean(axis=1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_holder = []

    def _bk():
        g = out_holder[0].grad
        if gain.requires_grad:
            gain._accumulate((g * xhat).sum(axis=0).reshape(gain.data.shape))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0).reshape(bias.data.shape))
        if x.requires_grad:
            dxhat = g * gain_row
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            x._accumulate(inv * (dxhat - m1 - xhat * m2))

    out = _make(xhat * gain_row + bias_row, (x, gain, bias), _bk)
    out_holder.append(out)
    return out


def weighted_cross_entropy(probs, gold, weights) -> Tensor:
    """Class-weighted negative log likelihood over (n, k) probability rows.

    Returns the scalar -sum_i weights[gold_i] * log(probs[i, gold_i]). The
    probability rows must already be normalized (they normally come out of
    ``softmax_rows``, making the composition differentiable with respect to
    the pre-softmax inputs).
    """
    probs = _as_tensor(probs)
    if probs.data.ndim != 2:
        raise ValueError(f"weighted_cross_entropy expects (n, k) probs, got {probs.data.shape}")
    n, k = probs.data.shape
    gold_idx = np.asarray(gold, dtype=np.intp)
    if gold_idx.ndim != 1 or gold_idx.size != n:
        raise ValueError(f"expected {n} gold indices, got shape {gold_idx.shape}")
    if gold_idx.size and (gold_idx.min() < 0 or gold_idx.max() >= k):
        raise IndexError(f"gold class index out of range [0, {k})")
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != k:
        raise ValueError(f"expected {k} class weights, got {w.size}")
    if (w <= 0).any():
        raise ValueError("class weights must be positive")
    row_sums = probs.data.sum(axis=1)
    if n and np.abs(row_sums - 1.0).max() > 1e-8:
        raise ValueError("probability rows must sum to 1")
    rows = np.arange(n)
    picked = probs.data[rows, gold_idx]
    loss_val = -(w[gold_idx] * np.log(picked)).sum() if n else 0.0
    out_holder = []

    def _bk():
        if probs.requires_grad:
            g = out_holder[0].grad
            dp = np.zeros_like(probs.data)
            dp[rows, gold_idx] = -w[gold_idx] / picked * g
            probs._accumulate(dp)

    out = _make(np.float64(loss_val), (probs,), _bk)
    out_holder.append(out)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every trainable tensor reachable from a scalar loss.

    Repeated calls accumulate; use ``zero_grads`` between passes.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    loss._accumulate(np.ones((), dtype=np.float64))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward()


def zero_grads(params) -> None:
    """Reset gradients of the given tensors to zero buffers."""
    for p in params:
        p.grad = np.zeros_like(p.data)
