"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Every primitive is a plain function taking :class:`Tensor` inputs and returning a
new :class:`Tensor` that remembers how to push its gradient back to its inputs.
The primitive set is deliberately small: enough to train a toy causal
transformer and a scalar value head, nothing more.

Broadcasting is limited to "bias rows": the second operand of ``add``, ``sub``
and ``mul`` may have shape ``a.shape[-1:]`` (or ``()`` when ``a`` is a vector).
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

# Finite stand-in for -inf in masked attention scores; exp() of it underflows to 0.
MASK_VALUE = -1e30

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805

ACTIVATIONS = ("relu", "gelu", "selu", "tanh", "silu", "sigmoid")

PRECISIONS = {"ref64": np.float64, "fast32": np.float32}


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible operand shapes."""


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(self, _wrap(other, self))

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.isfinite(data).all():
        raise FloatingPointError(f"{op}: produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _check_bias_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    if b.ndim <= 1 and a.ndim >= 1 and b.shape == a.shape[a.ndim - b.ndim:]:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


# ---------------------------------------------------------------------------
# Elementwise and linear-algebra primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_bias_shape("add", a, b)

    def bw(g):
        return g, _reduce_to(g, b.shape)

    return _make("add", a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_bias_shape("sub", a, b)

    def bw(g):
        return g, -_reduce_to(g, b.shape)

    return _make("sub", a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_bias_shape("mul", a, b)

    def bw(g):
        return g * b.data, _reduce_to(g * a.data, b.shape)

    return _make("mul", a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for ``(m,k)@(k,n)``, ``(m,k)@(k,)`` and batched ``(h,m,k)@(h,k,n)``."""
    ok = False
    if a.ndim == 2 and b.ndim in (1, 2):
        ok = a.shape[1] == b.shape[0]
    elif a.ndim == 3 and b.ndim == 3:
        ok = a.shape[0] == b.shape[0] and a.shape[2] == b.shape[1]
    if not ok:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        if a.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        return g @ b.data.transpose(0, 2, 1), a.data.transpose(0, 2, 1) @ g

    return _make("matmul", a.data @ b.data, (a, b), bw)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if math.prod(shape) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = list(parts)
    ax = axis % parts[0].ndim
    for p in parts[1:]:
        if p.ndim != parts[0].ndim or any(
            p.shape[i] != parts[0].shape[i] for i in range(p.ndim) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {[q.shape for q in parts]}")
    splits = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make("concat", np.concatenate([p.data for p in parts], axis=ax), parts, bw)


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select rows (first-axis entries) of ``x``; repeated indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"gather_rows: index out of range for shape {x.shape}")

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make("gather_rows", x.data[idx], (x,), bw)


def embedding(table: Tensor, ids) -> Tensor:
    """Look up rows of an embedding table."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2 or ids.ndim != 1:
        raise ShapeError(f"embedding: need 2-d table and 1-d ids, got {table.shape}, {ids.shape}")
    out = gather_rows(table, ids)
    out.op = "embedding"
    return out


def reduce_sum(x: Tensor) -> Tensor:
    shape = x.shape
    return _make("reduce_sum", np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, g, dtype=x.dtype),))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise FloatingPointError("log: non-positive input")
    return _make("log", np.log(x.data), (x,), lambda g: (g / x.data,))


# ---------------------------------------------------------------------------
# Normalisation, softmax and activations
# ---------------------------------------------------------------------------


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make("softmax", y, (x,), bw)


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the last axis, evaluated with max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _make("log_softmax", y, (x,), bw)


def log_sigmoid(x: Tensor) -> Tensor:
    y = -np.logaddexp(0.0, -x.data)

    def bw(g):
        # d/dx log sigmoid(x) = sigmoid(-x)
        return (g * np.exp(-np.logaddexp(0.0, x.data)),)

    return _make("log_sigmoid", y, (x,), bw)


def rms_norm(x: Tensor, gain: Tensor | None = None, eps: float = 1e-6) -> Tensor:
    """Scale each last-axis row to unit RMS, then multiply by ``gain``."""
    if gain is not None and gain.shape != x.shape[-1:]:
        raise ShapeError(f"rms_norm: gain shape {gain.shape} does not match {x.shape}")
    n = x.shape[-1]
    inv = 1.0 / np.sqrt((x.data * x.data).mean(axis=-1, keepdims=True) + eps)
    xhat = x.data * inv
    out = xhat * gain.data if gain is not None else xhat

    def bw(g):
        gh = g * gain.data if gain is not None else g
        gx = inv * (gh - xhat * (gh * xhat).sum(axis=-1, keepdims=True) / n)
        if gain is None:
            return (gx,)
        return gx, _reduce_to(g * xhat, gain.shape)

    parents = (x,) if gain is None else (x, gain)
    return _make("rms_norm", out, parents, bw)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -v))


def activation(x: Tensor, kind: str) -> Tensor:
    v = x.data
    if kind == "relu":
        y = np.maximum(v, 0.0)
        d = (v > 0).astype(v.dtype)
    elif kind == "gelu":
        cdf = 0.5 * (1.0 + erf(v / math.sqrt(2.0)))
        pdf = np.exp(-0.5 * v * v) / math.sqrt(2.0 * math.pi)
        y = v * cdf
        d = cdf + v * pdf
    elif kind == "selu":
        neg = SELU_ALPHA * np.expm1(np.minimum(v, 0.0))
        y = SELU_SCALE * np.where(v > 0, v, neg)
        d = SELU_SCALE * np.where(v > 0, 1.0, neg + SELU_ALPHA)
    elif kind == "tanh":
        y = np.tanh(v)
        d = 1.0 - y * y
    elif kind == "silu":
        s = _sigmoid(v)
        y = v * s
        d = s * (1.0 + v * (1.0 - s))
    elif kind == "sigmoid":
        y = _sigmoid(v)
        d = y * (1.0 - y)
    else:
        raise ValueError(f"activation: unknown kind {kind!r}; expected one of {ACTIVATIONS}")
    y = y.astype(v.dtype, copy=False)
    d = d.astype(v.dtype, copy=False)
    return _make(kind, y, (x,), lambda g: (g * d,))


def causal_scores(q: Tensor, k: Tensor) -> Tensor:
    """Scaled dot-product scores ``q k^T / sqrt(dh)`` with future positions masked.

    Accepts ``(L, dh)`` or per-head ``(H, L, dh)`` operands. Masked entries hold
    :data:`MASK_VALUE`, which a following :func:`softmax` maps to exactly zero.
    """
    if q.shape != k.shape or q.ndim not in (2, 3):
        raise ShapeError(f"causal_scores: incompatible shapes {q.shape} and {k.shape}")
    L, dh = q.shape[-2], q.shape[-1]
    c = q.dtype.type(1.0 / math.sqrt(dh))
    future = np.triu(np.ones((L, L), dtype=bool), 1)
    kt = k.data.swapaxes(-1, -2)
    s = (q.data @ kt) * c
    s[..., future] = MASK_VALUE

    def bw(g):
        g = g.copy()
        g[..., future] = 0.0
        g = g * c
        return g @ k.data, g.swapaxes(-1, -2) @ q.data

    return _make("causal_scores", s, (q, k), bw)


# ---------------------------------------------------------------------------
# Backward pass and gradient checking
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
    if root.data.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(_topo_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor] | dict[str, Tensor],
    step: float = 1e-5,
    coords: int | None = None,
    seed: int = 0,
    normwise: bool = False,
) -> float:
    """Compare analytic gradients of ``f`` against central differences.

    Returns max over coordinates of ``|analytic - numeric| / max(1, |analytic|)``.
    With ``normwise`` the error is instead ``max|analytic - numeric| / max|analytic|``
    over every checked coordinate of every parameter. ``coords`` optionally limits
    the check to a random subset of coordinates per parameter.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    plist = list(params.values()) if isinstance(params, dict) else list(params)
    zero_grad(plist)
    out = f()
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("grad_check: f returned a non-finite value")
    out.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    diffs, mags = [0.0], [0.0]
    for p in plist:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        picks = np.arange(flat.size)
        if coords is not None and coords < flat.size:
            picks = rng.choice(flat.size, coords, replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            hi = float(flat[i])
            fp = f().item()
            flat[i] = orig - step
            lo = float(flat[i])
            fm = f().item()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise FloatingPointError("grad_check: f returned a non-finite value")
            # divide by the step actually taken; it differs from 2*step after rounding
            num = (fp - fm) / (hi - lo)
            a = float(analytic.reshape(-1)[i])
            diffs.append(abs(a - num))
            mags.append(abs(a))
            if not normwise:
                worst = max(worst, abs(a - num) / max(1.0, abs(a)))
    if normwise:
        worst = max(diffs) / max(max(mags), np.finfo(np.float64).tiny)
    zero_grad(plist)
    return worst
