"""Reverse-mode automatic differentiation over dense float64 arrays.

Every op is a module-level function that returns a new :class:`Tensor`. When
any input requires a gradient, the result records its parents and a closure
mapping the output gradient to one gradient per parent. :func:`backward`
walks that graph in reverse topological order.

Broadcasting is deliberately narrow: a binary op accepts equal shapes, or a
right operand whose shape is a suffix of the left operand's shape (a bias row
broadcast over the leading axes).
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import erf

from .errors import (
    ConfigError,
    DimensionError,
    DomainError,
    EmptyReductionError,
    InvalidMaskError,
    ShapeError,
    TokenIndexError,
)

BCE_EPS = 1e-7
LN_EPS = 1e-12

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


@dataclass
class Parameter:
    """A named model tensor; ``trainable`` gates both gradients and updates."""

    name: str
    tensor: Tensor
    trainable: bool = True

    def __post_init__(self) -> None:
        self.tensor.requires_grad = self.trainable

    def set_trainable(self, flag: bool) -> None:
        self.trainable = flag
        self.tensor.requires_grad = flag
        if not flag:
            self.tensor.grad = None


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 2-D operands; leading batch axes are allowed on ``a``,
    and on ``b`` when they match ``a``'s exactly."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _result(ad @ bd, (a, b), backward, "matmul")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def index(a: Tensor, key) -> Tensor:
    """Basic or integer-array indexing; gradients scatter-add back."""
    old = a.shape

    def backward(g):
        ga = np.zeros(old)
        np.add.at(ga, key, g)
        return (ga,)

    return _result(np.array(a.data[key]), (a,), backward, "index")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise EmptyReductionError("concat of zero tensors")
    ax = axis % parts[0].ndim
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(p.shape, ref)) if i != ax):
            raise DimensionError(f"concat shape mismatch: {ref} vs {p.shape} on axis {ax}")
    splits = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return _result(np.concatenate([p.data for p in parts], axis=ax), tuple(parts), backward, "concat")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Join 1×d row vectors left to right into a 1×(d·n) row."""
    for p in parts:
        if p.ndim != 2 or p.shape[0] != 1:
            raise DimensionError(f"concat_rows expects 1xd parts, got {p.shape}")
    widths = {p.shape[1] for p in parts}
    if len(widths) > 1:
        raise DimensionError(f"concat_rows got mixed widths {sorted(widths)}")
    return concat(parts, axis=1)


# ---------------------------------------------------------------------------
# elementwise


def _check_broadcast(a: Tensor, b: Tensor) -> bool:
    if a.shape == b.shape:
        return False
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return True
    raise DimensionError(f"cannot broadcast {b.shape} onto {a.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead else g


def elementwise_binary(kind: str, a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    ad, bd = a.data, b.data
    bshape = b.shape
    if kind == "add":
        data = ad + bd

        def backward(g):
            return g, (_reduce_to(g, bshape) if b.requires_grad else None)
    elif kind == "sub":
        data = ad - bd

        def backward(g):
            return g, (_reduce_to(-g, bshape) if b.requires_grad else None)
    elif kind == "mul":
        data = ad * bd

        def backward(g):
            ga = g * bd if a.requires_grad else None
            gb = _reduce_to(g * ad, bshape) if b.requires_grad else None
            return ga, gb
    else:
        raise ConfigError(f"unknown binary op {kind!r}")
    return _result(data, (a, b), backward, kind)


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise_binary("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise_binary("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise_binary("mul", a, b)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _gelu(x):
    return x * 0.5 * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x, y):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# (forward, derivative(x, y)) per unary kind
UNARY_OPS: dict[str, tuple[Callable, Callable]] = {
    "gelu": (_gelu, _gelu_grad),
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
    "sigmoid": (_sigmoid, lambda x, y: y * (1.0 - y)),
    "exp": (np.exp, lambda x, y: y),
    "log": (np.log, lambda x, y: 1.0 / x),
}


def elementwise_unary(kind: str, a: Tensor) -> Tensor:
    try:
        fwd, _ = UNARY_OPS[kind]
    except KeyError:
        raise ConfigError(f"unknown unary op {kind!r}") from None
    x = a.data
    if kind == "log" and np.any(x <= 0):
        raise DomainError("log of non-positive entry")
    y = fwd(x)

    def backward(g):
        # looked up lazily so a patched derivative takes effect
        return (g * UNARY_OPS[kind][1](x, y),)

    return _result(y, (a,), backward, kind)


def gelu(a: Tensor) -> Tensor:
    return elementwise_unary("gelu", a)


def tanh(a: Tensor) -> Tensor:
    return elementwise_unary("tanh", a)


def sigmoid(a: Tensor) -> Tensor:
    return elementwise_unary("sigmoid", a)


def exp(a: Tensor) -> Tensor:
    return elementwise_unary("exp", a)


def log(a: Tensor) -> Tensor:
    return elementwise_unary("log", a)


# ---------------------------------------------------------------------------
# normalisation, attention and pooling primitives


def softmax_masked(scores: Tensor, mask) -> Tensor:
    """Softmax over the last axis; ``mask`` (0/1, broadcastable) zeroes entries."""
    m = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    if not np.all(m.any(axis=-1)):
        raise InvalidMaskError("softmax mask has a row with no unmasked entry")
    s = np.where(m, scores.data, -np.inf)
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (scores,), backward, "softmax_masked")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm affine shapes {gamma.shape}, {beta.shape} for width {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def backward(g):
        gx = gg = gb = None
        if x.requires_grad:
            dxhat = g * gd
            gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, d).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, d).sum(axis=0)
        return gx, gg, gb

    return _result(xhat * gd + beta.data, (x, gamma, beta), backward, "layer_norm")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; output shape is ``ids.shape + (d,)``."""
    ids = np.asarray(ids, dtype=np.int64)
    n_rows, d = table.shape
    if ids.size:
        bad = ids[(ids < 0) | (ids >= n_rows)]
        if bad.size:
            raise TokenIndexError(f"id {int(bad[0])} out of range for table of {n_rows} rows")
    out = table.data[ids] if ids.size else np.zeros(ids.shape + (d,))

    def backward(g):
        gt = np.zeros(table.shape)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, d))
        return (gt,)

    return _result(out, (table,), backward, "embedding_lookup")


def _expand_mask(mask, x: Tensor, axis: int) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.shape[: axis + 1]:
        raise DimensionError(f"reduce mask shape {m.shape} does not match {x.shape[:axis + 1]}")
    return np.broadcast_to(m.reshape(m.shape + (1,) * (x.ndim - axis - 1)), x.shape)


def reduce(kind: str, x: Tensor, axis: int = 0, mask=None) -> Tensor:
    """Mean or max along ``axis``; ``mask`` over ``x.shape[:axis+1]`` excludes entries.

    Max routes its gradient to the first maximal entry (lowest index).
    """
    axis = axis % x.ndim
    n = x.shape[axis]
    if n == 0:
        raise EmptyReductionError(f"{kind} over an empty axis")
    m = None if mask is None else _expand_mask(mask, x, axis)
    if m is not None and not np.all(m.any(axis=axis)):
        raise EmptyReductionError(f"{kind} over a fully masked slice")
    xd = x.data
    shape = x.shape
    if kind == "mean":
        if m is None:
            out = xd.sum(axis=axis) / n

            def backward(g):
                return (np.broadcast_to(np.expand_dims(g, axis), shape) / n,)
        else:
            mf = m.astype(np.float64)
            count = mf.sum(axis=axis)
            out = (xd * mf).sum(axis=axis) / count

            def backward(g):
                return (mf * np.expand_dims(g / count, axis),)
    elif kind == "max":
        src = xd if m is None else np.where(m, xd, -np.inf)
        arg = np.expand_dims(np.argmax(src, axis=axis), axis)
        out = np.take_along_axis(xd, arg, axis=axis).squeeze(axis)

        def backward(g):
            gx = np.zeros(shape)
            np.put_along_axis(gx, arg, np.expand_dims(g, axis), axis=axis)
            return (gx,)
    else:
        raise ConfigError(f"unknown reduction {kind!r}")
    return _result(out, (x,), backward, f"reduce_{kind}")


def tsum(x: Tensor) -> Tensor:
    """Sum of all entries as a 0-d tensor."""
    shape = x.shape
    return _result(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability {p} outside [0, 1)")
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("train-mode dropout needs a PRNG")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def bce_loss(probs: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy; probabilities are clamped to [1e-7, 1-1e-7]."""
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    if y.shape != probs.shape:
        raise DimensionError(f"bce_loss length mismatch: {probs.shape} vs {y.shape}")
    n = probs.size
    pc = np.clip(probs.data, BCE_EPS, 1.0 - BCE_EPS)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum() / n
    inside = (probs.data >= BCE_EPS) & (probs.data <= 1.0 - BCE_EPS)

    def backward(g):
        return (g * inside * (-(y / pc) + (1.0 - y) / (1.0 - pc)) / n,)

    return _result(np.array(loss), (probs,), backward, "bce_loss")


# ---------------------------------------------------------------------------
# graph traversal


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


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf that
    requires a gradient. Calling it twice on one graph doubles the result."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# verification


def relative_error(g_ad, g_fd):
    g_ad, g_fd = np.asarray(g_ad), np.asarray(g_fd)
    return np.abs(g_ad - g_fd) / np.maximum(1.0, np.abs(g_ad) + np.abs(g_fd))


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5, coords=None) -> float:
    """Max relative error between autodiff and central differences of ``f`` at ``x``.

    ``coords`` optionally restricts the check to a subset of flat indices.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    out = f(xt)
    backward(out)
    g_ad = np.zeros(x0.size) if xt.grad is None else xt.grad.reshape(-1)
    idx = range(x0.size) if coords is None else coords
    worst = 0.0
    with no_grad():
        for i in idx:
            xp = x0.copy().reshape(-1)
            xm = x0.copy().reshape(-1)
            xp[i] += h
            xm[i] -= h
            fp = f(Tensor(xp.reshape(x0.shape))).data.sum()
            fm = f(Tensor(xm.reshape(x0.shape))).data.sum()
            worst = max(worst, float(relative_error(g_ad[i], (fp - fm) / (2.0 * h))))
    return worst
