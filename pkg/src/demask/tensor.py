"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ``np.ndarray`` together with an accumulated
gradient and a closure that propagates upstream gradients to its parents.
Calling :meth:`Tensor.backward` on a scalar loss topologically sorts the
graph and runs the closures in reverse order, exactly once each.

Design constraints kept deliberately tight:

* dtype is float32 by default, float64 for verification work; operands of
  mixed dtype are a hard error rather than silently promoted.
* broadcasting is allowed only when the lower-rank operand's shape equals
  the trailing shape of the higher-rank one (plus rank-0 scalars).  Any
  other shape mismatch is a hard error; use explicit reshape instead.
* reductions use numpy's pairwise summation, which is deterministic for a
  fixed thread count.
"""

from __future__ import annotations

import numpy as np

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """Differentiable array node.

    Parameters
    ----------
    data : array-like
        Forward value; coerced to float32 unless already float32/float64.
    requires_grad : bool
        Whether gradients should be accumulated into ``.grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._backward = None
        self._parents: tuple = ()
        self.name = name

    # ---- construction helpers -------------------------------------------

    @classmethod
    def constant(cls, data, dtype) -> "Tensor":
        return cls(np.asarray(data, dtype=dtype), requires_grad=False)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # ---- graph mechanics -------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar node through the whole graph."""
        if self.data.shape != ():
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones((), dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def _check_dtypes(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise TypeError(f"{op}: mixed dtypes {a.dtype} and {b.dtype}; cast explicitly")


def _broadcast_check(big: tuple, small: tuple, op: str) -> None:
    # Legal iff the smaller shape is a suffix of the larger one (or scalar).
    if small == () or big == small:
        return
    if len(small) <= len(big) and big[len(big) - len(small):] == small:
        return
    raise ValueError(f"{op}: shape {small} does not right-align with {big}; reshape explicitly")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient ``g`` over the leading axes broadcast added."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(extra)))
    return g


def _wrap(other, like: Tensor) -> Tensor:
    if isinstance(other, Tensor):
        return other
    return Tensor.constant(other, like.dtype)


# ---- elementwise arithmetic ---------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    _check_dtypes(a, b, "add")
    if a.ndim >= b.ndim:
        _broadcast_check(a.shape, b.shape, "add")
    else:
        _broadcast_check(b.shape, a.shape, "add")
    out = Tensor(a.data + b.data)
    out._parents = (a, b)

    def _backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_reduce_to(g, a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_reduce_to(g, b.shape))

    out._backward = _backward
    return out


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    _check_dtypes(a, b, "mul")
    if a.ndim >= b.ndim:
        _broadcast_check(a.shape, b.shape, "mul")
    else:
        _broadcast_check(b.shape, a.shape, "mul")
    out = Tensor(a.data * b.data)
    out._parents = (a, b)

    def _backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_reduce_to(g * b.data, a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_reduce_to(g * a.data, b.shape))

    out._backward = _backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of stacks: ``(..., m, k) @ (k, n)`` or equal leading dims."""
    _check_dtypes(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul requires rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul leading dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    out._parents = (a, b)

    def _backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad or b._parents:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_reduce_to(gb, b.shape))

    out._backward = _backward
    return out


# ---- shape manipulation ---------------------------------------------------


def reshape(a: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = Tensor(a.data.reshape(shape))
    out._parents = (a,)

    def _backward(g):
        a._accumulate(g.reshape(a.shape))

    out._backward = _backward
    return out


def transpose(a: Tensor, *axes) -> Tensor:
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if len(axes) != a.ndim:
        raise ValueError(f"transpose needs a full permutation of {a.ndim} axes, got {axes}")
    inv = np.argsort(axes)
    out = Tensor(a.data.transpose(axes))
    out._parents = (a,)

    def _backward(g):
        a._accumulate(g.transpose(inv))

    out._backward = _backward
    return out


# ---- reductions ------------------------------------------------------------


def sum_(a: Tensor, axis=None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis))
    out._parents = (a,)

    def _backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    out._backward = _backward
    return out


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


# ---- lookups ---------------------------------------------------------------


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a ``(V, d)`` table by an integer id array."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError(f"embedding ids must be integers, got dtype {ids.dtype}")
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= weight.shape[0]:
        raise ValueError("embedding id out of range")
    out = Tensor(weight.data[ids])
    out._parents = (weight,)

    def _backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids, g)
        weight._accumulate(gw)

    out._backward = _backward
    return out


def take_along_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one entry along the last axis per leading index: out[...] = a[..., idx[...]]."""
    idx = np.asarray(idx)
    if idx.shape != a.shape[:-1]:
        raise ValueError(f"index shape {idx.shape} must equal {a.shape[:-1]}")
    out = Tensor(np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0])
    out._parents = (a,)

    def _backward(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx[..., None], g[..., None], axis=-1)
        a._accumulate(ga)

    out._backward = _backward
    return out


# ---- nonlinearities ---------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    out._parents = (a,)

    def _backward(g):
        a._accumulate(g * (a.data > 0))

    out._backward = _backward
    return out


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    x = a.data
    u = _GELU_C * (x + _GELU_A * x**3)
    th = np.tanh(u)
    out = Tensor(0.5 * x * (1.0 + th))
    out._parents = (a,)

    def _backward(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
        local = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * du
        a._accumulate(g * local)

    out._backward = _backward
    return out


# ---- normalization and softmax ----------------------------------------------


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    m = a.data.max(axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)
    out._parents = (a,)

    def _backward(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        a._accumulate(s * (g - dot))

    out._backward = _backward
    return out


def log_softmax(a: Tensor) -> Tensor:
    """Log-softmax over the last axis, fused for numerical stability.

    Entries pushed to very large negative values (banned classes) receive
    exactly zero probability and exactly zero gradient.
    """
    m = a.data.max(axis=-1, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    out = Tensor(y)
    out._parents = (a,)

    def _backward(g):
        p = np.exp(y)
        a._accumulate(g - p * g.sum(axis=-1, keepdims=True))

    out._backward = _backward
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with learned gain and bias."""
    _check_dtypes(a, gain, "layer_norm")
    _check_dtypes(a, bias, "layer_norm")
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(gain.data * xhat + bias.data)
    out._parents = (a, gain, bias)

    def _backward(g):
        if gain.requires_grad or gain._parents:
            gain._accumulate(_reduce_to(g * xhat, gain.shape))
        if bias.requires_grad or bias._parents:
            bias._accumulate(_reduce_to(g, bias.shape))
        if a.requires_grad or a._parents:
            gx = g * gain.data
            # d/dx of (x - mu) * inv with mu, inv functions of x.
            ga = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            a._accumulate(ga)

    out._backward = _backward
    return out
