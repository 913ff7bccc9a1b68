"""Dense float64 tensors with a reverse-mode autodiff tape.

Every primitive computes eagerly with numpy and, when a Tape is active and
some input requires gradients, records one node holding a backward closure.
``Tape.backward`` replays the nodes once, in exact reverse execution order,
accumulating gradients into ``Tensor.grad``.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteValue, NotScalar, ShapeMismatch, StaleTape

_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


class Tensor:
    """A float64 array plus gradient metadata."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the functions below do the work
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Ordered record of executed primitives for one backward pass."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss: Tensor):
        """Populate .grad on every requires_grad tensor reachable from loss.

        Gradients accumulate into existing .grad buffers, so repeated
        backward calls on *different* tapes sum (used for batching). Calling
        backward twice on the same tape raises StaleTape.
        """
        if self._consumed:
            raise StaleTape("tape already consumed by a previous backward()")
        self._consumed = True
        if loss.size != 1:
            raise NotScalar(f"backward() needs a scalar loss, got shape {loss.shape}")
        seed = np.ones_like(loss.data)
        loss.grad = seed if loss.grad is None else loss.grad + seed
        for out, inputs, backward_fn in reversed(self._nodes):
            g = out.grad
            if g is None:
                continue
            input_grads = backward_fn(g)
            for t, ig in zip(inputs, input_grads):
                if ig is None or not t.requires_grad:
                    continue
                t.grad = ig if t.grad is None else t.grad + ig


def _record(out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable):
    stack = _tape_stack()
    if stack and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        stack[-1]._nodes.append((out, tuple(inputs), backward_fn))


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"non-finite value produced by {op}")
    return arr


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x, requires_grad=False)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(_finite(a.data + b.data, "add"))
    except ValueError as e:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}") from e
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(_finite(a.data - b.data, "sub"))
    except ValueError as e:
        raise ShapeMismatch(f"sub: {a.shape} vs {b.shape}") from e
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(_finite(a.data * b.data, "mul"))
    except ValueError as e:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from e
    ad, bd = a.data, b.data
    _record(out, (a, b), lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = Tensor(_finite(a.data / b.data, "div"))
    except ValueError as e:
        raise ShapeMismatch(f"div: {a.shape} vs {b.shape}") from e
    ad, bd = a.data, b.data
    _record(out, (a, b), lambda g: (
        _unbroadcast(g / bd, a.shape),
        _unbroadcast(-g * ad / (bd * bd), b.shape),
    ))
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)
    _record(out, (a,), lambda g: (-g,))
    return out


def smul(a, c: float) -> Tensor:
    """Multiply by a constant python scalar (not a learnable Tensor)."""
    a = as_tensor(a)
    c = float(c)
    out = Tensor(_finite(a.data * c, "smul"))
    _record(out, (a,), lambda g: (g * c,))
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0
    _record(out, (a,), lambda g: (g * mask,))
    return out


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(_finite(np.logaddexp(0.0, a.data), "softplus"))
    with np.errstate(over="ignore"):
        sig = np.where(a.data >= 0,
                       1.0 / (1.0 + np.exp(-np.abs(a.data))),
                       np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    _record(out, (a,), lambda g: (g * sig,))
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = _finite(np.sqrt(a.data), "sqrt")
    out = Tensor(out_data)

    def backward(g):
        # subgradient 0 at exactly zero
        denom = np.where(out_data > 0.0, 2.0 * out_data, np.inf)
        return (g / denom,)

    _record(out, (a,), backward)
    return out


def abs_(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.abs(a.data))
    sign = np.sign(a.data)
    _record(out, (a,), lambda g: (g * sign,))
    return out


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    out = Tensor(_finite(a.data @ b.data, "matmul"))
    ad, bd = a.data, b.data
    _record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))
    return out


def affine(x, w, b) -> Tensor:
    """Fused multiply-add: x @ w + b (b broadcasts over rows)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(f"affine: {x.shape} @ {w.shape} + {b.shape}")
    out = Tensor(_finite(x.data @ w.data + b.data, "affine"))
    xd, wd = x.data, w.data
    _record(out, (x, w, b), lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))
    return out


def transpose(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.T)
    _record(out, (a,), lambda g: (g.T,))
    return out


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    old = a.shape
    _record(out, (a,), lambda g: (g.reshape(old),))
    return out


def concat(parts, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    try:
        out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    except ValueError as e:
        raise ShapeMismatch(f"concat along axis {axis}: {[p.shape for p in parts]}") from e
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    _record(out, tuple(parts), backward)
    return out


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data[start:stop])
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    _record(out, (a,), backward)
    return out


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data[:, start:stop])
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    _record(out, (a,), backward)
    return out


# -- reductions -------------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    _record(out, (a,), backward)
    return out


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    shape = a.shape
    n = a.size if axis is None else shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    _record(out, (a,), backward)
    return out


# -- row-wise nonlinearities --------------------------------------------------

def row_softmax(a) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(_finite(s, "row_softmax"))

    def backward(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    _record(out, (a,), backward)
    return out


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = Tensor(_finite(z - lse, "log_softmax"))
    s = np.exp(z - lse)

    def backward(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    _record(out, (a,), backward)
    return out


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean, unit variance. No affine; compose one
    from mul/add when learnable scale and shift are wanted."""
    a = as_tensor(a)
    if eps <= 0:
        raise ValueError("layer_norm eps must be > 0")
    mu = a.data.mean(axis=-1, keepdims=True)
    var = ((a.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out = Tensor(_finite(xhat, "layer_norm"))
    n = a.shape[-1]

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    _record(out, (a,), backward)
    return out


# -- row geometry -------------------------------------------------------------

def unit_rows(a) -> Tensor:
    """Scale each row to unit L2 norm."""
    a = as_tensor(a)
    norms = np.linalg.norm(a.data, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise NonFiniteValue("unit_rows: zero-norm row")
    y = a.data / norms
    out = Tensor(y)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - y * dot) / norms,)

    _record(out, (a,), backward)
    return out


def sign_canonical_rows(a) -> Tensor:
    """Flip each row so its largest-magnitude component is positive.

    The per-row sign is treated as a constant in the backward pass (it is
    piecewise constant in the input).
    """
    a = as_tensor(a)
    idx = np.abs(a.data).argmax(axis=-1)
    picked = np.take_along_axis(a.data, idx[..., None], axis=-1)
    s = np.where(picked < 0.0, -1.0, 1.0)
    out = Tensor(a.data * s)
    _record(out, (a,), lambda g: (g * s,))
    return out


def row_norm(a) -> Tensor:
    """Per-row L2 norm of a 2-D tensor, returned as a column (n, 1)."""
    a = as_tensor(a)
    norms = np.linalg.norm(a.data, axis=-1, keepdims=True)
    out = Tensor(norms)
    ad = a.data

    def backward(g):
        safe = np.where(norms > 0.0, norms, np.inf)
        return (g * ad / safe,)

    _record(out, (a,), backward)
    return out


def row_angle(a, b) -> Tensor:
    """Per-row angle in radians between corresponding rows of a and b.

    Cosines are clipped to [-1, 1] so equal rows give exactly 0; the
    gradient is zeroed where the clip is active (|cos| within 1e-9 of 1).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"row_angle: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a.data, axis=-1, keepdims=True)
    nb = np.linalg.norm(b.data, axis=-1, keepdims=True)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise NonFiniteValue("row_angle: zero-norm row")
    c = (a.data * b.data).sum(axis=-1, keepdims=True) / (na * nb)
    cc = np.clip(c, -1.0, 1.0)
    out = Tensor(np.arccos(cc))
    ad, bd = a.data, b.data

    def backward(g):
        interior = np.abs(cc) < 1.0 - 1e-9
        dtheta = np.where(interior, -1.0 / np.sqrt(np.maximum(1.0 - cc * cc, 1e-300)), 0.0)
        gc = g * dtheta
        da = gc * (bd / (na * nb) - cc * ad / (na * na))
        db = gc * (ad / (na * nb) - cc * bd / (nb * nb))
        return (da, db)

    _record(out, (a, b), backward)
    return out


def cosine_similarity_matrix(a) -> Tensor:
    """G[i, j] = cosine similarity between rows i and j of a."""
    u = unit_rows(a)
    return matmul(u, transpose(u))
