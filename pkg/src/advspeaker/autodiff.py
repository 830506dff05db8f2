"""Reverse-mode automatic differentiation over numpy float64 arrays.

Graphs are define-by-run: constructing an expression evaluates it eagerly
and records the adjoint closure needed by ``backward``. A fresh graph is
built on every forward pass, which is exactly what iterative attack loops
need. Constant subgraphs (no ``requires_grad`` leaf below them) carry no
tape and cost nothing at backward time.

Conventions baked in here:
  * everything is float64,
  * ReLU/clamp subgradient at the boundary is 0,
  * max / max-pool ties route the gradient to the lowest index,
  * ``backward`` only accepts scalar (size-1) losses.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

# Closed set of differentiable primitives this engine provides. Every name
# listed here has an adjoint rule and is covered by the gradient-check suite.
OPSET = (
    "add", "sub", "neg", "mul", "div", "pow", "matmul",
    "conv1d", "maxpool1d", "relu", "batchnorm",
    "softmax", "logsumexp", "log", "exp",
    "sum", "mean", "amax", "clamp",
    "gather_rows", "frame_signal", "reshape", "permute",
    "l2_norm", "cosine_similarity", "affine",
)


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op: str, message: str):
        super().__init__(f"{op}: {message}")
        self.op = op


class NonFiniteError(ArithmeticError):
    """A computation produced NaN/inf where finite values are required."""


class Value:
    """A node in the computation graph: an array plus an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Value, ...] = ()
        self._backward: Callable[[], None] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Value":
        return Value(self.data)

    def __repr__(self) -> str:
        return f"Value(op={self._op}, shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, other): return matmul(self, other)

    def sum(self, axis=None, keepdims=False): return reduce_sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return reduce_mean(self, axis, keepdims)
    def reshape(self, shape): return reshape(self, shape)
    def relu(self): return relu(self)
    def log(self): return log(self)
    def exp(self): return exp(self)

    @property
    def T(self) -> "Value":
        if self.ndim != 2:
            raise ShapeError("permute", f"T is defined for 2-D values, got {self.shape}")
        return permute(self, (1, 0))

    def backward(self) -> None:
        backward(self)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _node(data: np.ndarray, parents: tuple[Value, ...], op: str,
          backward_fn: Callable[[Value], None]) -> Value:
    out = Value(data)
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = lambda: backward_fn(out)
    return out


def _accum(v: Value, g: np.ndarray) -> None:
    if not v.requires_grad:
        return
    if v.grad is None:
        v.grad = np.zeros_like(v.data)
    v.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", f"cannot broadcast {a.shape} with {b.shape}") from None

    def bw(out: Value):
        _accum(a, _unbroadcast(out.grad, a.shape))
        _accum(b, _unbroadcast(out.grad, b.shape))

    return _node(data, (a, b), "add", bw)


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError("sub", f"cannot broadcast {a.shape} with {b.shape}") from None

    def bw(out: Value):
        _accum(a, _unbroadcast(out.grad, a.shape))
        _accum(b, _unbroadcast(-out.grad, b.shape))

    return _node(data, (a, b), "sub", bw)


def neg(a) -> Value:
    a = as_value(a)

    def bw(out: Value):
        _accum(a, -out.grad)

    return _node(-a.data, (a,), "neg", bw)


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", f"cannot broadcast {a.shape} with {b.shape}") from None

    def bw(out: Value):
        _accum(a, _unbroadcast(out.grad * b.data, a.shape))
        _accum(b, _unbroadcast(out.grad * a.data, b.shape))

    return _node(data, (a, b), "mul", bw)


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError("div", f"cannot broadcast {a.shape} with {b.shape}") from None

    def bw(out: Value):
        _accum(a, _unbroadcast(out.grad / b.data, a.shape))
        _accum(b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))

    return _node(data, (a, b), "div", bw)


def power(a, p: float) -> Value:
    a = as_value(a)
    p = float(p)
    data = a.data ** p

    def bw(out: Value):
        _accum(a, out.grad * p * a.data ** (p - 1.0))

    return _node(data, (a,), "pow", bw)


# ---------------------------------------------------------------------------
# linear algebra / structure

def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", f"requires (m,k)@(k,n), got {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(out: Value):
        _accum(a, out.grad @ b.data.T)
        _accum(b, a.data.T @ out.grad)

    return _node(data, (a, b), "matmul", bw)


def affine(x, w, b) -> Value:
    """x @ w + b with b broadcast over rows."""
    return add(matmul(x, w), b)


def reshape(a, shape) -> Value:
    a = as_value(a)
    shape = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape {a.shape} to {shape}") from None

    def bw(out: Value):
        _accum(a, out.grad.reshape(a.shape))

    return _node(data, (a,), "reshape", bw)


def permute(a, axes: Sequence[int]) -> Value:
    a = as_value(a)
    axes = tuple(int(i) for i in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("permute", f"axes {axes} invalid for ndim {a.ndim}")
    inverse = tuple(int(i) for i in np.argsort(axes))

    def bw(out: Value):
        _accum(a, out.grad.transpose(inverse))

    return _node(a.data.transpose(axes), (a,), "permute", bw)


def gather_rows(a, indices) -> Value:
    """out[i] = a[i, indices[i]] for a 2-D value."""
    a = as_value(a)
    idx = np.asarray(indices, dtype=np.int64)
    if a.ndim != 2 or idx.ndim != 1 or idx.shape[0] != a.shape[0]:
        raise ShapeError("gather_rows", f"need (n,k) value and (n,) indices, got {a.shape}, {idx.shape}")
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= a.shape[1]:
        raise ShapeError("gather_rows", f"index out of range for {a.shape[1]} columns")
    rows = np.arange(a.shape[0])

    def bw(out: Value):
        g = np.zeros_like(a.data)
        np.add.at(g, (rows, idx), out.grad)
        _accum(a, g)

    return _node(a.data[rows, idx], (a,), "gather_rows", bw)


def frame_signal(x, window_length: int, hop_length: int) -> Value:
    """Slice (n, T) signals into overlapping frames (n, F, window_length)."""
    x = as_value(x)
    if x.ndim != 2:
        raise ShapeError("frame_signal", f"expected (n, T), got {x.shape}")
    n, t = x.shape
    if t < window_length:
        raise ShapeError("frame_signal", f"signal length {t} < window {window_length}")
    n_frames = (t - window_length) // hop_length + 1
    idx = hop_length * np.arange(n_frames)[:, None] + np.arange(window_length)[None, :]
    data = x.data[:, idx]

    def bw(out: Value):
        g = np.zeros_like(x.data)
        # column i of every frame lands on stride-separated samples, so each
        # slice-add below is collision-free
        for i in range(window_length):
            g[:, i:i + hop_length * n_frames:hop_length] += out.grad[:, :, i]
        _accum(x, g)

    return _node(data, (x,), "frame_signal", bw)


# ---------------------------------------------------------------------------
# nonlinearities and reductions

def relu(a) -> Value:
    a = as_value(a)
    mask = a.data > 0

    def bw(out: Value):
        _accum(a, out.grad * mask)

    return _node(np.where(mask, a.data, 0.0), (a,), "relu", bw)


def clamp(a, lo: float | None = None, hi: float | None = None) -> Value:
    a = as_value(a)
    data = np.clip(a.data, lo, hi)
    mask = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        mask &= a.data > lo
    if hi is not None:
        mask &= a.data < hi

    def bw(out: Value):
        _accum(a, out.grad * mask)

    return _node(data, (a,), "clamp", bw)


def log(a) -> Value:
    a = as_value(a)

    def bw(out: Value):
        _accum(a, out.grad / a.data)

    return _node(np.log(a.data), (a,), "log", bw)


def exp(a) -> Value:
    a = as_value(a)
    data = np.exp(a.data)

    def bw(out: Value):
        _accum(a, out.grad * data)

    return _node(data, (a,), "exp", bw)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Value:
    a = as_value(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(out: Value):
        g = out.grad
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return _node(data, (a,), "sum", bw)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Value:
    a = as_value(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.data.shape[i] for i in axes]))

    def bw(out: Value):
        g = out.grad
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape) / count)

    return _node(data, (a,), "mean", bw)


def reduce_max(a, axis: int, keepdims: bool = False) -> Value:
    """Max along one axis; ties send the gradient to the lowest index."""
    a = as_value(a)
    idx = np.argmax(a.data, axis=axis)
    data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        data = np.squeeze(data, axis=axis)

    def bw(out: Value):
        g = out.grad
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
        _accum(a, full)

    return _node(data, (a,), "amax", bw)


def softmax(a, axis: int = -1) -> Value:
    a = as_value(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(out: Value):
        inner = (out.grad * s).sum(axis=axis, keepdims=True)
        _accum(a, s * (out.grad - inner))

    return _node(s, (a,), "softmax", bw)


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Value:
    a = as_value(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    se = e.sum(axis=axis, keepdims=True)
    data = m + np.log(se)
    soft = e / se
    if not keepdims:
        data = np.squeeze(data, axis=axis)

    def bw(out: Value):
        g = out.grad
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, soft * g)

    return _node(data, (a,), "logsumexp", bw)


# ---------------------------------------------------------------------------
# neural-net primitives

def conv1d(x, w) -> Value:
    """Valid (no padding) stride-1 correlation: (n,Cin,L) * (Cout,Cin,K) -> (n,Cout,L-K+1)."""
    x, w = as_value(x), as_value(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv1d", f"need (n,Cin,L) and (Cout,Cin,K), got {x.shape}, {w.shape}")
    k = w.shape[2]
    if x.shape[2] < k:
        raise ShapeError("conv1d", f"input length {x.shape[2]} < kernel {k}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=2)
    data = np.einsum("nclk,ock->nol", windows, w.data, optimize=True)

    def bw(out: Value):
        if w.requires_grad:
            _accum(w, np.einsum("nol,nclk->ock", out.grad, windows, optimize=True))
        if x.requires_grad:
            gp = np.pad(out.grad, ((0, 0), (0, 0), (k - 1, k - 1)))
            gw = np.lib.stride_tricks.sliding_window_view(gp, k, axis=2)
            _accum(x, np.einsum("nolk,ock->ncl", gw, w.data[:, :, ::-1], optimize=True))

    return _node(data, (x, w), "conv1d", bw)


def maxpool1d(x, width: int) -> Value:
    """Non-overlapping max pooling over time; a trailing partial window is dropped."""
    x = as_value(x)
    if x.ndim != 3:
        raise ShapeError("maxpool1d", f"expected (n,C,L), got {x.shape}")
    n, c, length = x.shape
    pooled = length // width
    if pooled < 1:
        raise ShapeError("maxpool1d", f"input length {length} < pool width {width}")
    blocks = x.data[:, :, :pooled * width].reshape(n, c, pooled, width)
    idx = np.argmax(blocks, axis=3)
    data = np.take_along_axis(blocks, idx[..., None], axis=3)[..., 0]

    def bw(out: Value):
        g_blocks = np.zeros_like(blocks)
        np.put_along_axis(g_blocks, idx[..., None], out.grad[..., None], axis=3)
        g = np.zeros_like(x.data)
        g[:, :, :pooled * width] = g_blocks.reshape(n, c, pooled * width)
        _accum(x, g)

    return _node(data, (x,), "maxpool1d", bw)


def batchnorm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
              mode: str = "train", momentum: float = 0.1, eps: float = 1e-5) -> Value:
    """Channel batch normalization for (n,C) or (n,C,L) inputs.

    mode "train": normalize with batch statistics and update the running
    arrays in place; "batch": batch statistics without touching running
    stats (attack generation inside the training loop); "eval": use the
    running statistics.
    """
    x, gamma, beta = as_value(x), as_value(gamma), as_value(beta)
    if x.ndim not in (2, 3):
        raise ShapeError("batchnorm", f"expected (n,C) or (n,C,L), got {x.shape}")
    if mode not in ("train", "batch", "eval"):
        raise ValueError(f"batchnorm: unknown mode {mode!r}")
    axes = (0,) if x.ndim == 2 else (0, 2)
    cshape = (1, -1) if x.ndim == 2 else (1, -1, 1)
    gam = gamma.data.reshape(cshape)
    bet = beta.data.reshape(cshape)

    if mode == "eval":
        rstd = 1.0 / np.sqrt(running_var.reshape(cshape) + eps)
        x_hat = (x.data - running_mean.reshape(cshape)) * rstd

        def bw(out: Value):
            if x.requires_grad:
                _accum(x, out.grad * gam * rstd)
            if gamma.requires_grad:
                _accum(gamma, (out.grad * x_hat).sum(axis=axes))
            if beta.requires_grad:
                _accum(beta, out.grad.sum(axis=axes))

        return _node(gam * x_hat + bet, (x, gamma, beta), "batchnorm", bw)

    m = int(np.prod([x.shape[i] for i in axes]))
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mu) * rstd
    if mode == "train":
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(-1)

    def bw(out: Value):
        if x.requires_grad:
            g_sum = out.grad.sum(axis=axes, keepdims=True)
            gx_sum = (out.grad * x_hat).sum(axis=axes, keepdims=True)
            _accum(x, gam * rstd * (out.grad - g_sum / m - x_hat * gx_sum / m))
        if gamma.requires_grad:
            _accum(gamma, (out.grad * x_hat).sum(axis=axes))
        if beta.requires_grad:
            _accum(beta, out.grad.sum(axis=axes))

    return _node(gam * x_hat + bet, (x, gamma, beta), "batchnorm", bw)


# ---------------------------------------------------------------------------
# composed helpers (differentiable through their primitive parts)

def l2_norm(a, axis=None, keepdims: bool = False) -> Value:
    a = as_value(a)
    return power(reduce_sum(mul(a, a), axis=axis, keepdims=keepdims), 0.5)


def cosine_similarity(a, b, axis: int = -1) -> Value:
    a, b = as_value(a), as_value(b)
    num = reduce_sum(mul(a, b), axis=axis)
    return div(num, mul(l2_norm(a, axis=axis), l2_norm(b, axis=axis)))


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


# ---------------------------------------------------------------------------
# backward pass and verification

def _topo_order(root: Value) -> list[Value]:
    order: list[Value] = []
    visited: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Value) -> None:
    """Populate ``grad`` on every requires_grad node reachable from ``loss``."""
    if loss.data.size != 1:
        raise ShapeError("backward", f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    for node in order:
        if node.grad is None:
            node.grad = np.zeros_like(node.data)
    loss.grad = loss.grad + np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward()


def finite_diff_check(loss_fn: Callable[[Value], Value], point: np.ndarray,
                      step: float = 1e-5, floor: float = 1e-6) -> float:
    """Max relative gap between analytic and central-difference gradients.

    Per coordinate: |analytic - fd| / (|fd| + floor), fd the central
    difference with the given step. Raises NonFiniteError if any
    evaluation is non-finite.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=np.float64)
    x = Value(point, requires_grad=True)
    loss = loss_fn(x)
    if loss.data.size != 1:
        raise ShapeError("finite_diff_check", f"loss must be scalar, got {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("loss is non-finite at the evaluation point")
    backward(loss)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(point)

    flat = point.reshape(-1)
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += step
        hi = float(loss_fn(Value(bumped.reshape(point.shape))).data)
        bumped[i] -= 2 * step
        lo = float(loss_fn(Value(bumped.reshape(point.shape))).data)
        fd[i] = (hi - lo) / (2 * step)
    if not np.isfinite(fd).all() or not np.isfinite(analytic).all():
        raise NonFiniteError("non-finite values in gradient evaluation")
    rel = np.abs(analytic.reshape(-1) - fd) / (np.abs(fd) + floor)
    return float(rel.max()) if rel.size else 0.0
