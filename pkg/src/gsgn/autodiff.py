"""Dense tensors with reverse-mode automatic differentiation.

Small numpy-backed engine: every operation returns a new Tensor and, while
gradients are enabled, records enough of the computation graph to replay the
chain rule in reverse. Backward rules are themselves written in terms of
these same operations, so gradients of gradients work (needed for the
critic's gradient penalty, which differentiates an input-gradient norm with
respect to the critic weights).

Layout is row-major N,C,H,W everywhere. float32 is the working precision;
float64 is used by the finite-difference certification in `gradcheck`.

Any operation that produces a NaN/Inf raises NonFiniteError immediately
instead of letting the value propagate into a training step.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

Scalar = Union[int, float]

_FLOAT_DTYPES = (np.float32, np.float64)


class TensorError(RuntimeError):
    """Base class for engine errors."""


class ShapeError(TensorError):
    pass


class NonFiniteError(TensorError):
    pass


class GraphError(TensorError):
    pass


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class _GradMode:
    def __init__(self, enabled: bool):
        self._enabled = enabled

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = self._enabled
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


def no_grad() -> _GradMode:
    """Context manager: operations inside do not record the graph."""
    return _GradMode(False)


def enable_grad() -> _GradMode:
    return _GradMode(True)


class Tensor:
    """N-dimensional float array with an optional gradient slot.

    `grad` (a plain ndarray of the same shape) is populated on
    requires_grad leaves by `backward` and accumulates additively until
    zeroed by the caller.
    """

    __slots__ = ("data", "requires_grad", "grad", "_vjp", "_parents", "_spent")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._vjp: Optional[Callable] = None
        self._parents: tuple = ()
        self._spent = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def is_leaf(self) -> bool:
        return self._vjp is None

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{grad})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axes=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axes, keepdims)

    def mean(self, axes=None, keepdims: bool = False) -> "Tensor":
        return mean_(self, axes, keepdims)

    def backward(self) -> None:
        backward(self)

    def zero_grad(self) -> None:
        self.grad = None


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


# "risky": check only ops that can create NaN/Inf from finite inputs
# (division, logs, exp, pow, sqrt). "all": check every op (used by the
# certification tests). Optimizer steps additionally validate gradients,
# so an overflow in a linear op still aborts the step it would corrupt.
FINITE_CHECKS = "risky"

_RISKY_OPS = frozenset({"div", "log", "log10", "exp", "sqrt", "pow"})


def _check_finite(arr: np.ndarray, opname: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{opname} produced a non-finite value")


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable,
          opname: str) -> Tensor:
    """Wrap an op result; record graph edges when gradients are live."""
    if FINITE_CHECKS == "all" or (FINITE_CHECKS == "risky"
                                  and opname in _RISKY_OPS):
        _check_finite(data, opname)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._spent = False
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _binary_check(a: Tensor, b: Tensor, opname: str) -> None:
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{opname}: dtype mismatch {a.dtype} vs {b.dtype}")
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} "
                         "do not broadcast") from None


def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    """Reduce a gradient back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = len(g.shape) - len(shape)
    axes = list(range(extra))
    for i, dim in enumerate(shape):
        if dim == 1 and g.shape[extra + i] != 1:
            axes.append(extra + i)
    r = sum_(g, tuple(axes), keepdims=True) if axes else g
    return reshape(r, shape)


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _as_tensor(a, b)
    b = _as_tensor(b, a)
    _binary_check(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _as_tensor(a, b)
    b = _as_tensor(b, a)
    _binary_check(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)

    return _make(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _as_tensor(a, b)
    b = _as_tensor(b, a)
    _binary_check(a, b, "mul")

    def vjp(g):
        return (_unbroadcast(mul(g, b), a.shape),
                _unbroadcast(mul(g, a), b.shape))

    return _make(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _as_tensor(a, b)
    b = _as_tensor(b, a)
    _binary_check(a, b, "div")
    if np.any(b.data == 0):
        raise TensorError("div: division by zero")
    with np.errstate(all="ignore"):
        res = a.data / b.data

    def vjp(g):
        ga = div(g, b)
        gb = neg(mul(g, div(a, mul(b, b))))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(res, (a, b), vjp, "div")


def neg(a: Tensor) -> Tensor:
    def vjp(g):
        return (neg(g),)

    return _make(-a.data, (a,), vjp, "neg")


def pow_(a: Tensor, p: Scalar) -> Tensor:
    p = float(p)

    def vjp(g):
        return (mul(g, mul(pow_(a, p - 1.0), p)),)

    with np.errstate(all="ignore"):
        res = a.data ** p
    return _make(res, (a,), vjp, "pow")


def log(a: Tensor) -> Tensor:
    def vjp(g):
        return (div(g, a),)

    with np.errstate(all="ignore"):
        res = np.log(a.data)
    return _make(res, (a,), vjp, "log")


def log10(a: Tensor) -> Tensor:
    ln10 = float(np.log(10.0))

    def vjp(g):
        return (div(g, mul(a, ln10)),)

    with np.errstate(all="ignore"):
        res = np.log10(a.data)
    return _make(res, (a,), vjp, "log10")


def exp(a: Tensor) -> Tensor:
    def vjp(g):
        return (mul(g, out),)

    with np.errstate(all="ignore"):
        res = np.exp(a.data)
    out = _make(res, (a,), vjp, "exp")
    return out


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(all="ignore"):
        res = np.sqrt(a.data)

    def vjp(g):
        return (div(g, mul(out, 2.0)),)

    out = _make(res, (a,), vjp, "sqrt")
    return out


def sigmoid(a: Tensor) -> Tensor:
    # stable two-sided form
    x = a.data
    res = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    res = res.astype(x.dtype)

    def vjp(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = _make(res, (a,), vjp, "sigmoid")
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise TensorError(f"leaky_relu slope must be in (0,1), got {slope}")
    mask = np.where(a.data >= 0, 1.0, slope).astype(a.data.dtype)

    def vjp(g):
        return (mul(g, Tensor(mask)),)

    return _make(a.data * mask, (a,), vjp, "leaky_relu")


def clamp(a: Tensor, lo: Optional[Scalar] = None,
          hi: Optional[Scalar] = None) -> Tensor:
    res = np.clip(a.data, lo, hi)
    inside = np.ones_like(a.data)
    if lo is not None:
        inside = inside * (a.data >= lo)
    if hi is not None:
        inside = inside * (a.data <= hi)
    inside = inside.astype(a.data.dtype)

    def vjp(g):
        return (mul(g, Tensor(inside)),)

    return _make(res, (a,), vjp, "clamp")


# -- reductions --------------------------------------------------------------

def _norm_axes(axes, ndim: int, opname: str):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(int(ax) for ax in axes)
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"{opname}: axis {ax} out of range for "
                             f"{ndim}-d tensor")
    return tuple(ax % ndim for ax in axes)


def sum_(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.data.ndim, "sum")
    if len(axes) == 0:
        return a
    res = a.data.sum(axis=axes, keepdims=keepdims)
    kept = res if keepdims else np.expand_dims(res, axes)
    kept_shape = kept.shape

    def vjp(g):
        if not keepdims:
            g = reshape(g, kept_shape)
        return (broadcast_to(g, a.shape),)

    return _make(res, (a,), vjp, "sum")


def mean_(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.data.ndim, "mean")
    if len(axes) == 0:
        return a
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return mul(sum_(a, axes, keepdims), 1.0 / n)


def l2norm(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    return sqrt(sum_(mul(a, a), axes, keepdims))


# -- shape manipulation ------------------------------------------------------

def reshape(a: Tensor, shape: tuple) -> Tensor:
    def vjp(g):
        return (reshape(g, a.shape),)

    try:
        res = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from None
    return _make(res, (a,), vjp, "reshape")


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (transpose(g, inv),)

    return _make(a.data.transpose(axes), (a,), vjp, "transpose")


def broadcast_to(a: Tensor, shape: tuple) -> Tensor:
    def vjp(g):
        return (_unbroadcast(g, a.shape),)

    return _make(np.broadcast_to(a.data, shape), (a,), vjp, "broadcast_to")


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(narrow(g, axis, int(offsets[i]), sizes[i])
                     for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=axis),
                 parts, vjp, "concat")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    before = start
    after = a.shape[axis] - start - length

    def vjp(g):
        pieces = []
        if before:
            zshape = list(a.shape)
            zshape[axis] = before
            pieces.append(Tensor(np.zeros(zshape, dtype=a.data.dtype)))
        pieces.append(g)
        if after:
            zshape = list(a.shape)
            zshape[axis] = after
            pieces.append(Tensor(np.zeros(zshape, dtype=a.data.dtype)))
        return (concat(pieces, axis) if len(pieces) > 1 else g,)

    return _make(a.data[idx], (a,), vjp, "narrow")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-d tensors")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ShapeError("matmul: dtype mismatch")

    def vjp(g):
        return (matmul(g, transpose(b, (1, 0))),
                matmul(transpose(a, (1, 0)), g))

    return _make(a.data @ b.data, (a, b), vjp, "matmul")


# -- convolution plumbing ----------------------------------------------------

def _conv_geometry(h: int, w: int, kh: int, kw: int, stride: int, pad: int):
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    return oh, ow


def _im2col_data(x: np.ndarray, kh: int, kw: int, stride: int,
                 pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    oh, ow = _conv_geometry(h, w, kh, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]            # (N,C,OH,OW,kh,kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols)


def _col2im_data(cols: np.ndarray, xshape: tuple, kh: int, kw: int,
                 stride: int, pad: int) -> np.ndarray:
    n, c, h, w = xshape
    oh, ow = _conv_geometry(h, w, kh, kw, stride, pad)
    g = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride,
                j:j + stride * ow:stride] += g[:, :, i, j]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def im2col(x: Tensor, kh: int, kw: int, stride: int = 1,
           pad: int = 0) -> Tensor:
    """Flatten sliding windows to rows: (N,C,H,W) -> (N*OH*OW, C*kh*kw)."""
    if x.data.ndim != 4:
        raise ShapeError("im2col expects an N,C,H,W tensor")
    xshape = x.shape

    def vjp(g):
        return (col2im(g, xshape, kh, kw, stride, pad),)

    return _make(_im2col_data(x.data, kh, kw, stride, pad), (x,), vjp,
                 "im2col")


def col2im(cols: Tensor, xshape: tuple, kh: int, kw: int, stride: int = 1,
           pad: int = 0) -> Tensor:
    """Scatter-add window rows back to an image; linear adjoint of im2col."""

    def vjp(g):
        return (im2col(g, kh, kw, stride, pad),)

    return _make(_col2im_data(cols.data, xshape, kh, kw, stride, pad),
                 (cols,), vjp, "col2im")


# -- backward ----------------------------------------------------------------

def _toposort(root: Tensor) -> list:
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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
    """Populate `.grad` on every requires_grad leaf reachable from `root`.

    One backward pass per forward pass: re-running on an already-consumed
    graph raises GraphError. Gradients accumulate additively into existing
    `.grad` buffers.
    """
    if root.data.size != 1:
        raise GraphError(f"backward root must be scalar, got shape "
                         f"{root.shape}")
    if not root.requires_grad or root._vjp is None:
        raise GraphError("backward called without a live graph "
                         "(run a forward pass first)")
    order = _toposort(root)
    for node in order:
        if node._spent:
            raise GraphError("backward already ran for part of this graph; "
                             "run a new forward pass first")
    grads: dict = {id(root): Tensor(np.ones_like(root.data))}
    with no_grad():
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.grad is None:
                    node.grad = g.data.copy()
                else:
                    node.grad = node.grad + g.data
                continue
            node._spent = True
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else add(acc, pg)
            node._vjp = None
            node._parents = ()


def grad_of(root: Tensor, wrt: Sequence[Tensor],
            create_graph: bool = False) -> list:
    """Return d(root)/d(w) for each w in `wrt` as Tensors.

    With create_graph=True the returned gradients are themselves graph
    nodes, so expressions built from them can be differentiated again.
    Unlike `backward`, this does not consume the graph or touch `.grad`.
    """
    if root.data.size != 1:
        raise GraphError("grad_of root must be scalar")
    if not root.requires_grad:
        raise GraphError("grad_of called on a tensor with no live graph")
    wanted = {id(w) for w in wrt}
    order = _toposort(root)
    grads: dict = {id(root): Tensor(np.ones_like(root.data))}
    results: dict = {}
    with (_GradMode(True) if create_graph else no_grad()):
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if id(node) in wanted:
                results[id(node)] = g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else add(acc, pg)
    out = []
    for w in wrt:
        r = results.get(id(w))
        if r is None:
            r = Tensor(np.zeros_like(w.data))
        out.append(r)
    return out
