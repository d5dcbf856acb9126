"""Dense tensors with reverse-mode automatic differentiation.

Everything the network needs is here: elementwise arithmetic with
broadcasting, reductions, reshapes, matmul, conv2d, instance norm,
leaky ReLU, row softmax and nearest/average resampling. Tensors hold a
numpy array; float32 is the working precision, float64 is kept when a
float64 array is passed in explicitly (used by the gradient checker).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class NonFiniteError(FloatingPointError):
    """Raised when a forward op produces NaN or Inf."""


class ShapeError(ValueError):
    """Raised on incompatible operand shapes."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_array(data, dtype=None) -> np.ndarray:
    if dtype is None and isinstance(data, (np.ndarray, np.generic)) and data.dtype in (np.float32, np.float64):
        return np.asarray(data)
    return np.asarray(data, dtype=dtype or DEFAULT_DTYPE)


class Tensor:
    """N-dimensional array that records the ops applied to it.

    Args:
        data: array-like values.
        requires_grad: whether gradients are accumulated into ``grad``.
        name: optional label, used in error messages and checkpoints.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{rg})"

    def __len__(self) -> int:
        return self.shape[0]

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # -- operator sugar ---------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def abs(self):
        return tabs(self)


class Parameter(Tensor):
    """Trainable leaf tensor owned by a layer."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad, name)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))


def _make(data: np.ndarray, parents: Iterable[Tensor], backward_fn, op: str) -> Tensor:
    # min/max propagate NaN and expose inf without a boolean temporary
    if data.size and not (np.isfinite(data.min()) and np.isfinite(data.max())):
        raise NonFiniteError(f"non-finite values produced by {op}")
    out = Tensor(data)
    out.op = op
    parents = tuple(parents)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# -- graph traversal ------------------------------------------------------
class Graph:
    """Topologically ordered op records reachable from an output tensor."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> Graph:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
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
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, output: Tensor, seed: np.ndarray | None = None) -> None:
        grads: dict[int, np.ndarray] = {
            id(output): np.ones_like(output.data) if seed is None else seed
        }
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every trainable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    Graph.from_output(loss).backward(loss)


# -- elementwise ----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "div")


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (0.5 * g / out,), "sqrt")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def tabs(x: Tensor) -> Tensor:
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """``x`` where ``x > 0``, else ``slope * x`` (the gradient at 0 is ``slope``)."""
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"slope must lie in [0, 1), got {slope}")
    out = np.maximum(x.data, x.data * x.data.dtype.type(slope))

    def bw(g):
        return (np.where(x.data > 0, g, g * g.dtype.type(slope)),)

    return _make(out, (x,), bw, "leaky_relu")


def clamp_min(x: Tensor, floor: float) -> Tensor:
    keep = x.data >= floor
    out = np.where(keep, x.data, x.data.dtype.type(floor))
    return _make(out, (x,), lambda g: (np.where(keep, g, 0),), "clamp_min")


# -- shape ops ------------------------------------------------------------
def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (g.transpose(inv),),
        "transpose",
    )


def getitem(x: Tensor, index) -> Tensor:
    basic = isinstance(index, (slice, int)) or (
        isinstance(index, tuple) and all(isinstance(i, (slice, int)) for i in index)
    )

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(x.data[index]), (x,), bw, "getitem")


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    """Cut ``x`` along ``axis`` into consecutive pieces of the given sizes."""
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not add up to {x.shape[axis]}")
    out, lo = [], 0
    for n in sizes:
        index = [slice(None)] * x.ndim
        index[axis] = slice(lo, lo + n)
        out.append(getitem(x, tuple(index)))
        lo += n
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        sl = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[axis] = slice(int(lo), int(hi))
            parts.append(g[tuple(sl)])
        return parts

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


# -- reductions -----------------------------------------------------------
def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((np.broadcast_to(g, x.shape) / n).astype(x.dtype),)

    return _make(np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), (x,), bw, "mean")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


# -- neural-network ops ---------------------------------------------------
def conv_output_size(size: int, kernel: int, padding: int, stride: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int = 0, stride: int = 1) -> Tensor:
    """2-D cross-correlation of a ``[C, H, W]`` input with ``[O, C, k, k]`` kernels."""
    if x.ndim != 3 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects [C,H,W] and [O,C,k,k], got {x.shape}, {weight.shape}")
    c, h, w = x.shape
    o, ci, k, k2 = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {ci}")
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d needs an odd square kernel, got {k}x{k2}")
    if padding < 0 or stride < 1:
        raise ValueError("padding must be >= 0 and stride >= 1")
    ho, wo = conv_output_size(h, k, padding, stride), conv_output_size(w, k, padding, stride)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}")

    if stride == 1 and k > 1 and o <= c:
        out, bw = _conv_shift(x, weight, bias, padding, ho, wo)
    else:
        out, bw = _conv_im2col(x, weight, bias, padding, stride, ho, wo)
    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw, "conv2d")


def _conv_im2col(x, weight, bias, padding, stride, ho, wo):
    """Patch matrix ``[C*k*k, ho*wo]`` times the flattened kernels."""
    c, h, w = x.shape
    o, _, k, _ = weight.shape
    wmat = weight.data.reshape(o, c * k * k)
    if k == 1 and padding == 0:
        xs = x.data[:, ::stride, ::stride] if stride > 1 else x.data
        cols = np.ascontiguousarray(xs).reshape(c, ho * wo)
    else:
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
        cols = win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)
    out = wmat @ cols
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(o, ho, wo)

    def bw(g):
        g2 = g.reshape(o, ho * wo)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(c, k, k, ho, wo)
            if k == 1 and padding == 0 and stride == 1:
                gx = gcols.reshape(c, h, w)
            else:
                gxp = np.zeros((c, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, i, j]
                gx = gxp[:, padding : padding + h, padding : padding + w]
        return (gx, gw) if bias is None else (gx, gw, gb)

    return out, bw


def _conv_shift(x, weight, bias, padding, ho, wo):
    """Stride-1 conv as one product over the padded input plus k*k shifted sums.

    Cheaper than im2col when there are no more output than input channels,
    since the intermediate is ``[k*k*O, Hp*Wp]`` instead of ``[C*k*k, H*W]``.
    """
    c, h, w = x.shape
    o, _, k, _ = weight.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    hp, wp = xp.shape[1:]
    xflat = xp.reshape(c, hp * wp)
    wr = weight.data.transpose(2, 3, 0, 1).reshape(k * k * o, c)
    y = (wr @ xflat).reshape(k, k, o, hp, wp)
    out = np.zeros((o, ho, wo), dtype=y.dtype)
    for i in range(k):
        for j in range(k):
            out += y[i, j, :, i : i + ho, j : j + wo]
    if bias is not None:
        out += bias.data[:, None, None]

    def bw(g):
        gsh = np.zeros((k, k, o, hp, wp), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gsh[i, j, :, i : i + ho, j : j + wo] = g
        gsh = gsh.reshape(k * k * o, hp * wp)
        gw = None
        if weight.requires_grad:
            gw = (gsh @ xflat.T).reshape(k, k, o, c).transpose(2, 3, 0, 1)
        gb = g.sum(axis=(1, 2)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = (wr.T @ gsh).reshape(c, hp, wp)[:, padding : padding + h, padding : padding + w]
        return (gx, gw) if bias is None else (gx, gw, gb)

    return out, bw


def _phase_taps(k: int, factor: int) -> tuple[np.ndarray, list[int], list[list[int]]]:
    """Merged 1-D taps for a ``k``-tap, pad ``k // 2`` filter on a ``factor``-upsampled axis.

    Output position ``factor * i + a`` reads upsampled positions whose source
    rows are ``i + delta`` for a few small ``delta``. Taps landing on the same
    source row are summed into one merged tap. Returns the merge matrix
    ``[n_taps, k]``, each merged tap's ``delta`` and the taps used by each
    phase ``a``.
    """
    p = k // 2
    rows: list[tuple[int, tuple[int, ...]]] = []
    phases = []
    for a in range(factor):
        groups: dict[int, list[int]] = {}
        for d in range(k):
            groups.setdefault((a + d - p) // factor, []).append(d)
        used = []
        for delta, ds in sorted(groups.items()):
            key = (delta, tuple(ds))
            if key not in rows:
                rows.append(key)
            used.append(rows.index(key))
        phases.append(used)
    merge = np.zeros((len(rows), k))
    for r, (_, ds) in enumerate(rows):
        merge[r, list(ds)] = 1.0
    return merge, [delta for delta, _ in rows], phases


def conv2d_upsampled(x: Tensor, weight: Tensor, bias: Tensor | None, factor: int) -> Tensor:
    """``conv2d(upsample_nearest(x, factor), weight, bias, padding=k // 2)`` without upsampling.

    Every output phase ``(a, b)`` of the upsampled grid is a small conv of the
    low-resolution input with merged kernels, so the products run on
    ``1 / factor**2`` of the pixels. Equal to the composed ops up to float
    summation order.
    """
    if factor == 1:
        return conv2d(x, weight, bias, padding=weight.shape[2] // 2)
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d_upsampled shapes {x.shape}, {weight.shape}")
    c, h, w = x.shape
    o, _, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d_upsampled needs an odd square kernel, got {k}x{k2}")
    merge, deltas, phases = _phase_taps(k, factor)
    merge = merge.astype(weight.dtype)
    nr = len(deltas)
    pad = max(abs(d) for d in deltas)
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    hp, wp = xp.shape[1:]
    xflat = xp.reshape(c, hp * wp)
    wm = np.einsum("rd,se,ocde->rsoc", merge, merge, weight.data).reshape(nr * nr * o, c)
    y = (wm @ xflat).reshape(nr, nr, o, hp, wp)

    def window(r, s):
        return np.s_[r, s, :, pad + deltas[r] : pad + deltas[r] + h, pad + deltas[s] : pad + deltas[s] + w]

    out = np.zeros((o, h, factor, w, factor), dtype=y.dtype)
    for a, rows_a in enumerate(phases):
        for b, rows_b in enumerate(phases):
            acc = out[:, :, a, :, b]
            for r in rows_a:
                for s in rows_b:
                    acc += y[window(r, s)]
    out = out.reshape(o, h * factor, w * factor)
    if bias is not None:
        out += bias.data[:, None, None]

    def bw(g):
        g5 = g.reshape(o, h, factor, w, factor)
        gsh = np.zeros((nr, nr, o, hp, wp), dtype=g.dtype)
        for a, rows_a in enumerate(phases):
            for b, rows_b in enumerate(phases):
                for r in rows_a:
                    for s in rows_b:
                        gsh[window(r, s)] += g5[:, :, a, :, b]
        gsh = gsh.reshape(nr * nr * o, hp * wp)
        gw = None
        if weight.requires_grad:
            gwm = (gsh @ xflat.T).reshape(nr, nr, o, c)
            gw = np.einsum("rd,se,rsoc->ocde", merge, merge, gwm)
        gb = g.sum(axis=(1, 2)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = (wm.T @ gsh).reshape(c, hp, wp)[:, pad : pad + h, pad : pad + w]
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw, "conv2d_upsampled")


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each channel of ``[C, H, W]`` to zero mean, unit variance."""
    c = x.shape[0]
    flat = x.data.reshape(c, -1)
    n = flat.shape[1]
    # shifting by the first element keeps constant channels exactly zero
    shift = flat[:, :1]
    mu = shift + (flat - shift).mean(axis=1, keepdims=True)
    centered = flat - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def bw(g):
        g = g.reshape(c, n)
        gx = inv * (g - g.mean(axis=1, keepdims=True) - xhat * (g * xhat).mean(axis=1, keepdims=True))
        return (gx.reshape(x.shape).astype(x.dtype, copy=False),)

    return _make(xhat.reshape(x.shape).astype(x.dtype, copy=False), (x,), bw, "instance_norm")


def scaled_softmax_rows(m: Tensor, sigma: float = 100.0) -> Tensor:
    """Row-wise ``softmax(sigma * m)`` with row-max subtraction.

    Weights below the smallest normal float are flushed to zero: at large
    ``sigma`` most entries are subnormal, which makes later matmuls two
    orders of magnitude slower while contributing nothing to the sums.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if m.ndim != 2:
        raise ShapeError(f"scaled_softmax_rows expects a matrix, got {m.shape}")
    z = m.data * m.data.dtype.type(sigma)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    p[p < np.finfo(p.dtype).tiny] = 0

    def bw(g):
        return (sigma * p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _make(p, (m,), bw, "scaled_softmax_rows")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Repeat each pixel of ``[C, H, W]`` into a ``factor x factor`` block."""
    if factor == 1:
        return x
    c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def bw(g):
        return (g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)),)

    return _make(out, (x,), bw, "upsample_nearest")


def avg_pool(x: Tensor, factor: int) -> Tensor:
    """Mean over non-overlapping ``factor x factor`` blocks of ``[C, H, W]``."""
    if factor == 1:
        return x
    c, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"avg_pool factor {factor} does not divide {h}x{w}")
    ho, wo = h // factor, w // factor
    out = x.data.reshape(c, ho, factor, wo, factor).mean(axis=(2, 4))

    def bw(g):
        g = np.repeat(np.repeat(g, factor, axis=1), factor, axis=2) / (factor * factor)
        return (g.astype(x.dtype, copy=False),)

    return _make(out, (x,), bw, "avg_pool")
