"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor` carrying a :class:`Node` that
remembers its inputs and a closure mapping the output gradient to input
gradients. :func:`backward` orders the nodes reachable from a scalar loss
into a :class:`Graph` and walks it once in reverse.

Leading batch axes are accepted by the sequence operations (``conv1d``,
``maxpool1d``, ``softmax_rows``, ``layer_norm``, ``concat_last``) and by
``matmul``; elementwise ``add``/``mul`` broadcast numpy-style. Nothing more
general than that is supported.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ConfigurationError, DimensionError, UsageError

__all__ = [
    "Tensor", "Node", "Graph", "tensor", "backward", "no_grad",
    "add", "sub", "mul", "neg", "matmul", "transpose", "reshape",
    "sum", "mean", "exp", "log", "clip", "relu", "sigmoid",
    "softmax_rows", "layer_norm", "conv1d", "maxpool1d",
    "concat_last", "split_last", "dropout", "conv1d_output_length",
]

_local = threading.local()


def _grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording on this thread."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _local.grad_enabled = False

    def __exit__(self, *exc):
        _local.grad_enabled = self._prev
        return False


def _record_pattern(tag: str, pattern: np.ndarray) -> None:
    # Used by the gradient checker to spot perturbations that cross a kink.
    log = getattr(_local, "patterns", None)
    if log is not None:
        log.append((tag, pattern.copy()))


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple
    output: "Tensor"
    backward_fn: Callable


class Tensor:
    """A float64 array with an optional gradient slot."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 0 and 0 in arr.shape:
            raise DimensionError(f"tensor extents must be positive, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, graph: "Graph | None" = None) -> None:
        backward(self, graph)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UsageError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._node = None
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(op, tuple(inputs), out, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Graph:
    """Operations reachable from an output, in topological order.

    Every node appears after the nodes producing its inputs; :func:`backward`
    visits ``reversed(nodes)`` exactly once.
    """

    def __init__(self, nodes: list[Node]):
        self.nodes = nodes

    @classmethod
    def trace(cls, output: Tensor) -> "Graph":
        order: list[Node] = []
        seen: set[int] = set()
        stack = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            node = t._node
            if node is None:
                continue
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((t, True))
            for inp in node.inputs:
                if inp._node is not None and id(inp._node) not in seen:
                    stack.append((inp, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def backward(loss: Tensor, graph: Graph | None = None) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor requiring grad."""
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor with requires_grad=True")
    if graph is None:
        graph = Graph.trace(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        _accumulate(node.output, g_out)
        in_grads = node.backward_fn(g_out)
        for inp, g in zip(node.inputs, in_grads):
            if g is None or not inp.requires_grad:
                continue
            if inp._node is None:
                _accumulate(inp, g)
            elif id(inp) in grads:
                grads[id(inp)] = grads[id(inp)] + g
            else:
                grads[id(inp)] = g
    if loss._node is None:
        _accumulate(loss, grads[id(loss)])


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.broadcast_to(g, t.data.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, "mul", (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), "log", (a,), lambda g: (g / ad,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; the gradient passes only through the interior."""
    inside = (a.data > lo) & (a.data < hi)
    _record_pattern("clip", inside)
    return _make(np.clip(a.data, lo, hi), "clip", (a,), lambda g: (g * inside,))


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    _record_pattern("relu", active)
    return _make(np.where(active, x.data, 0.0), "relu", (x,), lambda g: (g * active,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # Two branches so neither exp() can overflow.
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. Identity when ``rate == 0`` or ``rng`` is None."""
    if rate <= 0.0 or rng is None:
        return x
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * mask, "dropout", (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------- reductions / shape

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), "sum", (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {shape}") from exc
    return _make(out, "reshape", (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 dims, got shape {x.shape}")
    return _make(np.swapaxes(x.data, -1, -2), "transpose", (x,),
                 lambda g: (np.swapaxes(g, -1, -2),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, "matmul", (a, b), bw)


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise UsageError("concat_last needs at least one part")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise DimensionError(
                f"concat_last leading dimensions differ: {parts[0].shape} vs {p.shape}")
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([p.shape[-1] for p in parts])[:-1]
    return _make(np.concatenate([p.data for p in parts], axis=-1), "concat_last", parts,
                 lambda g: tuple(np.split(g, bounds, axis=-1)))


def split_last(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    """Inverse of :func:`concat_last` for the given part widths."""
    if int(np.sum(sizes)) != x.shape[-1]:
        raise DimensionError(f"split sizes {list(sizes)} do not cover width {x.shape[-1]}")
    out, start = [], 0
    for width in sizes:
        stop = start + width

        def bw(g, start=start, stop=stop):
            full = np.zeros(x.shape)
            full[..., start:stop] = g
            return (full,)

        out.append(_make(x.data[..., start:stop].copy(), "slice_last", (x,), bw))
        start = stop
    return out


# ---------------------------------------------------------------- sequence ops

def softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, "softmax_rows", (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if eps <= 0:
        raise UsageError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {gain.shape}, {shift.shape} do not match width {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    inv = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    gd = gain.data

    def bw(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gd + shift.data, "layer_norm", (x, gain, shift), bw)


def conv1d_output_length(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"invalid stride {stride} / padding {padding}")
    if kernel > length + 2 * padding:
        raise ConfigurationError(
            f"kernel of length {kernel} exceeds padded input length {length + 2 * padding}")
    return (length + 2 * padding - kernel) // stride + 1


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``[..., C_in, T]`` with ``[C_out, C_in, K]`` kernels, zero padded."""
    if x.ndim < 2 or kernels.ndim != 3:
        raise DimensionError(f"conv1d expects [..., C_in, T] and [C_out, C_in, K], "
                             f"got {x.shape} and {kernels.shape}")
    c_out, c_in, k = kernels.shape
    if x.shape[-2] != c_in:
        raise DimensionError(f"conv1d channel mismatch: input {x.shape} vs kernels {kernels.shape}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv1d bias shape {bias.shape} != ({c_out},)")
    t_in = x.shape[-1]
    t_out = conv1d_output_length(t_in, k, stride, padding)
    lead = x.shape[:-2]
    xb = x.data.reshape(-1, c_in, t_in)
    xp = np.pad(xb, [(0, 0), (0, 0), (padding, padding)]) if padding else xb
    windows = sliding_window_view(xp, k, axis=-1)[:, :, ::stride, :][:, :, :t_out, :]
    w = kernels.data
    out = np.einsum("bctk,ock->bot", windows, w) + bias.data[:, None]
    out = out.reshape(lead + (c_out, t_out))

    def bw(g):
        g = g.reshape(-1, c_out, t_out)
        gw = np.einsum("bot,bctk->ock", g, windows)
        gb = g.sum(axis=(0, 2))
        gwin = np.einsum("bot,ock->bctk", g, w)
        gxp = np.zeros(xp.shape)
        span = stride * (t_out - 1) + 1
        for j in range(k):
            gxp[:, :, j:j + span:stride] += gwin[:, :, :, j]
        gx = gxp[:, :, padding:padding + t_in] if padding else gxp
        return gx.reshape(x.shape), gw, gb

    return _make(out, "conv1d", (x, kernels, bias), bw)


def maxpool1d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Windowed max over the last axis; ties send the gradient to the first maximum."""
    stride = window if stride is None else stride
    if window < 1 or stride < 1:
        raise ConfigurationError(f"invalid pool window {window} / stride {stride}")
    t_in = x.shape[-1]
    if window > t_in:
        raise ConfigurationError(f"pool window {window} exceeds sequence length {t_in}")
    if window == 1 and stride == 1:
        return x
    t_out = (t_in - window) // stride + 1
    windows = sliding_window_view(x.data, window, axis=-1)[..., ::stride, :][..., :t_out, :]
    arg = windows.argmax(axis=-1)
    _record_pattern("maxpool", arg)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gx = np.zeros(x.shape)
        span = stride * (t_out - 1) + 1
        for j in range(window):
            gx[..., j:j + span:stride] += g * (arg == j)
        return (gx,)

    return _make(out, "maxpool1d", (x,), bw)
