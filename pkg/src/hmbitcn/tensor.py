"""Small float64 tensor engine with reverse-mode differentiation.

Only the operations the HM-BiTCN classifier and channel fusion need are
provided. Arrays are numpy float64 buffers in row-major order; each op
records its parents and a closure mapping the output gradient to parent
gradients.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_grad_enabled = True
_node_ids = itertools.count()


class DimensionError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@contextlib.contextmanager
def no_grad():
    """Build no computation records inside the block (evaluation only)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node_id", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor values must be finite")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values produced by {op}")
    out.data = data
    out.grad = None
    out.node_id = next(_node_ids)
    out.op = op
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _topo_order(root: Tensor) -> list[Tensor]:
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every tracked leaf."""
    if loss.data.size != 1:
        raise GraphError("backward requires a scalar loss")
    if not loss.requires_grad:
        raise GraphError("loss is not connected to any tensor that requires grad")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = pending.pop(id(node), None)
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
            pending[key] = pg if key not in pending else pending[key] + pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), "mul", bw)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)

    def bw(g):
        return (g * (cdf + x.data * pdf),)

    return _make(x.data * cdf, (x,), "gelu", bw)


def tensor_sum(x: Tensor) -> Tensor:
    def bw(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.array(x.data.sum()), (x,), "sum", bw)


def tensor_mean(x: Tensor) -> Tensor:
    n = x.data.size

    def bw(g):
        return (np.full(x.shape, float(g) / n),)

    return _make(np.array(x.data.mean()), (x,), "mean", bw)


# structural -------------------------------------------------------------

def take(x: Tensor, index) -> Tensor:
    """Basic (slice) indexing."""

    def bw(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _make(np.array(x.data[index]), (x,), "take", bw)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", bw)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), "transpose", bw)


def flip_time(x: Tensor) -> Tensor:
    """Reverse the last (time) axis of a B x C x T tensor."""
    if x.ndim != 3:
        raise DimensionError(f"flip_time expects rank-3 input, got shape {x.shape}")

    def bw(g):
        return (g[:, :, ::-1].copy(),)

    return _make(x.data[:, :, ::-1].copy(), (x,), "flip_time", bw)


# layers -----------------------------------------------------------------

def conv1d_causal(x: Tensor, weight: Tensor, bias: Tensor | None, dilation: int = 1) -> Tensor:
    """Dilated causal convolution, y[t] = bias + sum_i w[..., i] x[t - i*dilation].

    Input is B x C_in x T, weight C_out x C_in x k with ``weight[..., i]``
    the tap at lag ``i``; the input is implicitly zero-padded on the left by
    (k-1)*dilation so the output keeps length T.
    """
    if x.ndim != 3 or weight.ndim != 3:
        raise DimensionError("conv1d_causal expects rank-3 input and weight")
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    batch, c_in, steps = x.shape
    c_out, w_in, k = weight.shape
    if w_in != c_in:
        raise DimensionError(f"input has {c_in} channels, weight expects {w_in}")
    if steps < 1 or k < 1:
        raise DimensionError("empty time axis or kernel")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"bias shape {bias.shape} != ({c_out},)")

    pad = (k - 1) * dilation
    # channel-major padded copy so every tap is one contiguous slab of the column matrix
    padded = np.zeros((c_in, batch, steps + pad))
    padded[:, :, pad:] = x.data.transpose(1, 0, 2)
    cols = np.empty((c_in, k, batch, steps))
    for i in range(k):
        start = pad - i * dilation
        cols[:, i] = padded[:, :, start:start + steps]
    cols = cols.reshape(c_in * k, batch * steps)
    wmat = weight.data.reshape(c_out, c_in * k)
    out = (wmat @ cols).reshape(c_out, batch, steps)
    if bias is not None:
        out += bias.data[:, None, None]
    out = np.ascontiguousarray(out.transpose(1, 0, 2))

    def bw(g):
        g2 = g.transpose(1, 0, 2).reshape(c_out, batch * steps)
        gw = (g2 @ cols.T).reshape(weight.shape)
        gcols = (wmat.T @ g2).reshape(c_in, k, batch, steps)
        gpad = np.zeros_like(padded)
        for i in range(k):
            start = pad - i * dilation
            gpad[:, :, start:start + steps] += gcols[:, i]
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return np.ascontiguousarray(gpad[:, :, pad:].transpose(1, 0, 2)), gw, gb

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _make(out, parents, "conv1d_causal", bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: cannot apply weight {weight.shape} to input {x.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        return g @ weight.data, g.T @ x.data, (g.sum(axis=0) if bias is not None else None)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _make(out, parents, "linear", bw)


def global_avg_pool_time(x: Tensor) -> Tensor:
    if x.ndim != 3:
        raise DimensionError("global_avg_pool_time expects B x C x T")
    steps = x.shape[2]

    def bw(g):
        return (np.repeat(g[:, :, None] / steps, steps, axis=2),)

    return _make(x.data.mean(axis=2), (x,), "avg_pool_time", bw)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError("softmax_cross_entropy expects B x K logits and B labels")
    batch = logits.shape[0]
    logp = log_softmax(logits.data)
    rows = np.arange(batch)
    loss = -logp[rows, labels].mean()

    def bw(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (float(g) / batch),)

    return _make(np.array(loss), (logits,), "softmax_xent", bw)


# gradient oracle --------------------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numerical_gradient(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x.data`` (perturbed in place)."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
    return grad


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between the reverse-mode and central-difference gradient of f at x."""
    probe = Tensor(x.data.copy(), requires_grad=True)
    loss = f(probe)
    backward(loss)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)
    numeric = numerical_gradient(lambda: f(probe), probe, h)
    return relative_error(analytic, numeric)
