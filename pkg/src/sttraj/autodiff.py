"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation returns a :class:`Tensor` that remembers its
inputs and a closure mapping the output gradient to input gradients.
:func:`backward` orders the reachable records into a :class:`ComputationTape`
and sweeps it once in reverse. Gradients land on *leaf* tensors (those created
with ``requires_grad=True``) and accumulate until :func:`zero_grads`.

Graphs are per-call objects with no global state, so independent tapes can be
recorded on different threads.
"""
import math

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError, ShapeError, ValidationError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    live = tuple(p for p in parents if p.requires_grad)
    out.requires_grad = bool(live)
    if live:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(a.data / b.data, (a, b), bw, "div")


def neg(a):
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent):
    """Elementwise ``a ** exponent`` for a constant real exponent."""
    a = as_tensor(a)
    p = float(exponent)
    out = a.data ** p

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return _result(out, (a,), bw, "pow")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def clip(a, lo, hi):
    """Clamp to ``[lo, hi]``; gradient passes only where unclamped."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def prelu(x, slope):
    """``x`` where positive, ``slope * x`` otherwise; ``slope`` is a scalar tensor."""
    x, slope = as_tensor(x), as_tensor(slope)
    if slope.size != 1:
        raise ShapeError(f"prelu slope must be a scalar, got shape {slope.shape}")
    s = slope.data.reshape(())
    pos = x.data > 0
    out = np.where(pos, x.data, s * x.data)

    def bw(g):
        gx = np.where(pos, g, s * g)
        gs = np.sum(np.where(pos, 0.0, g * x.data)).reshape(slope.shape)
        return gx, gs

    return _result(out, (x, slope), bw, "prelu")


# ---------------------------------------------------------------------------
# reductions and shape plumbing


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out, dtype=np.float64), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    return _result(out, (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def swap_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def index_select(a, index):
    a = as_tensor(a)
    out = np.array(a.data[index], dtype=np.float64)

    def bw(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return _result(out, (a,), bw, "index")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), bw, "stack")


# ---------------------------------------------------------------------------
# linear algebra and kernels


def matmul(a, b):
    """Matrix product with numpy batching rules; 2-D operands are the common case."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}") from exc

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(out, (a, b), bw, "matmul")


def softmax_lastdim(x):
    """Softmax over the last axis, stabilized by subtracting the row maximum."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ContractError("softmax needs a non-empty last dimension")
    if not np.all(np.isfinite(x.data)):
        raise ValidationError("softmax input contains non-finite values")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return _result(out, (x,), bw, "softmax")


def conv_over_time(x, kernels_, bias):
    """Channel-mixing convolution along axis 1 of a (Cin, L, N) tensor.

    ``kernels_`` is (Cout, Cin, k) with odd k; the input is zero padded by
    (k-1)/2 on both ends so the output keeps length L.
    """
    x, w, b = as_tensor(x), as_tensor(kernels_), as_tensor(bias)
    if w.ndim != 3 or w.shape[2] % 2 == 0:
        raise ConfigError(f"conv kernel width must be odd, got kernel shape {w.shape}")
    if x.ndim != 3 or x.shape[0] != w.shape[1]:
        raise ShapeError(f"conv input {x.shape} does not match kernels {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv bias {b.shape} does not match kernels {w.shape}")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out = kernels.conv_time_forward(xd, wd, np.ascontiguousarray(b.data))

    def bw(g):
        return kernels.conv_time_backward(xd, wd, np.ascontiguousarray(g))

    return _result(np.asarray(out), (x, w, b), bw, "conv_time")


def rbf_mmd(x, y, bandwidths):
    """Biased squared MMD between point sets (m, d) and (l, d), sum-of-RBF kernel."""
    x, y = as_tensor(x), as_tensor(y)
    if x.ndim != 2 or y.ndim != 2:
        raise ShapeError(f"mmd expects 2-D sample matrices, got {x.shape} and {y.shape}")
    if x.shape[0] < 1 or y.shape[0] < 1:
        raise ContractError("mmd needs at least one sample on each side")
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"mmd sample dimensions differ: {x.shape} vs {y.shape}")
    bws = np.asarray(bandwidths, dtype=np.float64)
    if bws.size == 0 or np.any(bws <= 0):
        raise ConfigError("mmd bandwidths must be positive and non-empty")
    value, gx, gy = kernels.mmd_rbf(np.ascontiguousarray(x.data), np.ascontiguousarray(y.data), bws)

    def bw(g):
        return g * gx, g * gy

    return _result(np.array(value), (x, y), bw, "mmd")


# ---------------------------------------------------------------------------
# tape and backward sweep


class ComputationTape:
    """Topologically ordered records reachable from one output tensor."""

    def __init__(self, records):
        self.records = records

    @classmethod
    def from_output(cls, out):
        order = []
        seen = set()
        stack = [(out, False)]
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
        return cls(order)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward needs a scalar loss, got shape {shape}")
    if not loss.requires_grad:
        return
    tape = ComputationTape.from_output(loss)
    grads = {id(loss): np.ones(loss.shape)}
    for node in reversed(tape.records):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64).reshape(parent.shape)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def grad_check(f, x, eps=1e-6, floor=1e-3, indices=None):
    """Worst relative error between reverse-mode and central-difference gradients.

    ``f`` maps ``x`` (a leaf tensor) to a scalar tensor and must be
    deterministic. The per-coordinate error is ``|a - n| / max(|a|, |n|, floor)``
    so coordinates whose true gradient is ~0 are judged absolutely. ``indices``
    optionally restricts the check to a subset of flat coordinates.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ContractError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    saved_grad, saved_flag = x.grad, x.requires_grad
    x.grad = None
    x.requires_grad = True
    try:
        out = f(x)
        backward(out)
        analytic = np.zeros(x.shape) if x.grad is None else x.grad.copy()
    finally:
        x.grad, x.requires_grad = saved_grad, saved_flag
    flat = x.data.reshape(-1)
    coords = range(flat.size) if indices is None else indices
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).item()
        flat[i] = orig - eps
        fm = f(x).item()
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * eps)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        if not math.isfinite(err):
            return math.inf
        worst = max(worst, err)
    return worst
