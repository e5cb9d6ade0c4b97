"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every other module builds on this one.  Tensors are immutable value holders
(row-major numpy buffers); each op records its parents and a vector-Jacobian
closure, and `backward` replays the tape in reverse topological order.
Parameters accumulate gradients across backward calls until `zero_grad`.
"""

import math

import numpy as np
from scipy.special import erf as _erf

__all__ = [
    "Tensor", "Parameter", "ShapeError", "NumericError", "astensor",
    "add", "sub", "mul", "div", "neg", "matmul", "reshape", "transpose",
    "broadcast_to", "concat", "gather", "narrow", "exp", "log", "tanh",
    "erf", "sqrt", "absolute", "tsum", "tmean", "softmax", "layer_norm",
    "gelu", "conv_temporal", "pointwise_conv", "max_pool_temporal",
    "global_average_pool", "backward",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(RuntimeError):
    """Raised when a computation produces non-finite values."""


class Tensor:
    """A dense n-dimensional array of float64 with an autodiff tape entry."""

    __slots__ = ("data", "parents", "vjp")

    def __init__(self, data, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = tuple(parents)
        self.vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # arithmetic sugar; scalars and ndarrays become constant tensors
    def __add__(self, other):
        return add(self, astensor(other))

    def __radd__(self, other):
        return add(astensor(other), self)

    def __sub__(self, other):
        return sub(self, astensor(other))

    def __rsub__(self, other):
        return sub(astensor(other), self)

    def __mul__(self, other):
        return mul(self, astensor(other))

    def __rmul__(self, other):
        return mul(astensor(other), self)

    def __truediv__(self, other):
        return div(self, astensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, astensor(other))


class Parameter(Tensor):
    """A learnable tensor with a persistent, accumulating gradient buffer."""

    __slots__ = ("name", "grad")

    def __init__(self, data, name=""):
        super().__init__(data)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def astensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
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
    a, b = astensor(a), astensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor(out, (a, b), vjp)


def sub(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return Tensor(out, (a, b), vjp)


def mul(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out, (a, b), vjp)


def div(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor(out, (a, b), vjp)


def neg(a):
    a = astensor(a)
    return Tensor(-a.data, (a,), lambda g: (-g,))


def exp(a):
    a = astensor(a)
    out = np.exp(a.data)
    return Tensor(out, (a,), lambda g: (g * out,))


def log(a):
    a = astensor(a)
    return Tensor(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    a = astensor(a)
    out = np.tanh(a.data)
    return Tensor(out, (a,), lambda g: (g * (1.0 - out * out),))


def erf(a):
    a = astensor(a)
    out = _erf(a.data)
    coef = 2.0 / math.sqrt(math.pi)

    def vjp(g):
        return (g * coef * np.exp(-a.data * a.data),)

    return Tensor(out, (a,), vjp)


def sqrt(a):
    a = astensor(a)
    out = np.sqrt(a.data)
    return Tensor(out, (a,), lambda g: (g * 0.5 / out,))


def absolute(a):
    a = astensor(a)
    return Tensor(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def gelu(a):
    """Exact-erf GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    a = astensor(a)
    inner = _erf(a.data / math.sqrt(2.0))
    out = 0.5 * a.data * (1.0 + inner)

    def vjp(g):
        pdf = np.exp(-0.5 * a.data * a.data) / math.sqrt(2.0 * math.pi)
        return (g * (0.5 * (1.0 + inner) + a.data * pdf),)

    return Tensor(out, (a,), vjp)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape):
    a = astensor(a)
    old = a.data.shape
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes):
    a = astensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def broadcast_to(a, shape):
    a = astensor(a)
    out = np.broadcast_to(a.data, shape).copy()
    return Tensor(out, (a,), lambda g: (_unbroadcast(g, a.data.shape),))


def concat(tensors, axis):
    tensors = [astensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return Tensor(out, tuple(tensors), vjp)


def gather(a, indices, axis):
    """Select rows along `axis` by an integer index list (repeats allowed)."""
    a = astensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, idx, axis=axis)
    ax = axis % a.data.ndim
    key = (slice(None),) * ax + (idx,)

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, key, g)
        return (ga,)

    return Tensor(out, (a,), vjp)


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along `axis`."""
    a = astensor(a)
    ax = axis % a.data.ndim
    key = (slice(None),) * ax + (slice(start, start + length),)
    out = a.data[key].copy()

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return Tensor(out, (a,), vjp)


# ---------------------------------------------------------------------------
# contractions and reductions


def matmul(a, b):
    a, b = astensor(a), astensor(b)
    if a.data.ndim == 0 or b.data.ndim == 0:
        raise ShapeError("matmul requires at least 1-d operands")
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else -1]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        # lift 1-d operands to matrices so the transpose rules apply uniformly
        a2 = a.data if a.data.ndim > 1 else a.data[None, :]
        b2 = b.data if b.data.ndim > 1 else b.data[:, None]
        g2 = g
        if a.data.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if b.data.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
        gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
        if a.data.ndim == 1:
            ga = np.squeeze(ga, -2)
        if b.data.ndim == 1:
            gb = np.squeeze(gb, -1)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor(out, (a, b), vjp)


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(a, axis=None, keepdims=False):
    a = astensor(a)
    axes = _norm_axes(axis, a.data.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return Tensor(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = astensor(a)
    axes = _norm_axes(axis, a.data.ndim)
    count = int(np.prod([a.data.shape[i] for i in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.data.shape).copy() / count,)

    return Tensor(out, (a,), vjp)


def softmax(a, axis):
    """Numerically stable softmax (max-subtraction) along one axis."""
    a = astensor(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, (a,), vjp)


def layer_norm(a, gamma, beta, axis=-1, eps=1e-5):
    """Normalize to zero mean / unit variance along `axis`, then affine."""
    a = astensor(a)
    ax = axis % a.data.ndim
    size = a.data.shape[ax]
    if gamma.data.size != size or beta.data.size != size:
        raise ShapeError(
            f"layer_norm affine length {gamma.data.size} != axis size {size}")
    bshape = [1] * a.data.ndim
    bshape[ax] = size
    g = reshape(gamma, bshape)
    b = reshape(beta, bshape)
    mu = tmean(a, axis=ax, keepdims=True)
    xc = sub(a, mu)
    var = tmean(mul(xc, xc), axis=ax, keepdims=True)
    xn = div(xc, sqrt(add(var, eps)))
    return add(mul(xn, g), b)


# ---------------------------------------------------------------------------
# temporal convolution / pooling (frame axis = -2, channel axis = -1)


def _same_pad(t, t_out, kernel, dilation, stride):
    span = (t_out - 1) * stride + (kernel - 1) * dilation + 1
    total = max(span - t, 0)
    left = total // 2
    return left, total - left


def conv_temporal(x, w, dilation=1, stride=1, depthwise=False):
    """1-D convolution along the frame axis with "same" zero padding.

    `x` is (..., T, C).  Full convolution takes `w` of shape (K, C_in, C_out);
    depthwise takes (K, C) and convolves each channel independently.
    Output frame count is ceil(T / stride).
    """
    x, w = astensor(x), astensor(w)
    if depthwise:
        if w.data.ndim != 2:
            raise ShapeError(f"depthwise kernel must be (K, C), got {w.shape}")
        kernel, c_in = w.data.shape
    else:
        if w.data.ndim != 3:
            raise ShapeError(f"conv kernel must be (K, C_in, C_out), got {w.shape}")
        kernel, c_in, _ = w.data.shape
    if x.data.shape[-1] != c_in:
        raise ShapeError(
            f"conv channel mismatch: input {x.shape} vs kernel {w.shape}")
    t = x.data.shape[-2]
    if t < 1:
        raise ShapeError("conv_temporal needs at least one frame")
    t_out = -(-t // stride)
    left, right = _same_pad(t, t_out, kernel, dilation, stride)
    if (kernel - 1) * dilation + 1 > t + left + right:
        raise ShapeError(
            f"kernel span {(kernel - 1) * dilation + 1} exceeds padded length")
    pad = [(0, 0)] * x.data.ndim
    pad[-2] = (left, right)
    padded = np.pad(x.data, pad)
    end = (t_out - 1) * stride + 1

    segs = []
    out = None
    for k in range(kernel):
        sl = (Ellipsis, slice(k * dilation, k * dilation + end, stride),
              slice(None))
        seg = padded[sl]
        segs.append(seg)
        term = seg * w.data[k] if depthwise else np.matmul(seg, w.data[k])
        out = term if out is None else out + term

    def vjp(g):
        gp = np.zeros_like(padded)
        gw = np.zeros_like(w.data)
        for k in range(kernel):
            sl = (Ellipsis, slice(k * dilation, k * dilation + end, stride),
                  slice(None))
            if depthwise:
                gp[sl] += g * w.data[k]
                gw[k] = (g * segs[k]).reshape(-1, c_in).sum(axis=0)
            else:
                gp[sl] += np.matmul(g, w.data[k].T)
                gw[k] = segs[k].reshape(-1, c_in).T @ g.reshape(-1, g.shape[-1])
        gx = gp[(Ellipsis, slice(left, left + t), slice(None))]
        return gx.copy(), gw

    return Tensor(out, (x, w), vjp)


def pointwise_conv(x, w):
    """1x1 convolution over channels: a per-position linear map C_in -> C_out."""
    x, w = astensor(x), astensor(w)
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(
            f"pointwise channel mismatch: input {x.shape} vs weight {w.shape}")
    return matmul(x, w)


def max_pool_temporal(x, window, stride=1):
    """Max over temporal windows, same padding with a -inf sentinel."""
    x = astensor(x)
    if window < 1:
        raise ShapeError("pool window must be >= 1")
    t = x.data.shape[-2]
    t_out = -(-t // stride)
    left, right = _same_pad(t, t_out, window, 1, stride)
    pad = [(0, 0)] * x.data.ndim
    pad[-2] = (left, right)
    padded = np.pad(x.data, pad, constant_values=-np.inf)
    end = (t_out - 1) * stride + 1
    stackd = np.stack(
        [padded[(Ellipsis, slice(k, k + end, stride), slice(None))]
         for k in range(window)])
    arg = stackd.argmax(axis=0)
    out = np.take_along_axis(stackd, arg[None], axis=0)[0]

    def vjp(g):
        gp = np.zeros_like(padded)
        for k in range(window):
            sl = (Ellipsis, slice(k, k + end, stride), slice(None))
            gp[sl] += g * (arg == k)
        gx = gp[(Ellipsis, slice(left, left + t), slice(None))]
        return (gx.copy(),)

    return Tensor(out, (x,), vjp)


def global_average_pool(x, axes):
    """Mean over the listed axes with those dims removed."""
    return tmean(x, axis=tuple(axes), keepdims=False)


# ---------------------------------------------------------------------------
# backward


def _topo_order(root):
    order, seen = [], set()
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
        for p in node.parents:
            stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(param) into every reachable Parameter's grad.

    Returns a {name: gradient} map over the parameters reached this call.
    Repeated calls without zero_grad accumulate.
    """
    loss = astensor(loss)
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    reached = {}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            reached[node.name] = node.grad
        if node.vjp is not None:
            for parent, pg in zip(node.parents, node.vjp(g)):
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
    return reached
