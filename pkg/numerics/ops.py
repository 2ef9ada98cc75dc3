"""
Differentiable operations on ``Tensor``.

Every op computes its forward value with numpy and registers a backward rule
through ``record``; nothing is fused across ops except where noted
(``conv2d`` and ``layernorm`` carry hand-derived backward rules).
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ContractError, DimensionError
from .tensor import Tensor, as_tensor, record

POINTWISE = ("exp", "sigmoid", "silu", "relu", "softplus", "exprel")


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _pair_ints(value, what):
    if isinstance(value, int):
        return value, value
    value = tuple(value)
    if len(value) != 2:
        raise DimensionError(f"{what} must be an int or a pair, got {value}")
    return value


# --------------------------
# ELEMENTWISE ARITHMETIC
# --------------------------
def add(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return record(out, (a, b), backward, "div")


def neg(x):
    return record(-x.data, (x,), lambda g: (-g,), "neg")


# --------------------------
# REDUCTIONS / SHAPE
# --------------------------
def sum(x, axis=None, keepdims=False):
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.array(np.broadcast_to(g, x.shape)),)

    return record(np.asarray(out, dtype=x.dtype), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return div(sum(x, axis=axis, keepdims=keepdims), float(count))


def reshape(x, shape):
    out = x.data.reshape(shape)
    return record(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes):
    inverse = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)
    return record(out, (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def take(x, indices, axis, inverse=None):
    """
    Gather along ``axis``. When ``indices`` is a permutation, pass its
    ``inverse`` and the backward pass becomes another gather.
    """
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(x.data, indices, axis=axis)

    def backward(g):
        if inverse is not None:
            return (np.take(g, inverse, axis=axis),)
        gx = np.zeros_like(x.data)
        index = [slice(None)] * x.ndim
        index[axis] = indices
        np.add.at(gx, tuple(index), g)
        return (gx,)

    return record(out, (x,), backward, "take")


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def slice_axis(x, start, stop, axis):
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return record(x.data[index], (x,), backward, "slice")


def clamp(x, lo, hi):
    inside = (x.data >= lo) & (x.data <= hi)
    return record(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


def upsample_nearest(x, factor=2):
    """[B,C,H,W] -> [B,C,fH,fW], every pixel copied into an f x f block."""
    if x.ndim != 4:
        raise DimensionError(f"upsample_nearest expects [B,C,H,W], got {x.shape}")
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    b, c, h, w = x.shape

    def backward(g):
        return (g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return record(out, (x,), backward, "upsample_nearest")


# --------------------------
# LINEAR ALGEBRA
# --------------------------
def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul of {a.shape} and {b.shape}: inner dimensions must agree")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return record(a.data @ b.data, (a, b), backward, "matmul")


def linear(x, weight, bias=None):
    """x[..., in] times weight[out, in] transposed, plus bias[out]."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear of {x.shape} with weight {weight.shape}")
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, x.shape[-1])), transpose(weight, (1, 0)))
    if bias is not None:
        y = add(y, bias)
    return reshape(y, lead + (weight.shape[0],))


def conv2d(x, weight, bias=None, padding=0, stride=1, groups=1):
    """
    Cross-correlation (no kernel flip) with zero padding.

    x: [B, Cin, H, W]; weight: [Cout, Cin/groups, kh, kw]; bias: [Cout].
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    ph, pw = _pair_ints(padding, "padding")
    sh, sw = _pair_ints(stride, "stride")
    b, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if groups < 1 or cin % groups or cout % groups or cin_g * groups != cin:
        raise DimensionError(
            f"conv2d groups={groups} does not fit input channels {cin} and weight {weight.shape}"
        )
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise DimensionError(f"kernel {kh}x{kw} does not fit padded input {h + 2 * ph}x{w + 2 * pw}")
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    cout_g = cout // groups

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    windows = windows.reshape(b, groups, cin_g, ho, wo, kh, kw)
    wg = weight.data.reshape(groups, cout_g, cin_g, kh, kw)
    out = np.einsum("bgchwij,gocij->bgohw", windows, wg, optimize=True).reshape(b, cout, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    def backward(g):
        gg = g.reshape(b, groups, cout_g, ho, wo)
        gw = np.einsum("bgohw,bgchwij->gocij", gg, windows, optimize=True).reshape(weight.shape)
        gwin = np.einsum("bgohw,gocij->bgchwij", gg, wg, optimize=True).reshape(b, cin, ho, wo, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += gwin[..., i, j]
        gx = gxp[:, :, ph:ph + h, pw:pw + w]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(out.astype(x.dtype, copy=False), inputs, lambda g: backward(g)[:len(inputs)], "conv2d")


# --------------------------
# NORMALIZATION
# --------------------------
def layernorm(x, gamma=None, beta=None, eps=1e-5):
    """Normalize over the last axis, then apply the optional affine."""
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise DimensionError("layernorm over an empty last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data

    def backward(g):
        gxhat = g * gamma.data if gamma is not None else g
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).reshape(-1, d).sum(axis=0))
        if beta is not None:
            grads.append(g.reshape(-1, d).sum(axis=0))
        return tuple(grads)

    inputs = [x] + [p for p in (gamma, beta) if p is not None]
    return record(out, inputs, backward, "layernorm")


def group_norm(x, num_groups, gamma, beta, eps=1e-5):
    """Batch-free normalization of [B,C,H,W] over channel groups."""
    b, c, h, w = x.shape
    if c % num_groups:
        raise DimensionError(f"{c} channels cannot form {num_groups} groups")
    n = layernorm(reshape(x, (b, num_groups, (c // num_groups) * h * w)), eps=eps)
    n = reshape(n, x.shape)
    return add(mul(n, reshape(gamma, (1, c, 1, 1))), reshape(beta, (1, c, 1, 1)))


# --------------------------
# POINTWISE
# --------------------------
def _sigmoid(v):
    return np.exp(-np.logaddexp(0.0, -v))


def _exprel(z):
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2.0, np.expm1(safe) / safe)


def _exprel_grad(z):
    small = np.abs(z) < 1e-4
    safe = np.where(small, 1.0, z)
    em1 = np.expm1(safe)
    full = (safe * em1 + safe - em1) / (safe * safe)
    return np.where(small, 0.5 + z / 3.0 + z * z / 8.0, full)


def pointwise(name, x):
    """Elementwise activation with its matching derivative."""
    v = x.data
    if name == "exp":
        with np.errstate(over="ignore"):
            out = np.exp(v)
        backward = lambda g: (g * out,)
    elif name == "sigmoid":
        out = _sigmoid(v)
        backward = lambda g: (g * out * (1.0 - out),)
    elif name == "silu":
        s = _sigmoid(v)
        out = v * s
        backward = lambda g: (g * s * (1.0 + v * (1.0 - s)),)
    elif name == "relu":
        out = np.maximum(v, 0.0)
        backward = lambda g: (g * (v > 0),)
    elif name == "softplus":
        out = np.logaddexp(0.0, v)
        backward = lambda g: (g * _sigmoid(v),)
    elif name == "exprel":
        out = _exprel(v)
        backward = lambda g: (g * _exprel_grad(v),)
    else:
        raise ContractError(f"unknown pointwise op {name!r}; expected one of {POINTWISE}")
    return record(out.astype(x.dtype, copy=False), (x,), backward, name)


def exp(x):
    return pointwise("exp", x)


def sigmoid(x):
    return pointwise("sigmoid", x)


def silu(x):
    return pointwise("silu", x)


def relu(x):
    return pointwise("relu", x)


def softplus(x):
    return pointwise("softplus", x)


def exprel(x):
    """(e^x - 1) / x, continuous at 0."""
    return pointwise("exprel", x)
