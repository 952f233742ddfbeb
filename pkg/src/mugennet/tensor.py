"""Dense tensor with reverse-mode autodiff on top of numpy.

Values are stored row-major (N, C, H, W for image maps). Storage is f32 by
default; building a graph from f64 leaves keeps everything in f64, which is
what the gradient checks use. Backward walks the recorded graph in reverse
topological order, accumulating into ``.grad``.
"""

import numpy as np
from scipy import special

__all__ = [
    "Tensor", "ShapeError", "NumericalError", "DegenerateBatchError",
    "matmul", "conv2d", "softmax_rows", "layer_norm", "batch_norm",
    "sigmoid", "relu", "gelu", "global_max_pool", "global_avg_pool",
    "avg_pool2d", "max_pool2d", "upsample2x", "concat_channels", "broadcast_to",
    "set_nan_checks",
]


class ShapeError(ValueError):
    pass


class NumericalError(ArithmeticError):
    """Raised by the NaN guard, naming the first offending op."""

    def __init__(self, op_name):
        super().__init__(f"non-finite values produced by op '{op_name}'")
        self.op_name = op_name


class DegenerateBatchError(ValueError):
    pass


_NAN_CHECKS = False


def set_nan_checks(enabled):
    """Toggle per-op finiteness assertions (debug mode, slow)."""
    global _NAN_CHECKS
    _NAN_CHECKS = bool(enabled)


def _guard(arr, op_name):
    if _NAN_CHECKS and not np.all(np.isfinite(arr)):
        raise NumericalError(op_name)
    return arr


def _as_array(data, dtype=None):
    a = np.asarray(data)
    if dtype is not None:
        return a.astype(dtype, copy=False)
    if a.dtype in (np.float32, np.float64):
        return a
    return a.astype(np.float32)


class Tensor:
    """N-d value array with an optional gradient slot and graph record."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "op")

    def __init__(self, data, requires_grad=False, dtype=None, _prev=(), op="leaf"):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev = _prev
        self.op = op

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            # copy: g may be aliased by a sibling consumer of the same upstream grad
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    # -- graph construction --------------------------------------------------

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        """Reverse-mode sweep. ``self`` must be scalar (size 1)."""
        if self.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.shape}")
        # iterative topo sort; graphs get deep enough to blow the recursion limit
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __rsub__(self, other):
        return add(_wrap(other), -self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) > 1 else axes[0])


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64 if np.ndim(x) == 0 else None))


def _make(data, parents, op, backward):
    req = any(p.requires_grad for p in parents)
    out = Tensor(_guard(data, op), requires_grad=req,
                 _prev=tuple(p for p in parents if p.requires_grad) if req else (), op=op)
    if req:
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise -------------------------------------------------------------


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), "add", backward)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), "mul", backward)


def power(a, exponent):
    a = _wrap(a)
    data = a.data ** exponent

    def backward(g):
        a.accumulate_grad(g * exponent * a.data ** (exponent - 1))

    return _make(data, (a,), "pow", backward)


def log(a):
    a = _wrap(a)
    data = np.log(a.data)

    def backward(g):
        a.accumulate_grad(g / a.data)

    return _make(data, (a,), "log", backward)


def exp(a):
    a = _wrap(a)
    data = np.exp(a.data)

    def backward(g):
        a.accumulate_grad(g * data)

    return _make(data, (a,), "exp", backward)


def clamp(a, lo, hi):
    a = _wrap(a)
    data = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def backward(g):
        a.accumulate_grad(g * inside)

    return _make(data, (a,), "clamp", backward)


def sigmoid(a):
    a = _wrap(a)
    data = np.empty_like(a.data)
    pos = a.data >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    data[~pos] = ex / (1.0 + ex)

    def backward(g):
        a.accumulate_grad(g * data * (1.0 - data))

    return _make(data, (a,), "sigmoid", backward)


def relu(a):
    a = _wrap(a)
    data = np.maximum(a.data, 0)

    def backward(g):
        a.accumulate_grad(g * (a.data > 0))

    return _make(data, (a,), "relu", backward)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a):
    """Exact (erf-based) GELU."""
    a = _wrap(a)
    cdf = 0.5 * (1.0 + special.erf(a.data * _INV_SQRT2))
    data = a.data * cdf

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
        a.accumulate_grad(g * (cdf + a.data * pdf))

    return _make(data, (a,), "gelu", backward)


# -- reductions / reshaping --------------------------------------------------


def tsum(a):
    a = _wrap(a)
    data = np.asarray(a.data.sum(dtype=np.float64)).astype(a.data.dtype)

    def backward(g):
        a.accumulate_grad(np.broadcast_to(g, a.data.shape).astype(a.data.dtype))

    return _make(data, (a,), "sum", backward)


def tmean(a):
    return mul(tsum(a), 1.0 / a.size)


def reshape(a, shape):
    a = _wrap(a)
    data = a.data.reshape(shape)

    def backward(g):
        a.accumulate_grad(g.reshape(a.data.shape))

    return _make(data, (a,), "reshape", backward)


def transpose(a, axes):
    a = _wrap(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def backward(g):
        a.accumulate_grad(g.transpose(inv))

    return _make(data, (a,), "transpose", backward)


def broadcast_to(a, shape):
    a = _wrap(a)
    data = np.broadcast_to(a.data, shape).copy()

    def backward(g):
        a.accumulate_grad(_unbroadcast(g, a.data.shape))

    return _make(data, (a,), "broadcast", backward)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b):
    """Matrix product; also accepts stacked operands with equal leading dims."""
    a, b = _wrap(a), _wrap(b)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dims disagree: {a.data.shape} x {b.data.shape}")
    if a.data.ndim != b.data.ndim or a.data.shape[:-2] != b.data.shape[:-2]:
        if not (a.data.ndim == 2 and b.data.ndim == 2):
            raise ShapeError(
                f"matmul batch dims disagree: {a.data.shape} x {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(np.matmul(g, b.data.swapaxes(-1, -2)))
        if b.requires_grad:
            b.accumulate_grad(np.matmul(a.data.swapaxes(-1, -2), g))

    return _make(data, (a, b), "matmul", backward)


def _im2col(xp, kh, kw, sh, sw, oh, ow):
    # xp: padded input (N, C, Hp, Wp) -> (N, C, kh, kw, oh, ow)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]            # (N, C, oh, ow, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))


def conv2d(x, w, bias=None, stride=1, pad=0):
    """Cross-correlation (no kernel flip) with bias.

    x: (N, C, H, W), w: (F, C, kh, kw), bias: (F,) or None.
    """
    x, w = _wrap(x), _wrap(w)
    if bias is not None:
        bias = _wrap(bias)
    n, c, h, wd = x.data.shape
    f, cw, kh, kw = w.data.shape
    if c != cw:
        raise ShapeError(f"conv2d channel mismatch: input C={c}, kernel C={cw}")
    sh = sw = int(stride)
    ph = pw = int(pad)
    if (h + 2 * ph - kh) % sh or (wd + 2 * pw - kw) % sw:
        raise ShapeError(
            f"conv2d non-integral output extent for input {h}x{wd}, "
            f"kernel {kh}x{kw}, stride {stride}, pad {pad}")
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d kernel {kh}x{kw} exceeds padded input {h + 2 * ph}x{wd + 2 * pw}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow).reshape(n, c * kh * kw, oh * ow)
    w2 = w.data.reshape(f, c * kh * kw)
    out = np.matmul(w2, cols).reshape(n, f, oh, ow)
    if bias is not None:
        out = out + bias.data.reshape(1, f, 1, 1)

    def backward(g):
        g2 = g.reshape(n, f, oh * ow)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            dw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.data.shape)
            w.accumulate_grad(dw)
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2).reshape(n, c, kh, kw, oh, ow)
            dxp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw), dtype=x.data.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += dcols[:, :, i, j]
            dx = dxp[:, :, ph:ph + h, pw:pw + wd] if ph or pw else dxp
            x.accumulate_grad(dx)

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out, parents, "conv2d", backward)


# -- normalization -----------------------------------------------------------


def softmax_rows(x):
    """Row-stable softmax along the last axis."""
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        x.accumulate_grad((g - dot) * data)

    return _make(data, (x,), "softmax_rows", backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Per-row (last axis) normalization with learned affine."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def backward(g):
        d = x.data.shape[-1]
        if gamma.requires_grad:
            gamma.accumulate_grad(_unbroadcast(g * xhat, gamma.data.shape))
        if beta.requires_grad:
            beta.accumulate_grad(_unbroadcast(g, beta.data.shape))
        if x.requires_grad:
            gy = g * gamma.data
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv * (gy - m1 - xhat * m2))

    return _make(data, (x, gamma, beta), "layer_norm", backward)


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Channel normalization over (N,) or (N, H, W) sample axes.

    ``running_mean`` / ``running_var`` are plain arrays mutated in place when
    ``training`` is true.
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if x.data.ndim == 2:
        axes, cshape = (0,), (1, -1)
    elif x.data.ndim == 4:
        axes, cshape = (0, 2, 3), (1, -1, 1, 1)
    else:
        raise ShapeError(f"batch_norm expects 2-d or 4-d input, got {x.data.shape}")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"batch_norm affine length {gamma.data.shape} != channels {c}")

    if training:
        m = int(np.prod([x.data.shape[i] for i in axes]))
        if m <= 1:
            raise DegenerateBatchError(
                "batch_norm in training mode needs more than one value per channel")
        mu = x.data.mean(axis=axes)
        xc = x.data - mu.reshape(cshape)
        var = (xc * xc).mean(axis=axes)
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
        running_var *= (1.0 - momentum)
        running_var += momentum * var
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv.reshape(cshape)
        data = xhat * gamma.data.reshape(cshape) + beta.data.reshape(cshape)

        def backward(g):
            if gamma.requires_grad:
                gamma.accumulate_grad((g * xhat).sum(axis=axes))
            if beta.requires_grad:
                beta.accumulate_grad(g.sum(axis=axes))
            if x.requires_grad:
                gy = g * gamma.data.reshape(cshape)
                m1 = gy.mean(axis=axes).reshape(cshape)
                m2 = (gy * xhat).mean(axis=axes).reshape(cshape)
                x.accumulate_grad(inv.reshape(cshape) * (gy - m1 - xhat * m2))
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        scale = (gamma.data * inv).reshape(cshape)
        data = (x.data - running_mean.reshape(cshape)) * scale + beta.data.reshape(cshape)

        def backward(g):
            xhat_e = (x.data - running_mean.reshape(cshape)) * inv.reshape(cshape)
            if gamma.requires_grad:
                gamma.accumulate_grad((g * xhat_e).sum(axis=axes))
            if beta.requires_grad:
                beta.accumulate_grad(g.sum(axis=axes))
            if x.requires_grad:
                x.accumulate_grad(g * scale)

    return _make(data, (x, gamma, beta), "batch_norm", backward)


# -- pooling / resampling ----------------------------------------------------


def global_max_pool(x):
    """(N, C, H, W) -> (N, C); gradient goes to the first argmax in scan order."""
    x = _wrap(x)
    n, c, h, w = x.data.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=-1)              # first max in scan order
    data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        x.accumulate_grad(gflat.reshape(x.data.shape))

    return _make(data, (x,), "global_max_pool", backward)


def global_avg_pool(x):
    """(N, C, H, W) -> (N, C) per-channel mean."""
    x = _wrap(x)
    n, c, h, w = x.data.shape
    data = x.data.mean(axis=(2, 3))

    def backward(g):
        x.accumulate_grad(np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape).astype(x.data.dtype))

    return _make(data, (x,), "global_avg_pool", backward)


def max_pool2d(x, k=2):
    """Non-overlapping k x k max pooling; gradient to the first max per window."""
    x = _wrap(x)
    n, c, h, w = x.data.shape
    if h % k or w % k:
        raise ShapeError(f"max_pool2d: {h}x{w} not divisible by {k}")
    v = x.data.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5)
    flat = np.ascontiguousarray(v).reshape(n, c, h // k, w // k, k * k)
    idx = flat.argmax(axis=-1)
    data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gx = gflat.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5)
        x.accumulate_grad(gx.reshape(x.data.shape))

    return _make(data, (x,), "max_pool2d", backward)


def avg_pool2d(x, k=2):
    """Non-overlapping k x k average pooling; extents must divide."""
    x = _wrap(x)
    n, c, h, w = x.data.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d: {h}x{w} not divisible by {k}")
    v = x.data.reshape(n, c, h // k, k, w // k, k)
    data = v.mean(axis=(3, 5))

    def backward(g):
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        x.accumulate_grad(gx.astype(x.data.dtype))

    return _make(data, (x,), "avg_pool2d", backward)


_UPSAMPLE_MATS = {}


def _upsample_matrix(n, mode, dtype):
    key = (n, mode, np.dtype(dtype).str)
    m = _UPSAMPLE_MATS.get(key)
    if m is not None:
        return m
    m = np.zeros((2 * n, n), dtype=dtype)
    if mode == "nearest":
        for i in range(2 * n):
            m[i, i // 2] = 1.0
    else:  # bilinear, half-pixel centers
        for i in range(2 * n):
            src = (i + 0.5) / 2.0 - 0.5
            src = min(max(src, 0.0), n - 1.0)
            i0 = int(np.floor(src))
            i1 = min(i0 + 1, n - 1)
            frac = src - i0
            m[i, i0] += 1.0 - frac
            m[i, i1] += frac
    _UPSAMPLE_MATS[key] = m
    return m


def upsample2x(x, mode="nearest"):
    """(N, C, H, W) -> (N, C, 2H, 2W); backward is the exact adjoint."""
    if mode not in ("nearest", "bilinear"):
        raise ValueError(f"upsample2x mode must be nearest|bilinear, got {mode!r}")
    x = _wrap(x)
    n, c, h, w = x.data.shape
    mh = _upsample_matrix(h, mode, x.data.dtype)
    mw = _upsample_matrix(w, mode, x.data.dtype)
    data = np.matmul(np.matmul(mh, x.data), mw.T)

    def backward(g):
        x.accumulate_grad(np.matmul(mh.T, np.matmul(g, mw)))

    return _make(data, (x,), "upsample2x", backward)


def concat_channels(xs):
    """Stack (N, C_i, H, W) tensors along the channel axis."""
    xs = [_wrap(x) for x in xs]
    if not xs:
        raise ShapeError("concat_channels needs at least one tensor")
    base = xs[0].data.shape
    for x in xs[1:]:
        s = x.data.shape
        if s[0] != base[0] or s[2:] != base[2:]:
            raise ShapeError(f"concat_channels spatial/batch mismatch: {base} vs {s}")
    data = np.concatenate([x.data for x in xs], axis=1)
    splits = np.cumsum([x.data.shape[1] for x in xs])[:-1]

    def backward(g):
        for x, piece in zip(xs, np.split(g, splits, axis=1)):
            if x.requires_grad:
                x.accumulate_grad(piece)

    return _make(data, tuple(xs), "concat_channels", backward)
