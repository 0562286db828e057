"""Minimal reverse-mode automatic differentiation on dense numpy arrays.

Tensors default to float32; float64 inputs keep their dtype so the
finite-difference gradient checker can run the whole graph in double
precision. Reductions use numpy's fixed (single-threaded) evaluation
order, so forward passes are bit-reproducible on one machine.
"""

import numpy as np


class DimensionError(ValueError):
    """Shape/axis mismatch between operands."""


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype == np.float64:
        return arr
    return arr.astype(np.float32, copy=False)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_prev", "_backward", "_done")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._prev = ()
        self._backward = None
        self._done = False

    # ------------------------------------------------------------------ infra

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
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(()))

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss, got shape %s" % (self.data.shape,))
        if self._done:
            raise RuntimeError("backward() called twice on the same tape")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
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
            if node._backward is not None:
                node._backward(node.grad)
                node._backward = None  # tape is consumed
        self._done = True

    # ------------------------------------------------------------- arithmetic

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_wrap(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self)


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward):
    """Build an op result; prune the tape when no parent needs gradients."""
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._prev = tuple(parents)
        out._backward = backward
    return out


# ----------------------------------------------------------------- primitives


def add(a, b):
    a = _wrap(a, getattr(b, "dtype", np.float32))
    b = _wrap(b, a.dtype)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def mul(a, b):
    a = _wrap(a, getattr(b, "dtype", np.float32))
    b = _wrap(b, a.dtype)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def power(a, p):
    data = a.data ** p

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1))

    return _make(data, (a,), backward)


def sqrt(a):
    data = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / np.maximum(data, 1e-30))

    return _make(data, (a,), backward)


def exp(a):
    data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * data)

    return _make(data, (a,), backward)


def log(a):
    data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(data, (a,), backward)


def tabs(a):
    data = np.abs(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * np.sign(a.data))

    return _make(data, (a,), backward)


def matmul(a, b):
    if a.ndim < 1 or b.ndim < 1:
        raise DimensionError("matmul requires arrays of rank >= 1")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(
            f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if a.ndim == 2 and b.ndim == 2:
        # einsum's fixed per-element summation order makes row permutations of
        # the left operand commute bit-exactly with the product; blas kernels
        # pick different accumulation orders depending on row position
        data = np.einsum("ij,jk->ik", a.data, b.data)
    else:
        data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(data, (a, b), backward)


def tsum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.shape).copy())

    return _make(data, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _make(data, (a,), backward)


def transpose(a, axes=None):
    data = np.transpose(a.data, axes)

    def backward(g):
        if a.requires_grad:
            if axes is None:
                a._accumulate(np.transpose(g))
            else:
                inv = np.argsort(axes)
                a._accumulate(np.transpose(g, inv))

    return _make(data, (a,), backward)


def concat(tensors, axis=0):
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(data, tuple(tensors), backward)


def take_rows(a, idx):
    """Gather rows along axis 0; differentiable scatter-add on the way back."""
    idx = np.asarray(idx)
    data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            a._accumulate(acc)

    return _make(data, (a,), backward)


def narrow(a, axis, lo, hi):
    """Slice [lo, hi) along one axis."""
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(lo, hi)
    idx = tuple(idx)
    data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            acc[idx] = g
            a._accumulate(acc)

    return _make(data, (a,), backward)


def minimum(a, b):
    b = _wrap(b, a.dtype)
    data = np.minimum(a.data, b.data)

    def backward(g):
        # ties route the gradient to the first operand
        m = a.data <= b.data
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * m, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~m, b.shape))

    return _make(data, (a, b), backward)


def maximum(a, b):
    b = _wrap(b, a.dtype)
    data = np.maximum(a.data, b.data)

    def backward(g):
        m = a.data >= b.data
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * m, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~m, b.shape))

    return _make(data, (a, b), backward)


def clamp(a, lo, hi):
    data = np.clip(a.data, lo, hi)

    def backward(g):
        if a.requires_grad:
            inside = (a.data >= lo) & (a.data <= hi)
            a._accumulate(g * inside)

    return _make(data, (a,), backward)


# ------------------------------------------------------------- nonlinearities


def relu(a):
    data = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return _make(data, (a,), backward)


def leaky_relu(a, slope=0.2):
    data = np.where(a.data > 0, a.data, slope * a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * np.where(a.data > 0, 1.0, slope).astype(a.dtype))

    return _make(data, (a,), backward)


def sigmoid(a):
    data = np.empty_like(a.data)
    pos = a.data >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    data[~pos] = ex / (1.0 + ex)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * data * (1.0 - data))

    return _make(data, (a,), backward)


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * data).sum(axis=axis, keepdims=True)
            a._accumulate(data * (g - dot))

    return _make(data, (a,), backward)


def max_over_axis(a, axis):
    """Channel-wise symmetric max aggregation; ties send grad to the first max."""
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {a.ndim}")
    data = a.data.max(axis=axis)
    arg = a.data.argmax(axis=axis)

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.put_along_axis(acc, np.expand_dims(arg, axis),
                              np.expand_dims(g, axis), axis)
            a._accumulate(acc)

    return _make(data, (a,), backward)


# --------------------------------------------------------------- convolution


def pad2d(a, pad, mode="zeros"):
    """Pad the last two axes of an NCHW tensor."""
    if pad == 0:
        return a
    widths = [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)]
    if mode == "zeros":
        data = np.pad(a.data, widths)
    elif mode == "replicate":
        data = np.pad(a.data, widths, mode="edge")
    else:
        raise ValueError(f"unknown pad mode {mode!r}")
    p = pad

    def backward(g):
        if not a.requires_grad:
            return
        if mode == "zeros":
            a._accumulate(g[..., p:-p, p:-p])
        else:
            g = g.copy()
            g[..., p, :] += g[..., :p, :].sum(axis=-2)
            g[..., -p - 1, :] += g[..., -p:, :].sum(axis=-2)
            core = g[..., p:-p, :]
            core[..., :, p] += core[..., :, :p].sum(axis=-1)
            core[..., :, -p - 1] += core[..., :, -p:].sum(axis=-1)
            a._accumulate(core[..., :, p:-p])

    return _make(data, (a,), backward)


def conv2d(x, w, stride=1, dilation=1, padding=0, pad_mode="zeros"):
    """2-D convolution, NCHW input and OIkk square kernel."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(
            f"conv2d expects NCHW input and OIHW weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input axis 1 has {x.shape[1]}, weight axis 1 has {w.shape[1]}")
    if w.shape[2] != w.shape[3]:
        raise DimensionError(f"conv2d kernel must be square, got {w.shape[2:]}")
    if stride < 1 or dilation < 1:
        raise ValueError("stride and dilation must be >= 1")

    xp = pad2d(x, padding, pad_mode)
    n, c, hp, wp = xp.shape
    o, _, k, _ = w.shape
    eff = dilation * (k - 1) + 1
    if hp < eff or wp < eff:
        raise DimensionError(
            f"conv2d spatial input {hp}x{wp} smaller than dilated kernel {eff}x{eff}")
    ho = (hp - eff) // stride + 1
    wo = (wp - eff) // stride + 1

    patches = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for ki in range(k):
        for kj in range(k):
            patches[:, :, ki, kj] = xp.data[
                :, :,
                ki * dilation: ki * dilation + stride * ho: stride,
                kj * dilation: kj * dilation + stride * wo: stride]

    out = np.tensordot(w.data, patches, axes=([1, 2, 3], [1, 2, 3]))  # (O,N,Ho,Wo)
    out = out.transpose(1, 0, 2, 3).copy()

    def backward(g):
        # g: (N,O,Ho,Wo)
        if w.requires_grad:
            gw = np.tensordot(g, patches, axes=([0, 2, 3], [0, 4, 5]))  # (O,C,k,k)
            w._accumulate(gw)
        if xp.requires_grad:
            gp = np.tensordot(g, w.data, axes=([1], [0]))  # (N,Ho,Wo,C,k,k)
            gp = gp.transpose(0, 3, 4, 5, 1, 2)  # (N,C,k,k,Ho,Wo)
            gx = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for ki in range(k):
                for kj in range(k):
                    gx[:, :,
                       ki * dilation: ki * dilation + stride * ho: stride,
                       kj * dilation: kj * dilation + stride * wo: stride] += gp[:, :, ki, kj]
            xp._accumulate(gx)

    return _make(out, (xp, w), backward)


# -------------------------------------------------------------------- resize


def _bilinear_matrix(n_in, n_out, dtype):
    """Row-stochastic interpolation matrix for half-pixel-centred bilinear resize."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def _avg_pool_matrix(n_in, n_out, dtype):
    """Row-stochastic adaptive average pooling matrix with integer bin edges."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -(-((i + 1) * n_in) // n_out)  # ceil
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def _separable_resize(x, mh, mw):
    # out[..., p, q] = sum_{h,w} mh[p,h] * x[..., h, w] * mw[q,w]
    data = np.einsum("ph,...hw,qw->...pq", mh, x.data, mw, optimize=True)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.einsum("ph,...pq,qw->...hw", mh, g, mw, optimize=True))

    return _make(data, (x,), backward)


def bilinear_upsample(x, out_h, out_w):
    """Bilinear resize of the last two axes (half-pixel centres)."""
    h, w = x.shape[-2:]
    mh = _bilinear_matrix(h, out_h, x.dtype.type)
    mw = _bilinear_matrix(w, out_w, x.dtype.type)
    return _separable_resize(x, mh, mw)


def adaptive_avg_pool(x, out_h, out_w):
    """Adaptive average pooling of the last two axes."""
    h, w = x.shape[-2:]
    if out_h > h or out_w > w:
        raise DimensionError(
            f"adaptive_avg_pool target {out_h}x{out_w} larger than input {h}x{w}")
    mh = _avg_pool_matrix(h, out_h, x.dtype.type)
    mw = _avg_pool_matrix(w, out_w, x.dtype.type)
    return _separable_resize(x, mh, mw)


# --------------------------------------------------------------- grad check


def grad_check(f, point, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `f` must map a Tensor to a scalar Tensor. Runs in float64. Inputs that
    put a ReLU kink exactly at 0 are excluded by contract: the central
    difference straddles the kink and the comparison is meaningless there.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = np.asarray(point.data, dtype=np.float64).copy()
    pt = Tensor(base.copy(), requires_grad=True)
    out = f(pt)
    if out.data.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = (pt.grad if pt.grad is not None else np.zeros_like(base)).astype(np.float64)

    flat = base.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(base.copy())).item()
        flat[i] = orig - eps
        lo = f(Tensor(base.copy())).item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2 * eps)
    numeric = numeric.reshape(base.shape)

    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic.reshape(base.shape) - numeric) / denom))
