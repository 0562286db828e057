"""Parameter storage, Adam updates, and the layer zoo used by the network."""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ParamStore:
    """Named parameters plus optimizer state and non-learnable buffers."""

    def __init__(self):
        self.params = {}
        self.buffers = {}
        self._m = {}
        self._v = {}
        self.step_count = 0

    def param(self, name, init):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(init, requires_grad=True, dtype=init.dtype)
        self.params[name] = t
        return t

    def buffer(self, name, init):
        if name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        self.buffers[name] = np.asarray(init)
        return self.buffers[name]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def adam_step(self, lr, betas=(0.9, 0.999), eps=1e-8):
        b1, b2 = betas
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self._m.setdefault(name, np.zeros_like(p.data))
            v = self._v.setdefault(name, np.zeros_like(p.data))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)

    def named_arrays(self):
        """All persistent arrays (parameters then buffers) for checkpointing."""
        out = {}
        for k, p in self.params.items():
            out["p/" + k] = p.data
        for k, b in self.buffers.items():
            out["b/" + k] = b
        return out

    def load_arrays(self, arrays):
        mine = self.named_arrays()
        if set(arrays) != set(mine):
            missing = set(mine) - set(arrays)
            extra = set(arrays) - set(mine)
            raise ValueError(f"parameter set mismatch: missing={sorted(missing)[:5]} extra={sorted(extra)[:5]}")
        for k, arr in arrays.items():
            dst = mine[k]
            if dst.shape != arr.shape:
                raise ValueError(f"shape mismatch for {k}: {dst.shape} vs {arr.shape}")
            dst[...] = arr.astype(dst.dtype)


def he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def xavier_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2d:
    def __init__(self, store, name, c_in, c_out, k, stride=1, dilation=1,
                 padding=0, pad_mode="zeros", bias=True, rng=None, dtype=np.float32):
        self.stride = stride
        self.dilation = dilation
        self.padding = padding
        self.pad_mode = pad_mode
        fan_in = c_in * k * k
        self.w = store.param(name + ".w", he_normal(rng, (c_out, c_in, k, k), fan_in, dtype))
        self.b = store.param(name + ".b", np.zeros(c_out, dtype=dtype)) if bias else None

    def __call__(self, x):
        out = ad.conv2d(x, self.w, stride=self.stride, dilation=self.dilation,
                        padding=self.padding, pad_mode=self.pad_mode)
        if self.b is not None:
            out = out + self.b.reshape(1, -1, 1, 1)
        return out


class Linear:
    def __init__(self, store, name, d_in, d_out, rng=None, dtype=np.float32):
        self.w = store.param(name + ".w", xavier_uniform(rng, (d_in, d_out), d_in, d_out, dtype))
        self.b = store.param(name + ".b", np.zeros(d_out, dtype=dtype))

    def __call__(self, x):
        return x @ self.w + self.b


class BatchNorm2d:
    def __init__(self, store, name, c, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.gamma = store.param(name + ".gamma", np.ones(c, dtype=dtype))
        self.beta = store.param(name + ".beta", np.zeros(c, dtype=dtype))
        self.running_mean = store.buffer(name + ".running_mean", np.zeros(c, dtype=dtype))
        self.running_var = store.buffer(name + ".running_var", np.ones(c, dtype=dtype))
        self.momentum = momentum
        self.eps = eps
        self.training = True

    def __call__(self, x):
        if x.shape[0] == 0:
            raise ValueError("batchnorm on a batch of size 0")
        if self.training:
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            var = ((x - mu) ** 2).mean(axis=(0, 2, 3), keepdims=True)
            n = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var.data.reshape(-1) * (n / max(n - 1, 1))
            self.running_mean += self.momentum * (mu.data.reshape(-1) - self.running_mean)
            self.running_var += self.momentum * (unbiased - self.running_var)
            xn = (x - mu) / ad.sqrt(var + self.eps)
        else:
            rm = self.running_mean.reshape(1, -1, 1, 1)
            rv = self.running_var.reshape(1, -1, 1, 1)
            xn = (x - Tensor(rm)) * Tensor(1.0 / np.sqrt(rv + self.eps))
        return xn * self.gamma.reshape(1, -1, 1, 1) + self.beta.reshape(1, -1, 1, 1)


class InstanceNorm2d:
    """Per-sample, per-channel spatial normalization with affine parameters.

    Behaves identically in training and evaluation. The training loop runs
    one sample per forward pass, where batch statistics degenerate to these
    spatial statistics anyway; normalizing the same way at inference keeps
    the learned function intact instead of swapping in running averages the
    network never trained against.
    """

    def __init__(self, store, name, c, eps=1e-5, dtype=np.float32):
        self.gamma = store.param(name + ".gamma", np.ones(c, dtype=dtype))
        self.beta = store.param(name + ".beta", np.zeros(c, dtype=dtype))
        self.eps = eps
        self.training = True

    def __call__(self, x):
        if x.shape[0] == 0:
            raise ValueError("normalization on a batch of size 0")
        mu = x.mean(axis=(2, 3), keepdims=True)
        var = ((x - mu) ** 2).mean(axis=(2, 3), keepdims=True)
        xn = (x - mu) / ad.sqrt(var + self.eps)
        return xn * self.gamma.reshape(1, -1, 1, 1) + self.beta.reshape(1, -1, 1, 1)


class BatchNorm1d:
    """Batchnorm over axis 0 of an (N, C) matrix."""

    def __init__(self, store, name, c, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.gamma = store.param(name + ".gamma", np.ones(c, dtype=dtype))
        self.beta = store.param(name + ".beta", np.zeros(c, dtype=dtype))
        self.running_mean = store.buffer(name + ".running_mean", np.zeros(c, dtype=dtype))
        self.running_var = store.buffer(name + ".running_var", np.ones(c, dtype=dtype))
        self.momentum = momentum
        self.eps = eps
        self.training = True

    def __call__(self, x):
        if x.shape[0] == 0:
            raise ValueError("batchnorm on a batch of size 0")
        if self.training:
            mu = x.mean(axis=0, keepdims=True)
            var = ((x - mu) ** 2).mean(axis=0, keepdims=True)
            n = x.shape[0]
            unbiased = var.data.reshape(-1) * (n / max(n - 1, 1))
            self.running_mean += self.momentum * (mu.data.reshape(-1) - self.running_mean)
            self.running_var += self.momentum * (unbiased - self.running_var)
            xn = (x - mu) / ad.sqrt(var + self.eps)
        else:
            xn = (x - Tensor(self.running_mean.reshape(1, -1))) * Tensor(
                1.0 / np.sqrt(self.running_var.reshape(1, -1) + self.eps))
        return xn * self.gamma.reshape(1, -1) + self.beta.reshape(1, -1)


class ConvBNReLU:
    def __init__(self, store, name, c_in, c_out, k=3, stride=1, dilation=1,
                 padding=None, pad_mode="zeros", rng=None, dtype=np.float32):
        if padding is None:
            padding = dilation * (k - 1) // 2
        self.conv = Conv2d(store, name + ".conv", c_in, c_out, k, stride=stride,
                           dilation=dilation, padding=padding, pad_mode=pad_mode,
                           bias=False, rng=rng, dtype=dtype)
        self.bn = InstanceNorm2d(store, name + ".bn", c_out, dtype=dtype)

    def __call__(self, x):
        return ad.relu(self.bn(self.conv(x)))

    def set_training(self, flag):
        self.bn.training = flag


class MLPBlock:
    """Two-layer perceptron: linear -> relu -> linear.

    Hidden width defaults to the output width; scoring heads that reduce to
    a single unit pass a wider hidden layer to avoid dead-ReLU collapse.
    """

    def __init__(self, store, name, d_in, d_out, hidden=None, rng=None, dtype=np.float32):
        hidden = d_out if hidden is None else hidden
        self.fc1 = Linear(store, name + ".fc1", d_in, hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(store, name + ".fc2", hidden, d_out, rng=rng, dtype=dtype)

    def __call__(self, x):
        return self.fc2(ad.relu(self.fc1(x)))
