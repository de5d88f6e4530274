"""Network building blocks with explicit forward and backward passes.

Every layer works on a single sample: feature maps are [channels, height,
width], fully connected activations are flat vectors.  forward returns the
output plus an opaque cache; backward consumes that cache and returns the
input gradient (and parameter gradients for parametric layers).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Conv2d:
    """2-D convolution (cross-correlation) via an im2col matrix product."""

    kind = "conv"

    def __init__(self, name, in_channels, out_channels, kernel, stride, padding,
                 dtype=np.float32, rng=None, weight_std=None):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        if weight_std is None:
            weight_std = np.sqrt(2.0 / fan_in)
        rng = rng if rng is not None else np.random.default_rng()
        self.W = rng.normal(0.0, weight_std, (out_channels, in_channels, kernel, kernel)).astype(dtype)
        self.b = np.zeros(out_channels, dtype=dtype)

    @property
    def params(self):
        return {f"{self.name}.W": self.W, f"{self.name}.b": self.b}

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ValueError(
                f"layer {self.name}: expects {self.in_channels} input channels, chain gives {c}"
            )
        oh = (h + 2 * self.padding - self.kernel) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ValueError(f"layer {self.name}: input {in_shape} too small for kernel/stride")
        return (self.out_channels, oh, ow)

    def forward(self, x, train=False, rng=None):
        k, s, p = self.kernel, self.stride, self.padding
        if p:
            x_pad = np.pad(x, ((0, 0), (p, p), (p, p)))
        else:
            x_pad = x
        win = sliding_window_view(x_pad, (k, k), axis=(1, 2))[:, ::s, ::s]   # [C, OH, OW, k, k]
        oh, ow = win.shape[1], win.shape[2]
        cols = win.transpose(0, 3, 4, 1, 2).reshape(self.in_channels * k * k, oh * ow)
        cols = np.ascontiguousarray(cols)
        w_mat = self.W.reshape(self.out_channels, -1)
        y = (w_mat @ cols + self.b[:, None]).reshape(self.out_channels, oh, ow)
        return y, (cols, x.shape, (oh, ow))

    def backward(self, dy, cache):
        cols, x_shape, (oh, ow) = cache
        k, s, p = self.kernel, self.stride, self.padding
        dy_mat = dy.reshape(self.out_channels, -1)
        dW = (dy_mat @ cols.T).reshape(self.W.shape)
        db = dy_mat.sum(axis=1)
        dcols = self.W.reshape(self.out_channels, -1).T @ dy_mat
        dcols = dcols.reshape(self.in_channels, k, k, oh, ow)

        c, h, w = x_shape
        dx_pad = np.zeros((c, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for kh in range(k):
            for kw in range(k):
                dx_pad[:, kh : kh + s * oh : s, kw : kw + s * ow : s] += dcols[:, kh, kw]
        dx = dx_pad[:, p : p + h, p : p + w] if p else dx_pad
        return dx, {f"{self.name}.W": dW, f"{self.name}.b": db}


class MaxPool2d:
    """Overlapping max pooling; the backward pass routes each output gradient
    to the single argmax input position (first maximum on ties)."""

    kind = "maxpool"

    def __init__(self, name, kernel=3, stride=2):
        self.name = name
        self.kernel = kernel
        self.stride = stride

    @property
    def params(self):
        return {}

    def output_shape(self, in_shape):
        c, h, w = in_shape
        oh = (h - self.kernel) // self.stride + 1
        ow = (w - self.kernel) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ValueError(f"layer {self.name}: input {in_shape} too small to pool")
        return (c, oh, ow)

    def forward(self, x, train=False, rng=None):
        k, s = self.kernel, self.stride
        win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
        c, oh, ow = win.shape[:3]
        flat = win.reshape(c, oh, ow, k * k)
        idx = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape, (oh, ow))

    def backward(self, dy, cache):
        idx, x_shape, (oh, ow) = cache
        k, s = self.kernel, self.stride
        c, h, w = x_shape
        rows = (np.arange(oh) * s)[None, :, None] + idx // k
        cols = (np.arange(ow) * s)[None, None, :] + idx % k
        flat = rows * w + cols
        dx = np.zeros((c, h * w), dtype=dy.dtype)
        chan = np.arange(c)[:, None, None]
        np.add.at(dx, (chan, flat), dy)
        return dx.reshape(x_shape), {}


def _box_sum_channels(x, radius):
    """Sum over a clamped window of +-radius positions along the channel axis."""
    cs = np.cumsum(x, axis=0)
    c = x.shape[0]
    hi = np.minimum(np.arange(c) + radius, c - 1)
    lo = np.arange(c) - radius - 1
    out = cs[hi].copy()
    valid = lo >= 0
    out[valid] -= cs[lo[valid]]
    return out


class ChannelResponseNorm:
    """Across-channel response normalization:
    y_c = x_c / (k + alpha * sum_{|j-c| <= n/2} x_j^2)^beta."""

    kind = "response_norm"

    def __init__(self, name, k=2.0, n=5, alpha=1e-4, beta=0.75):
        self.name = name
        self.k = k
        self.n = n
        self.alpha = alpha
        self.beta = beta

    @property
    def params(self):
        return {}

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, rng=None):
        ssum = _box_sum_channels(x * x, self.n // 2)
        scale = (self.k + self.alpha * ssum).astype(x.dtype)
        y = x * scale ** (-self.beta)
        return y, (x, scale)

    def backward(self, dy, cache):
        x, scale = cache
        pow_term = scale ** (-self.beta)
        inner = _box_sum_channels(dy * x * scale ** (-self.beta - 1.0), self.n // 2)
        dx = dy * pow_term - 2.0 * self.alpha * self.beta * x * inner
        return dx.astype(dy.dtype), {}


class ReLU:
    kind = "relu"

    def __init__(self, name):
        self.name = name

    @property
    def params(self):
        return {}

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, rng=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache):
        return dy * cache, {}


class Dropout:
    """Inverted dropout: retained units are scaled by 1/(1-rate) at train
    time, evaluation is the identity."""

    kind = "dropout"

    def __init__(self, name, rate=0.5):
        self.name = name
        self.rate = rate

    @property
    def params(self):
        return {}

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, rng=None):
        if not train or self.rate <= 0.0:
            return x, None
        if rng is None:
            raise ValueError(f"layer {self.name}: train-mode dropout needs an rng")
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) < keep).astype(x.dtype) / np.asarray(keep, dtype=x.dtype)
        return x * mask, mask

    def backward(self, dy, cache):
        if cache is None:
            return dy, {}
        return dy * cache, {}


class Linear:
    """Fully connected layer; flattens any feature-map input."""

    kind = "fc"

    def __init__(self, name, in_features, out_features, dtype=np.float32, rng=None, weight_std=None):
        self.name = name
        self.in_features = in_features
        self.out_features = out_features
        if weight_std is None:
            weight_std = np.sqrt(2.0 / in_features)
        rng = rng if rng is not None else np.random.default_rng()
        self.W = rng.normal(0.0, weight_std, (out_features, in_features)).astype(dtype)
        self.b = np.zeros(out_features, dtype=dtype)

    @property
    def params(self):
        return {f"{self.name}.W": self.W, f"{self.name}.b": self.b}

    def output_shape(self, in_shape):
        flat = int(np.prod(in_shape))
        if flat != self.in_features:
            raise ValueError(
                f"layer {self.name}: expects {self.in_features} inputs, chain gives {flat}"
            )
        return (self.out_features,)

    def forward(self, x, train=False, rng=None):
        flat = x.reshape(-1)
        y = self.W @ flat + self.b
        return y, (flat, x.shape)

    def backward(self, dy, cache):
        flat, x_shape = cache
        dW = np.outer(dy, flat)
        db = dy.copy()
        dx = (self.W.T @ dy).reshape(x_shape)
        return dx, {f"{self.name}.W": dW, f"{self.name}.b": db}


class Softmax:
    """Shift-invariant softmax over the class scores.

    The backward pass expects the gradient already taken with respect to the
    logits (cross-entropy supplies probs - onehot), so it passes through.
    """

    kind = "softmax"

    def __init__(self, name):
        self.name = name

    @property
    def params(self):
        return {}

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, rng=None):
        z = x - x.max()
        e = np.exp(z)
        return e / e.sum(), None

    def backward(self, dlogits, cache):
        return dlogits, {}
