"""Layer forward/backward kernels, one example at a time.

Everything here is float64 and operates on a single example: batching (and
per-example gradient clipping, which is the whole point) lives in the training
loop.  Each layer is a stateless object; parameters travel as explicit arrays
so trained models stay immutable value objects.

Conventions: dense inputs have shape (features,), spatial inputs
(channels, height, width).  Convolutions are stride 1 with same zero padding;
pooling is mean pooling; normalization is GroupNorm (no batch statistics
anywhere, so single-example inference and per-example gradients stay exact).
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError

GN_EPS = 1e-5


class Dense:
    kind = "dense"

    def __init__(self, in_features: int, out_features: int):
        if in_features <= 0 or out_features <= 0:
            raise ConfigError("dense features must be positive")
        self.in_features = in_features
        self.out_features = out_features

    def out_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise ShapeError(f"dense expects {(self.in_features,)}, got {in_shape}")
        return (self.out_features,)

    def init_params(self, rng):
        scale = np.sqrt(2.0 / self.in_features)
        w = rng.normal(0.0, scale, size=(self.out_features, self.in_features))
        return [w, np.zeros(self.out_features)]

    def forward(self, x, params):
        w, b = params
        return w @ x + b, x

    def backward(self, dout, cache, params):
        w, _ = params
        x = cache
        return w.T @ dout, [np.outer(dout, x), dout.copy()]


class Relu:
    kind = "relu"

    def out_shape(self, in_shape):
        return in_shape

    def init_params(self, rng):
        return []

    def forward(self, x, params):
        return np.maximum(x, 0.0), x

    def backward(self, dout, cache, params):
        return dout * (cache > 0), []


class Flatten:
    kind = "flatten"

    def __init__(self):
        self._in_shape = None

    def out_shape(self, in_shape):
        n = 1
        for d in in_shape:
            n *= d
        return (n,)

    def init_params(self, rng):
        return []

    def forward(self, x, params):
        return x.ravel(), x.shape

    def backward(self, dout, cache, params):
        return dout.reshape(cache), []


class Conv2d:
    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3):
        if kernel_size % 2 != 1:
            raise ConfigError("conv2d kernel size must be odd for same padding")
        if in_channels <= 0 or out_channels <= 0:
            raise ConfigError("conv2d channel counts must be positive")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ShapeError(
                f"conv2d expects ({self.in_channels}, H, W), got {in_shape}"
            )
        return (self.out_channels,) + in_shape[1:]

    def init_params(self, rng):
        k = self.kernel_size
        fan_in = self.in_channels * k * k
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(self.out_channels, self.in_channels, k, k))
        return [w, np.zeros(self.out_channels)]

    def _im2col(self, x):
        c, h, w = x.shape
        k = self.kernel_size
        pad = k // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
        cols = np.empty((c * k * k, h * w))
        row = 0
        for ch in range(c):
            for di in range(k):
                for dj in range(k):
                    cols[row] = xp[ch, di : di + h, dj : dj + w].ravel()
                    row += 1
        return cols

    def forward(self, x, params):
        w, b = params
        _, h, wd = x.shape
        cols = self._im2col(x)
        wmat = w.reshape(self.out_channels, -1)
        out = (wmat @ cols + b[:, None]).reshape(self.out_channels, h, wd)
        return out, (x.shape, cols)

    def backward(self, dout, cache, params):
        w, _ = params
        in_shape, cols = cache
        c, h, wd = in_shape
        k = self.kernel_size
        pad = k // 2
        dmat = dout.reshape(self.out_channels, -1)
        dw = (dmat @ cols.T).reshape(w.shape)
        db = dmat.sum(axis=1)
        dcols = w.reshape(self.out_channels, -1).T @ dmat
        dxp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
        row = 0
        for ch in range(c):
            for di in range(k):
                for dj in range(k):
                    dxp[ch, di : di + h, dj : dj + wd] += dcols[row].reshape(h, wd)
                    row += 1
        return dxp[:, pad : pad + h, pad : pad + wd], [dw, db]


class AvgPool2d:
    kind = "avgpool2d"

    def __init__(self, kernel_size: int = 2):
        if kernel_size <= 0:
            raise ConfigError("avgpool2d kernel size must be positive")
        self.kernel_size = kernel_size

    def out_shape(self, in_shape):
        k = self.kernel_size
        if len(in_shape) != 3 or in_shape[1] % k or in_shape[2] % k:
            raise ShapeError(
                f"avgpool2d({k}) needs (C, H, W) with H, W divisible by {k}; got {in_shape}"
            )
        return (in_shape[0], in_shape[1] // k, in_shape[2] // k)

    def init_params(self, rng):
        return []

    def forward(self, x, params):
        c, h, w = x.shape
        k = self.kernel_size
        out = x.reshape(c, h // k, k, w // k, k).mean(axis=(2, 4))
        return out, x.shape

    def backward(self, dout, cache, params):
        k = self.kernel_size
        dx = np.repeat(np.repeat(dout, k, axis=1), k, axis=2) / (k * k)
        return dx, []


class GroupNorm:
    kind = "groupnorm"

    def __init__(self, groups: int, channels: int):
        if groups <= 0 or channels <= 0 or channels % groups:
            raise ConfigError(
                f"groupnorm needs channels divisible by groups, got {channels}/{groups}"
            )
        self.groups = groups
        self.channels = channels

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.channels:
            raise ShapeError(
                f"groupnorm expects ({self.channels}, H, W), got {in_shape}"
            )
        return in_shape

    def init_params(self, rng):
        return [np.ones(self.channels), np.zeros(self.channels)]

    def forward(self, x, params):
        gamma, beta = params
        c, h, w = x.shape
        g = self.groups
        xg = x.reshape(g, c // g, h, w)
        mu = xg.mean(axis=(1, 2, 3), keepdims=True)
        var = xg.var(axis=(1, 2, 3), keepdims=True)
        xhat = ((xg - mu) / np.sqrt(var + GN_EPS)).reshape(c, h, w)
        out = gamma[:, None, None] * xhat + beta[:, None, None]
        return out, (xhat, var)

    def backward(self, dout, cache, params):
        gamma, _ = params
        xhat, var = cache
        c, h, w = dout.shape
        g = self.groups
        m = (c // g) * h * w

        dgamma = (dout * xhat).sum(axis=(1, 2))
        dbeta = dout.sum(axis=(1, 2))

        dxhat = (dout * gamma[:, None, None]).reshape(g, c // g, h, w)
        xhat_g = xhat.reshape(g, c // g, h, w)
        inv_std = 1.0 / np.sqrt(var + GN_EPS)
        sum_dxhat = dxhat.sum(axis=(1, 2, 3), keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat_g).sum(axis=(1, 2, 3), keepdims=True)
        dx = (inv_std / m) * (m * dxhat - sum_dxhat - xhat_g * sum_dxhat_xhat)
        return dx.reshape(c, h, w), [dgamma, dbeta]


_KINDS = {
    "dense": Dense,
    "relu": Relu,
    "flatten": Flatten,
    "conv2d": Conv2d,
    "avgpool2d": AvgPool2d,
    "groupnorm": GroupNorm,
}


def build_layer(spec: dict):
    """Instantiate a layer from its spec dict, e.g. {"kind": "dense", ...}."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"layer spec must be a dict with a 'kind': {spec!r}")
    kind = spec["kind"]
    if kind not in _KINDS:
        raise ConfigError(f"unknown layer kind '{kind}'")
    kwargs = {k: v for k, v in spec.items() if k != "kind"}
    try:
        return _KINDS[kind](**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad arguments for layer '{kind}': {exc}") from exc
