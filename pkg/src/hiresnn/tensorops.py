"""Dense kernels shared by ANN and SNN execution.

Tensors are plain ``numpy.ndarray`` objects in channels-last, row-major layout.
Every kernel accepts a single sample (``H x W x C`` or ``D``) or a batch with a
leading axis (``N x H x W x C`` or ``N x D``); the batch path is a vectorized
map of the per-sample definition.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError

DTYPE = np.float64


@dataclass(frozen=True)
class ConvSpec:
    kernel_size: int
    in_channels: int
    out_channels: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.kernel_size, self.in_channels, self.out_channels, self.stride) < 1:
            raise ConfigurationError(f"non-positive conv geometry: {self}")
        if self.padding < 0:
            raise ConfigurationError(f"negative padding: {self}")

    def output_size(self, h, w):
        ho = (h + 2 * self.padding - self.kernel_size) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel_size) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ConfigurationError(
                f"{h}x{w} input too small for kernel {self.kernel_size} "
                f"(padding {self.padding}, stride {self.stride})")
        return ho, wo

    @property
    def weight_shape(self):
        k = self.kernel_size
        return (k, k, self.in_channels, self.out_channels)

    def flops(self, h_in, w_in):
        """MAC count of one forward pass: k^2 * Ho * Wo * Co * Ci."""
        ho, wo = self.output_size(h_in, w_in)
        return self.kernel_size ** 2 * ho * wo * self.out_channels * self.in_channels


def _batched(x, sample_ndim):
    x = np.asarray(x)
    if x.ndim == sample_ndim:
        return x[None], True
    if x.ndim == sample_ndim + 1:
        return x, False
    raise ConfigurationError(f"expected {sample_ndim}-d sample or batch, got shape {x.shape}")


def _check_conv(x, W, spec):
    if W.shape != spec.weight_shape:
        raise ConfigurationError(f"kernel shape {W.shape} != {spec.weight_shape}")
    if x.shape[-1] != spec.in_channels:
        raise ConfigurationError(f"input has {x.shape[-1]} channels, spec wants {spec.in_channels}")


def _windows(xb, spec):
    p, s, k = spec.padding, spec.stride, spec.kernel_size
    if p:
        xb = np.pad(xb, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xb, (k, k), axis=(1, 2))  # N, H', W', C, k, k
    return win[:, ::s, ::s]


def conv2d_forward(x, W, spec):
    """Zero-padded cross-correlation.

    ``y[h, w, o] = sum_{i, j, c} xpad[h*s + i, w*s + j, c] * W[i, j, c, o]``
    """
    xb, single = _batched(x, 3)
    _check_conv(xb, W, spec)
    spec.output_size(xb.shape[1], xb.shape[2])
    win = _windows(xb, spec)
    y = np.tensordot(win, W, axes=([3, 4, 5], [2, 0, 1]))
    return y[0] if single else y


def conv2d_backward(grad_y, x, W, spec):
    """Adjoints of :func:`conv2d_forward`; returns ``(grad_x, grad_W)``."""
    xb, single = _batched(x, 3)
    gb, _ = _batched(grad_y, 3)
    _check_conv(xb, W, spec)
    ho, wo = spec.output_size(xb.shape[1], xb.shape[2])
    if gb.shape != (xb.shape[0], ho, wo, spec.out_channels):
        raise ConfigurationError(f"grad_y shape {gb.shape} does not match conv output")
    win = _windows(xb, spec)
    gw = np.tensordot(win, gb, axes=([0, 1, 2], [0, 1, 2]))  # C, k, k, Co
    grad_W = gw.transpose(1, 2, 0, 3)

    k, s, p = spec.kernel_size, spec.stride, spec.padding
    n, h, w, c = xb.shape
    gxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=np.result_type(gb, W))
    for i in range(k):
        for j in range(k):
            gxp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += gb @ W[i, j].T
    grad_x = gxp[:, p:p + h, p:p + w, :]
    if single:
        grad_x = grad_x[0]
    return grad_x, grad_W


def linear_forward(x, W):
    """``y = W^T x``; batched inputs with trailing spatial axes are flattened."""
    x = np.asarray(x)
    if x.ndim == 1:
        xf = x
    else:
        xf = x.reshape(x.shape[0], -1)
    if xf.shape[-1] != W.shape[0]:
        raise ConfigurationError(f"linear input size {xf.shape[-1]} != weight rows {W.shape[0]}")
    return xf @ W


def linear_backward(grad_y, x, W):
    x = np.asarray(x)
    grad_y = np.asarray(grad_y)
    if grad_y.shape[-1] != W.shape[1]:
        raise ConfigurationError(f"grad_y size {grad_y.shape[-1]} != weight columns {W.shape[1]}")
    if x.ndim == 1:
        return W @ grad_y, np.outer(x, grad_y)
    xf = x.reshape(x.shape[0], -1)
    if grad_y.shape[0] != xf.shape[0]:
        raise ConfigurationError("batch size mismatch between grad_y and x")
    grad_x = (grad_y @ W.T).reshape(x.shape)
    return grad_x, xf.T @ grad_y


def linear_flops(d_in, d_out):
    return d_in * d_out


def avgpool_forward(x, window):
    """Non-overlapping mean pooling over ``window x window`` tiles."""
    xb, single = _batched(x, 3)
    n, h, w, c = xb.shape
    if window < 1 or h % window or w % window:
        raise ConfigurationError(f"spatial size {h}x{w} not divisible by window {window}")
    y = xb.reshape(n, h // window, window, w // window, window, c).mean(axis=(2, 4))
    return y[0] if single else y


def avgpool_backward(grad_y, window):
    gb, single = _batched(grad_y, 3)
    if window < 1:
        raise ConfigurationError(f"bad pooling window {window}")
    g = np.repeat(np.repeat(gb, window, axis=1), window, axis=2) / window ** 2
    return g[0] if single else g


def dropout_mask(shape, rate, seed=None):
    """Inverted-dropout mask: Bernoulli(1 - rate) scaled by 1 / (1 - rate).

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if not 0 <= rate < 1:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0:
        return np.ones(shape, dtype=DTYPE)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = rng.random(shape) >= rate
    return keep.astype(DTYPE) / (1.0 - rate)
