"""Layers used by the generators and discriminator.

The functional forms (``conv2d``, ``instance_norm``, ...) are graph ops with
hand-written backward rules. The classes at the bottom own parameters and
call them.
"""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Tensor, as_tensor, concat, default_dtype, make_op

LEAKY_SLOPE = 0.2
INIT_STD = 0.02


def _resolve_padding(padding, kh: int, kw: int) -> int:
    if padding == "same":
        if kh != kw or kh % 2 == 0:
            raise ValueError(f"'same' padding needs an odd square kernel, got {kh}x{kw}")
        return (kh - 1) // 2
    if padding == "valid":
        return 0
    return int(padding)


def conv2d(x, weight, bias=None, stride: int = 1, padding="same", name: str = "conv2d") -> Tensor:
    """Cross-correlation of ``x`` (B, C, H, W) with ``weight`` (O, C, kH, kW) and zero padding."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4:
        raise ValueError(f"{name}: expected a 4-d input, got shape {x.shape}")
    B, C, H, W = x.shape
    O, Ci, kh, kw = weight.shape
    if Ci != C:
        raise ValueError(f"{name}: kernel expects {Ci} input channels but input has {C} (shape {x.shape})")
    p = _resolve_padding(padding, kh, kw)
    s = int(stride)
    Ho = (H + 2 * p - kh) // s + 1
    Wo = (W + 2 * p - kw) // s + 1
    if Ho < 1 or Wo < 1:
        raise ValueError(f"{name}: input {x.shape} too small for kernel {kh}x{kw}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, : s * (Ho - 1) + 1 : s, : s * (Wo - 1) + 1 : s]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = weight.data.reshape(O, -1)
    out = (cols @ wmat.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def grad(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(B, Ho, Wo, C, kh, kw)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + s * (Ho - 1) + 1 : s, j : j + s * (Wo - 1) + 1 : s] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = dxp[:, :, p : p + H, p : p + W] if p else dxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_op(out, parents, grad, "conv2d")


def conv_transpose2d(x, weight, bias=None, stride: int = 2, name: str = "conv_transpose2d") -> Tensor:
    """Transposed convolution with kernel size equal to stride (non-overlapping).

    ``weight`` is (O, C, k, k); every output pixel receives exactly one input
    contribution, so spatial dims scale by ``k`` exactly.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    B, C, H, W = x.shape
    O, Ci, k, k2 = weight.shape
    if Ci != C:
        raise ValueError(f"{name}: kernel expects {Ci} input channels but input has {C} (shape {x.shape})")
    if k != k2 or k != stride:
        raise ValueError(f"{name}: only kernel == stride is supported, got kernel {k}x{k2} stride {stride}")
    xm = x.data.transpose(0, 2, 3, 1).reshape(B * H * W, C)
    wm = weight.data.reshape(O, C, k * k).transpose(1, 0, 2).reshape(C, O * k * k)
    out = (xm @ wm).reshape(B, H, W, O, k, k).transpose(0, 3, 1, 4, 2, 5).reshape(B, O, H * k, W * k)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def grad(g):
        g6 = g.reshape(B, O, H, k, W, k).transpose(0, 2, 4, 1, 3, 5).reshape(B * H * W, O * k * k)
        gx = (g6 @ wm.T).reshape(B, H, W, C).transpose(0, 3, 1, 2) if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = (xm.T @ g6).reshape(C, O, k, k).transpose(1, 0, 2, 3)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_op(out, parents, grad, "conv_transpose2d")


def instance_norm(x, scale=None, shift=None, eps: float = 1e-5) -> Tensor:
    """Normalize each (batch, channel) slice to zero mean, unit (biased) variance, then ``scale * x + shift``."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"instance_norm: expected a 4-d input, got shape {x.shape}")
    n = x.shape[2] * x.shape[3]
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    parents = [x]
    out = xhat
    if scale is not None:
        scale, shift = as_tensor(scale), as_tensor(shift)
        out = xhat * scale.data[None, :, None, None] + shift.data[None, :, None, None]
        parents += [scale, shift]

    def grad(g):
        gxhat = g * scale.data[None, :, None, None] if scale is not None else g
        gx = None
        if x.requires_grad:
            gx = inv / n * (n * gxhat - gxhat.sum(axis=(2, 3), keepdims=True)
                            - xhat * (gxhat * xhat).sum(axis=(2, 3), keepdims=True))
        if scale is None:
            return (gx,)
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_op(out, parents, grad, "instance_norm")


def leaky_relu(x, alpha: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    pos = x.data >= 0
    return make_op(np.where(pos, x.data, alpha * x.data), (x,),
                   lambda g: (np.where(pos, g, alpha * g),), "leaky_relu")


def avg_pool2(x) -> Tensor:
    x = as_tensor(x)
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"avg_pool2: spatial dims must be even, got {H}x{W}")
    out = x.data.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def grad(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return make_op(out, (x,), grad, "avg_pool2")


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or at ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return make_op(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def fully_connected(x, weight, bias=None) -> Tensor:
    """``y = x W^T + b`` on inputs flattened per sample; ``weight`` is (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    B = x.shape[0]
    flat = x.data.reshape(B, -1)
    if flat.shape[1] != weight.shape[1]:
        raise ValueError(f"fully_connected: input has {flat.shape[1]} features, weight expects {weight.shape[1]}")
    out = flat @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def grad(g):
        gx = (g @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g.T @ flat if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return make_op(out, parents, grad, "fully_connected")


def concat_channels(tensors: Sequence) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ValueError(f"concat_channels: shape {t.shape} does not share batch/spatial dims with {ref}")
    return concat(tensors, axis=1)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return make_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)
    return make_op(out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),), "softmax")


# parameterized layers


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) resampled until every value lies within two standard deviations."""
    values = rng.standard_normal(shape)
    bad = np.abs(values) > 2.0
    while bad.any():
        values[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(values) > 2.0
    return (values * std).astype(default_dtype())


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    """Parameter container; parameters are discovered in attribute-assignment order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            yield from _walk(value, f"{prefix}{key}")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters().values():
            p.requires_grad = flag
        return self


def _walk(value, name: str) -> Iterator[tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding="same", name: str = "conv"):
        self.weight = parameter(truncated_normal(rng, (out_ch, in_ch, kernel, kernel)))
        self.bias = parameter(np.zeros(out_ch, dtype=default_dtype()))
        self.stride = stride
        self.padding = padding
        self.label = name

    def __call__(self, x) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, name=self.label)


class ConvTranspose2d(Module):
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, kernel: int = 2):
        self.weight = parameter(truncated_normal(rng, (out_ch, in_ch, kernel, kernel)))
        self.bias = parameter(np.zeros(out_ch, dtype=default_dtype()))
        self.kernel = kernel

    def __call__(self, x) -> Tensor:
        return conv_transpose2d(x, self.weight, self.bias, stride=self.kernel)


class InstanceNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        self.scale = parameter(np.ones(channels, dtype=default_dtype()))
        self.shift = parameter(np.zeros(channels, dtype=default_dtype()))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return instance_norm(x, self.scale, self.shift, self.eps)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = parameter(truncated_normal(rng, (out_features, in_features)))
        self.bias = parameter(np.zeros(out_features, dtype=default_dtype()))

    def __call__(self, x) -> Tensor:
        return fully_connected(x, self.weight, self.bias)
