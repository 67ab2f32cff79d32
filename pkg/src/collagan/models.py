"""Generators (plain U-net, inception-unit U-net, multi-branch U-net) and the two-head discriminator.

Widths follow the doubling schedules of the full-size networks, scaled down by
``base_width`` and ``depth`` so they train on a CPU.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor

GENERATOR_ARCHS = ("plain_unet", "inception_unet", "multi_branch_unet")


@dataclass(frozen=True)
class GeneratorSpec:
    arch: str = "plain_unet"
    n_domains: int = 4
    in_channels: int = 1
    base_width: int = 8
    depth: int = 3
    residual_blocks: int = 2

    def __post_init__(self):
        if self.arch not in GENERATOR_ARCHS:
            raise ValueError(f"unknown generator arch {self.arch!r}; choose from {GENERATOR_ARCHS}")
        if self.depth < 1:
            raise ValueError("generator depth must be >= 1")
        if self.base_width < 2:
            raise ValueError("generator base_width must be >= 2")
        if self.n_domains < 2:
            raise ValueError("need at least 2 domains")

    @property
    def input_channels(self) -> int:
        return self.n_domains * self.in_channels + self.n_domains

    def width(self, level: int) -> int:
        return self.base_width * 2 ** level

    def check_size(self, height: int, width: int) -> None:
        step = 2 ** self.depth
        if height % step or width % step:
            raise ValueError(f"image size {height}x{width} not divisible by 2**depth = {step}")


@dataclass(frozen=True)
class DiscriminatorSpec:
    n_domains: int = 4
    in_channels: int = 1
    image_size: int = 32
    base_width: int = 16
    n_downsamples: int = 4
    multi_scale: bool = False
    dropout_rate: float = 0.25

    def __post_init__(self):
        if self.n_downsamples < 1:
            raise ValueError("discriminator needs n_downsamples >= 1")
        if self.multi_scale and self.n_downsamples < 3:
            raise ValueError("the multi-scale trunk downsamples by 4 before its shared stage; need n_downsamples >= 3")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.image_size % 2 ** self.n_downsamples:
            raise ValueError(f"image size {self.image_size} not divisible by 2**{self.n_downsamples}")


class ConvNormAct(nn.Module):
    """3x3 conv, instance norm, leaky ReLU."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        self.conv = nn.Conv2d(in_ch, out_ch, 3, rng)
        self.norm = nn.InstanceNorm(out_ch)

    def __call__(self, x: Tensor) -> Tensor:
        return nn.leaky_relu(self.norm(self.conv(x)))


class InceptionConvNormAct(nn.Module):
    """Parallel 1x1 and 3x3 convs, concatenated, then instance norm and leaky ReLU."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        half = out_ch // 2
        self.pointwise = nn.Conv2d(in_ch, half, 1, rng, name="conv1x1")
        self.spatial = nn.Conv2d(in_ch, out_ch - half, 3, rng, name="conv3x3")
        self.norm = nn.InstanceNorm(out_ch)
        self.out_channels = out_ch

    def __call__(self, x: Tensor) -> Tensor:
        h = nn.concat_channels([self.pointwise(x), self.spatial(x)])
        return nn.leaky_relu(self.norm(h))


class UnitPair(nn.Module):
    def __init__(self, unit, in_ch: int, out_ch: int, rng: np.random.Generator):
        self.first = unit(in_ch, out_ch, rng)
        self.second = unit(out_ch, out_ch, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.second(self.first(x))


class ResidualBlock(nn.Module):
    def __init__(self, ch: int, rng: np.random.Generator):
        self.conv1 = nn.Conv2d(ch, ch, 3, rng)
        self.norm1 = nn.InstanceNorm(ch)
        self.conv2 = nn.Conv2d(ch, ch, 3, rng)
        self.norm2 = nn.InstanceNorm(ch)

    def __call__(self, x: Tensor) -> Tensor:
        h = nn.leaky_relu(self.norm1(self.conv1(x)))
        return x + self.norm2(self.conv2(h))


class Generator(nn.Module):
    """Base class: validates the assembled input and counts invocations."""

    spec: GeneratorSpec

    def __call__(self, x) -> Tensor:
        x = ad.as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.spec.input_channels:
            raise ValueError(f"generator expects (B, {self.spec.input_channels}, H, W) input, got {x.shape}")
        self.spec.check_size(x.shape[2], x.shape[3])
        self.calls += 1
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class UNetGenerator(Generator):
    """Encoder/decoder with skip concatenation; ``unit`` picks plain or inception blocks."""

    def __init__(self, spec: GeneratorSpec, rng: np.random.Generator):
        self.spec = spec
        self.calls = 0
        unit = InceptionConvNormAct if spec.arch == "inception_unet" else ConvNormAct
        self.encoder = [UnitPair(unit, spec.input_channels if l == 0 else spec.width(l - 1), spec.width(l), rng)
                        for l in range(spec.depth + 1)]
        self.up = [nn.ConvTranspose2d(spec.width(l + 1), spec.width(l), rng) for l in range(spec.depth)]
        self.decoder = [UnitPair(unit, 2 * spec.width(l), spec.width(l), rng) for l in range(spec.depth)]
        self.head = nn.Conv2d(spec.width(0), spec.in_channels, 1, rng, name="output_projection")

    def forward(self, x: Tensor) -> Tensor:
        skips = []
        h = x
        for level in range(self.spec.depth):
            h = self.encoder[level](h)
            skips.append(h)
            h = nn.avg_pool2(h)
        h = self.encoder[self.spec.depth](h)
        for level in reversed(range(self.spec.depth)):
            h = self.decoder[level](nn.concat_channels([skips[level], self.up[level](h)]))
        return self.head(h)


class MultiBranchGenerator(Generator):
    """One encoder per input domain; features meet at the bottleneck.

    Each branch sees its own domain image plus the mask channels. The decoder
    concatenates every branch's skip features at each level and runs residual
    blocks at the bottleneck.
    """

    def __init__(self, spec: GeneratorSpec, rng: np.random.Generator):
        self.spec = spec
        self.calls = 0
        N, depth = spec.n_domains, spec.depth
        branch_in = spec.in_channels + N
        self.branches = [
            _Encoder([UnitPair(ConvNormAct, branch_in if l == 0 else spec.width(l - 1), spec.width(l), rng)
                      for l in range(depth)])
            for _ in range(N)
        ]
        self.bottleneck = UnitPair(ConvNormAct, N * spec.width(depth - 1), spec.width(depth), rng)
        self.residual = [ResidualBlock(spec.width(depth), rng) for _ in range(spec.residual_blocks)]
        self.up = [nn.ConvTranspose2d(spec.width(l + 1), spec.width(l), rng) for l in range(depth)]
        self.decoder = [UnitPair(ConvNormAct, (N + 1) * spec.width(l), spec.width(l), rng) for l in range(depth)]
        self.head = nn.Conv2d(spec.width(0), spec.in_channels, 1, rng, name="output_projection")

    def forward(self, x: Tensor) -> Tensor:
        spec = self.spec
        C, N = spec.in_channels, spec.n_domains
        mask = x[:, N * C:]
        skips_per_branch, bottoms = [], []
        for d, branch in enumerate(self.branches):
            skips, bottom = branch(nn.concat_channels([x[:, d * C:(d + 1) * C], mask]))
            skips_per_branch.append(skips)
            bottoms.append(bottom)
        h = self.bottleneck(nn.concat_channels(bottoms))
        for block in self.residual:
            h = block(h)
        for level in reversed(range(spec.depth)):
            level_skips = [skips[level] for skips in skips_per_branch]
            h = self.decoder[level](nn.concat_channels(level_skips + [self.up[level](h)]))
        return self.head(h)


class _Encoder(nn.Module):
    def __init__(self, levels: list):
        self.levels = levels

    def __call__(self, x: Tensor) -> tuple[list[Tensor], Tensor]:
        skips = []
        h = x
        for level in self.levels:
            h = level(h)
            skips.append(h)
            h = nn.avg_pool2(h)
        return skips, h


def build_generator(spec: GeneratorSpec, seed: int = 0) -> Generator:
    rng = np.random.default_rng(seed)
    if spec.arch == "multi_branch_unet":
        return MultiBranchGenerator(spec, rng)
    return UNetGenerator(spec, rng)


def generator_forward(G: Generator, assembled_input) -> Tensor:
    return G(assembled_input)


class _ConvAct(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, rng: np.random.Generator):
        padding = "same" if stride == 1 else (kernel - stride) // 2
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, rng, stride=stride, padding=padding)

    def __call__(self, x: Tensor) -> Tensor:
        return nn.leaky_relu(self.conv(x))


class Discriminator(nn.Module):
    """Shared conv trunk with a patch real/fake head and an N-way domain classifier head."""

    def __init__(self, spec: DiscriminatorSpec, rng: np.random.Generator):
        self.spec = spec
        self.calls = 0
        b = spec.base_width
        if spec.multi_scale:
            q, h = max(1, b // 4), max(1, b // 2)
            self.branches = [
                [_ConvAct(spec.in_channels, q, 3, 1, rng), _ConvAct(q, q, 3, 1, rng), _ConvAct(q, q, 3, 1, rng),
                 _ConvAct(q, q, 3, 1, rng), _ConvAct(q, b, 4, 4, rng)],
                [_ConvAct(spec.in_channels, q, 3, 1, rng), _ConvAct(q, h, 4, 2, rng), _ConvAct(h, h, 3, 1, rng),
                 _ConvAct(h, b, 4, 2, rng), _ConvAct(b, b, 3, 1, rng)],
                [_ConvAct(spec.in_channels, b, 4, 4, rng), _ConvAct(b, b, 3, 1, rng), _ConvAct(b, b, 3, 1, rng),
                 _ConvAct(b, b, 3, 1, rng), _ConvAct(b, b, 3, 1, rng)],
            ]
            self.branch_widths = [b, b, b]
            widths = [3 * b] + [b * 2 ** (i + 1) for i in range(spec.n_downsamples - 2)]
        else:
            self.branches = []
            self.branch_widths = []
            widths = [spec.in_channels] + [b * 2 ** i for i in range(spec.n_downsamples)]
        self.trunk = [_ConvAct(widths[i], widths[i + 1], 4, 2, rng) for i in range(len(widths) - 1)]
        self.feature_channels = widths[-1]
        side = spec.image_size // 2 ** spec.n_downsamples
        self.patch_head = nn.Conv2d(widths[-1], 1, 3, rng, name="patch_head")
        self.class_head = nn.Linear(widths[-1] * side * side, spec.n_domains, rng)

    def features(self, x: Tensor, training: bool, rng: np.random.Generator | None) -> Tensor:
        h = x
        if self.branches:
            outs = []
            for branch in self.branches:
                hb = x
                for layer in branch:
                    hb = layer(hb)
                outs.append(hb)
            h = nn.dropout(nn.concat_channels(outs), self.spec.dropout_rate, training, rng)
        for stage in self.trunk:
            h = nn.dropout(stage(h), self.spec.dropout_rate, training, rng)
        return h

    def __call__(self, image, training: bool = False, rng: np.random.Generator | None = None):
        image = ad.as_tensor(image)
        s = self.spec
        if image.ndim != 4 or image.shape[1:] != (s.in_channels, s.image_size, s.image_size):
            raise ValueError(f"discriminator expects (B, {s.in_channels}, {s.image_size}, {s.image_size}), "
                             f"got {image.shape}")
        self.calls += 1
        h = self.features(image, training, rng)
        patch = nn.sigmoid(self.patch_head(h))
        probs = nn.softmax(self.class_head(h), axis=1)
        return patch, probs


def build_discriminator(spec: DiscriminatorSpec, seed: int = 0) -> Discriminator:
    return Discriminator(spec, np.random.default_rng(seed))


def discriminator_forward(D: Discriminator, image, training: bool = False, rng=None):
    return D(image, training=training, rng=rng)
