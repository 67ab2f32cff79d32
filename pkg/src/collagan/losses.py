"""Training losses (cycle, SSIM, least-squares adversarial, domain classification) and NMSE/SSIM metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class SsimConfig:
    k1: float = 0.01
    k2: float = 0.03
    L: float = 1.0
    window: str = "gaussian"
    size: int = 11
    sigma: float = 1.5

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.L <= 0:
            raise ValueError("dynamic range L must be positive")
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError(f"window size must be odd, got {self.size}")
        if self.window not in ("gaussian", "uniform"):
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def c1(self) -> float:
        return (self.k1 * self.L) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.L) ** 2

    def weights(self) -> np.ndarray:
        r = self.size // 2
        if self.window == "uniform":
            return np.full(self.size, 1.0 / self.size)
        x = np.arange(-r, r + 1, dtype=np.float64)
        w = np.exp(-(x * x) / (2.0 * self.sigma ** 2))
        return w / w.sum()


def mirror_index(i: int, n: int) -> int:
    """Half-sample symmetric reflection (``d c b a | a b c d | d c b a``), valid for any offset."""
    i %= 2 * n
    return i if i < n else 2 * n - 1 - i


@lru_cache(maxsize=64)
def _filter_matrix(n: int, weights: tuple[float, ...]) -> np.ndarray:
    r = len(weights) // 2
    m = np.zeros((n, n))
    for i in range(n):
        for k, w in enumerate(weights):
            m[i, mirror_index(i + k - r, n)] += w
    return m


def local_mean(x: Tensor, cfg: SsimConfig) -> Tensor:
    """Windowed weighted mean over the last two axes with mirrored borders."""
    w = tuple(cfg.weights().tolist())
    rows = _filter_matrix(x.shape[-2], w)
    cols = _filter_matrix(x.shape[-1], w)
    return ad.linear_map2d(x, rows, cols)


def ssim_map(X, Y, cfg: SsimConfig = SsimConfig()) -> Tensor:
    """Per-pixel SSIM, computed independently for every leading index (batch, channel)."""
    X, Y = as_tensor(X), as_tensor(Y)
    if X.shape != Y.shape:
        raise ValueError(f"ssim_map: shape mismatch {X.shape} vs {Y.shape}")
    mu_x = local_mean(X, cfg)
    mu_y = local_mean(Y, cfg)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    var_x = local_mean(X * X, cfg) - mu_xx
    var_y = local_mean(Y * Y, cfg) - mu_yy
    cov = local_mean(X * Y, cfg) - mu_xy
    num = (2.0 * mu_xy + cfg.c1) * (2.0 * cov + cfg.c2)
    den = (mu_xx + mu_yy + cfg.c1) * (var_x + var_y + cfg.c2)
    return num / den


def ssim_loss_from_map(smap: Tensor) -> Tensor:
    """``-log(mean(1 + ssim) / 2)``, per image for 4-d maps then averaged over the batch."""
    smap = as_tensor(smap)
    axes = tuple(range(1, smap.ndim)) if smap.ndim == 4 else None
    inner = ad.mean(1.0 + smap, axis=axes) * 0.5
    return ad.mean(-ad.log(ad.clamp(inner, lo=LOG_FLOOR)))


def ssim_loss(X, Y, cfg: SsimConfig = SsimConfig()) -> Tensor:
    return ssim_loss_from_map(ssim_map(X, Y, cfg))


def _check_pairs(originals: Sequence, reconstructions: Sequence) -> None:
    if len(originals) != len(reconstructions):
        raise ValueError(f"{len(originals)} originals but {len(reconstructions)} reconstructions")
    if not originals:
        raise ValueError("no image pairs given")


def l1_mean(x, y) -> Tensor:
    return ad.mean(ad.absolute(as_tensor(x) - as_tensor(y)))


def mcc_loss(originals: Sequence, reconstructions: Sequence) -> Tensor:
    """Multiple cycle consistency: sum over domains of per-image mean absolute error."""
    _check_pairs(originals, reconstructions)
    total = l1_mean(originals[0], reconstructions[0])
    for x, r in zip(originals[1:], reconstructions[1:]):
        total = total + l1_mean(x, r)
    return total


def mcc_ssim_loss(originals: Sequence, reconstructions: Sequence, cfg: SsimConfig = SsimConfig()) -> Tensor:
    _check_pairs(originals, reconstructions)
    total = ssim_loss(originals[0], reconstructions[0], cfg)
    for x, r in zip(originals[1:], reconstructions[1:]):
        total = total + ssim_loss(x, r, cfg)
    return total


def lsgan_dsc_loss(d_real, d_fake) -> Tensor:
    d_real, d_fake = as_tensor(d_real), as_tensor(d_fake)
    return ad.mean(ad.square(d_real - 1.0)) + ad.mean(ad.square(d_fake))


def lsgan_gen_loss(d_fake) -> Tensor:
    return ad.mean(ad.square(as_tensor(d_fake) - 1.0))


def clsf_loss(class_probs, target) -> Tensor:
    """Mean cross-entropy ``-log p[target]`` of (B, N) probabilities; ``target`` is an int or (B,) ints."""
    probs = as_tensor(class_probs)
    if probs.ndim == 1:
        probs = ad.reshape(probs, (1, -1))
    B, N = probs.shape
    target = np.broadcast_to(np.asarray(target, dtype=np.int64), (B,))
    if np.any(target < 0) or np.any(target >= N):
        raise ValueError(f"class target {target.tolist()} out of range for {N} classes")
    sums = probs.data.sum(axis=1)
    # non-finite rows pass through so the caller's divergence check reports them
    if not np.allclose(sums[np.isfinite(sums)], 1.0, atol=1e-5):
        raise ValueError("class probabilities do not sum to 1")
    picked = ad.getitem(probs, (np.arange(B), target))
    return ad.mean(-ad.log(ad.clamp(picked, lo=LOG_FLOOR)))


def _array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def nmse(x, ref) -> float:
    x, ref = _array(x), _array(ref)
    if x.shape != ref.shape:
        raise ValueError(f"nmse: shape mismatch {x.shape} vs {ref.shape}")
    energy = float(np.sum(ref * ref))
    if energy == 0.0:
        raise ValueError("nmse: reference image has zero energy")
    return float(np.sum((x - ref) ** 2)) / energy


def ssim(x, y, cfg: SsimConfig = SsimConfig()) -> float:
    """Mean SSIM between two images (any leading dims), evaluated in float64."""
    return float(ssim_map(Tensor(_array(x), dtype=np.float64), Tensor(_array(y), dtype=np.float64), cfg).data.mean())


@dataclass(frozen=True)
class LossWeights:
    mcc: float = 10.0
    mcc_ssim: float = 1.0
    gan: float = 1.0
    clsf: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be nonnegative")


@dataclass(frozen=True)
class LossReport:
    mcc: float
    mcc_ssim: float
    gan_gen: float
    gan_dsc: float
    clsf_real: float
    clsf_fake: float
    total_gen: float
    total_dsc: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


PART_NAMES = ("mcc", "mcc_ssim", "gan_gen", "gan_dsc", "clsf_real", "clsf_fake")


def total_generator_loss(parts: dict, weights: LossWeights):
    """Weighted generator objective; works on floats or tensors alike."""
    return (weights.mcc * parts["mcc"] + weights.mcc_ssim * parts["mcc_ssim"]
            + weights.gan * parts["gan_gen"] + weights.clsf * parts["clsf_fake"])


def aggregate(parts: dict, weights: LossWeights = LossWeights()) -> LossReport:
    values = {}
    for name in PART_NAMES:
        v = parts.get(name, 0.0)
        v = v.item() if isinstance(v, Tensor) else float(v)
        if not math.isfinite(v):
            raise FloatingPointError(f"loss term {name} is not finite ({v})")
        values[name] = v
    return LossReport(**values, total_gen=total_generator_loss(values, weights),
                      total_dsc=values["gan_dsc"] + values["clsf_real"])
