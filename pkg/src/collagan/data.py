"""Multi-domain samples: mask vectors, generator input assembly, input dropout,
a synthetic dataset with known ground truth, colour conversion and folder I/O."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .netpbm import extension_for, read_image, write_image


@dataclass
class DomainSample:
    subject_id: str
    images: np.ndarray  # (N, C, H, W); unavailable slots hold zeros
    available: np.ndarray = None  # (N,) bool

    def __post_init__(self):
        self.images = np.asarray(self.images)
        if self.images.ndim != 4:
            raise ValueError(f"sample images must be (N, C, H, W), got {self.images.shape}")
        if self.available is None:
            self.available = np.ones(self.images.shape[0], dtype=bool)
        self.available = np.asarray(self.available, dtype=bool)

    @property
    def n_domains(self) -> int:
        return self.images.shape[0]

    @property
    def complete(self) -> bool:
        return bool(self.available.all())


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]


def make_mask(target: int, n_domains: int, height: int, width: int) -> np.ndarray:
    """One-hot (N, H, W) map: channel ``target`` is all ones."""
    if not 0 <= target < n_domains:
        raise ValueError(f"target domain {target} out of range for {n_domains} domains")
    mask = np.zeros((n_domains, height, width))
    mask[target] = 1.0
    return mask


def assemble_slots(slots: Sequence, live: np.ndarray, target: int) -> Tensor:
    """Channel-concatenate N domain slots plus the target mask into a generator input.

    ``slots[d]`` is a (B, C, H, W) array or tensor (or ``None``). ``live`` is a
    (B, N) boolean array; a slot is zero-filled wherever it is not live and
    always for the target domain, whose contents are never read.
    """
    N = len(slots)
    live = np.asarray(live, dtype=bool)
    ref = next((s for d, s in enumerate(slots) if s is not None and d != target), None)
    if ref is None:
        raise ValueError("no information to impute from: every complement slot is empty")
    B, C, H, W = ref.shape
    if live.shape != (B, N):
        raise ValueError(f"live flags must have shape ({B}, {N}), got {live.shape}")
    dtype = ad.default_dtype()
    parts = []
    for d, slot in enumerate(slots):
        keep = live[:, d] & (d != target)
        if slot is None or not keep.any():
            parts.append(Tensor(np.zeros((B, C, H, W), dtype=dtype)))
        elif isinstance(slot, Tensor):
            parts.append(slot if keep.all() else ad.where(keep[:, None, None, None], slot, 0.0))
        else:
            parts.append(Tensor(np.where(keep[:, None, None, None], slot, 0.0)))
    mask = np.broadcast_to(make_mask(target, N, H, W), (B, N, H, W))
    parts.append(Tensor(np.ascontiguousarray(mask)))
    return ad.concat(parts, axis=1)


def live_flags(sample: DomainSample, target: int, null_set: Iterable[int] = ()) -> np.ndarray:
    null_set = set(null_set)
    N = sample.n_domains
    if not 0 <= target < N:
        raise ValueError(f"target domain {target} out of range for {N} domains")
    if any(not 0 <= d < N for d in null_set):
        raise ValueError(f"null set {sorted(null_set)} has out-of-range domains")
    live = np.array([d != target and d not in null_set and bool(sample.available[d]) for d in range(N)])
    if not live.any():
        raise ValueError("no information to impute from: all complement domains are nulled or unavailable")
    return live


def assemble_input(sample: DomainSample, target: int, null_set: Iterable[int] = ()) -> Tensor:
    """Generator input (1, N*C + N, H, W) for imputing ``target`` from ``sample``."""
    live = live_flags(sample, target, null_set)
    slots = [sample.images[d][None] if live[d] else None for d in range(sample.n_domains)]
    return assemble_slots(slots, live[None], target)


def input_dropout_sample(rng: np.random.Generator, n_domains: int, target: int, rate: float) -> frozenset[int]:
    """Null each complement domain with probability ``rate``; redraw if nothing would survive."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"input dropout rate must lie in [0, 1), got {rate}")
    complement = [d for d in range(n_domains) if d != target]
    if rate == 0.0:
        return frozenset()
    while True:
        drop = rng.random(len(complement)) < rate
        if not drop.all():
            return frozenset(d for d, flag in zip(complement, drop) if flag)


# colour


_KR, _KG, _KB = 0.299, 0.587, 0.114


def _channels_first(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim < 3 or image.shape[-3] != 3:
        raise ValueError(f"expected a 3-channel (..., 3, H, W) image, got shape {image.shape}")
    return image


def rgb_to_ycbcr(image: np.ndarray) -> np.ndarray:
    """Full-range BT.601 on [0, 1] data; chroma offset to 0.5."""
    image = _channels_first(image)
    r, g, b = image[..., 0, :, :], image[..., 1, :, :], image[..., 2, :, :]
    y = _KR * r + _KG * g + _KB * b
    cb = 0.5 + (b - y) / (2.0 * (1.0 - _KB))
    cr = 0.5 + (r - y) / (2.0 * (1.0 - _KR))
    return np.stack([y, cb, cr], axis=-3)


def ycbcr_to_rgb(image: np.ndarray) -> np.ndarray:
    image = _channels_first(image)
    y, cb, cr = image[..., 0, :, :], image[..., 1, :, :] - 0.5, image[..., 2, :, :] - 0.5
    r = y + 2.0 * (1.0 - _KR) * cr
    b = y + 2.0 * (1.0 - _KB) * cb
    g = (y - _KR * r - _KB * b) / _KG
    return np.stack([r, g, b], axis=-3)


# synthetic data


def box_blur3(image: np.ndarray) -> np.ndarray:
    """3x3 mean filter over the last two axes with mirrored (edge-repeating) borders."""
    pad = [(0, 0)] * (image.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(image, pad, mode="symmetric")
    H, W = image.shape[-2:]
    out = np.zeros_like(image)
    for i in range(3):
        for j in range(3):
            out += p[..., i:i + H, j:j + W]
    return out / 9.0


def illumination_ramp(width: int) -> np.ndarray:
    """Left-to-right gain rising linearly from 0 to 1."""
    return np.arange(width) / max(width - 1, 1)


TRANSFORMS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda x: x.copy(),
    "inversion": lambda x: 1.0 - x,
    "gamma": lambda x: x ** 2.2,
    "illumination": lambda x: x * illumination_ramp(x.shape[-1]),
    "blur": box_blur3,
}


@dataclass
class TransformRegistry:
    names: tuple[str, ...]
    bases: dict[str, np.ndarray] = field(default_factory=dict)

    def apply(self, domain: int, base: np.ndarray) -> np.ndarray:
        return TRANSFORMS[self.names[domain]](base)

    def ground_truth(self, subject_id: str, domain: int) -> np.ndarray:
        return self.apply(domain, self.bases[subject_id])


BASE_WARP = 0.25


def smooth_base(rng: np.random.Generator, height: int, width: int, n_waves: int = 4) -> np.ndarray:
    """Sum of random low-frequency sinusoids, min-max scaled, warped into [0.1, 0.9].

    The fourth-root warp pushes most pixels towards the bright end, so a
    picture and its inversion or gamma curve have clearly different histograms.
    """
    yy, xx = np.mgrid[0:height, 0:width]
    field_ = np.zeros((height, width))
    for _ in range(n_waves):
        fy, fx = rng.uniform(-2.0, 2.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.5, 1.0)
        field_ += amp * np.sin(2 * np.pi * (fy * yy / height + fx * xx / width) + phase)
    u = (field_ - field_.min()) / (field_.max() - field_.min())
    return 0.1 + 0.8 * u ** BASE_WARP


def synth_dataset(n_subjects: int, n_domains: int, height: int, width: int, seed: int = 0,
                  transforms: Sequence[str] | None = None) -> tuple[list[DomainSample], TransformRegistry]:
    names = tuple(transforms) if transforms is not None else tuple(TRANSFORMS)[:n_domains]
    if n_domains > len(TRANSFORMS) or len(names) != n_domains:
        raise ValueError(f"{n_domains} domains requested but only {len(TRANSFORMS)} transforms are registered")
    unknown = [n for n in names if n not in TRANSFORMS]
    if unknown:
        raise ValueError(f"unknown transforms {unknown}")
    rng = np.random.default_rng(seed)
    registry = TransformRegistry(names)
    samples = []
    for s in range(n_subjects):
        sid = f"s{s:03d}"
        base = smooth_base(rng, height, width)
        registry.bases[sid] = base
        images = np.stack([registry.apply(d, base)[None] for d in range(n_domains)])
        samples.append(DomainSample(sid, images))
    return samples, registry


def split_by_subject(subject_ids: Sequence[str], fractions=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    if not subject_ids:
        raise ValueError("cannot split an empty subject list")
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")
    order = [subject_ids[i] for i in np.random.default_rng(seed).permutation(len(subject_ids))]
    n = len(order)
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    return DatasetSplit(tuple(order[:n_train]), tuple(order[n_train:n_train + n_val]),
                        tuple(order[n_train + n_val:]))


def select(samples: Sequence[DomainSample], ids: Iterable[str]) -> list[DomainSample]:
    wanted = set(ids)
    return [s for s in samples if s.subject_id in wanted]


# folder layout: <root>/<subject_id>/<domain_index>.pgm|ppm


def write_dataset(root: str | os.PathLike, samples: Sequence[DomainSample]) -> list[Path]:
    root = Path(root)
    written = []
    for sample in samples:
        folder = root / sample.subject_id
        folder.mkdir(parents=True, exist_ok=True)
        for d in range(sample.n_domains):
            if not sample.available[d]:
                continue
            path = folder / f"{d}{extension_for(sample.images.shape[1])}"
            write_image(path, sample.images[d])
            written.append(path)
    return written


def load_dataset(root: str | os.PathLike, n_domains: int | None = None) -> list[DomainSample]:
    """Read every subject folder under ``root``; absent domain files become unavailable slots."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    found: dict[str, dict[int, np.ndarray]] = {}
    shape = None
    for folder in sorted(p for p in root.iterdir() if p.is_dir()):
        for path in sorted(folder.iterdir()):
            if path.suffix not in (".pgm", ".ppm") or not path.stem.isdigit():
                continue
            image = read_image(path)
            if shape is None:
                shape = image.shape
            elif image.shape != shape:
                raise ValueError(f"{path}: image shape {image.shape} differs from {shape}")
            found.setdefault(folder.name, {})[int(path.stem)] = image
    if not found:
        raise ValueError(f"no domain images found under {root}")
    N = n_domains if n_domains is not None else 1 + max(max(d) for d in found.values())
    samples = []
    for sid, domains in found.items():
        if max(domains) >= N:
            raise ValueError(f"subject {sid} has domain index {max(domains)} but only {N} domains expected")
        images = np.zeros((N,) + shape)
        available = np.zeros(N, dtype=bool)
        for d, image in domains.items():
            images[d] = image
            available[d] = True
        samples.append(DomainSample(sid, images, available))
    return samples
