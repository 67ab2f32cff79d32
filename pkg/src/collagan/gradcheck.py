"""Central finite-difference verification of backward rules.

The error reported for one tensor is ``max|analytic - numeric|`` divided by the
largest gradient magnitude of either estimate, so near-zero entries do not
blow up the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import nn
from .autodiff import Tensor, backward, precision


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float) -> np.ndarray:
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def check(loss_fn: Callable[[], Tensor], tensors: dict[str, Tensor], h: float = 1e-3) -> dict[str, float]:
    """Compare backward gradients of the scalar ``loss_fn()`` with central differences.

    ``loss_fn`` must rebuild its graph on each call from the given tensors,
    whose ``.data`` arrays are perturbed in place.
    """
    for t in tensors.values():
        t.requires_grad = True
    backward(loss_fn())
    analytic = {name: t.grad.astype(np.float64) for name, t in tensors.items()}
    return {name: relative_error(analytic[name],
                                 numerical_gradient(lambda: float(loss_fn().data), t.data, h))
            for name, t in tensors.items()}


@dataclass
class CaseResult:
    name: str
    error: float
    passed: bool


def _probe(rng: np.random.Generator, out: Tensor) -> Tensor:
    # random projection keeps the scalar O(1) while touching every output entry
    return Tensor(rng.standard_normal(out.shape))


def _layer_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], dict[str, Tensor]]]:
    def T(*shape, scale=1.0, offset=0.0):
        return Tensor(rng.standard_normal(shape) * scale + offset)

    cases = {}

    x, w, b = T(2, 3, 6, 6), T(4, 3, 3, 3, scale=0.5), T(4)
    r = _probe(rng, Tensor(np.zeros((2, 4, 6, 6))))
    cases["conv2d"] = (lambda: ad.tsum(nn.conv2d(x, w, b, 1, "same") * r), {"x": x, "weight": w, "bias": b})

    x2, w2, b2 = T(1, 2, 7, 7), T(3, 2, 4, 4, scale=0.5), T(3)
    r2 = _probe(rng, Tensor(np.zeros((1, 3, 3, 3))))
    cases["conv2d_stride2"] = (lambda: ad.tsum(nn.conv2d(x2, w2, b2, 2, 1) * r2), {"x": x2, "weight": w2, "bias": b2})

    x3, w3, b3 = T(2, 3, 3, 3), T(2, 3, 2, 2), T(2)
    r3 = _probe(rng, Tensor(np.zeros((2, 2, 6, 6))))
    cases["conv_transpose2d"] = (lambda: ad.tsum(nn.conv_transpose2d(x3, w3, b3) * r3),
                                 {"x": x3, "weight": w3, "bias": b3})

    x4, s4, t4 = T(2, 3, 5, 5), T(3, offset=1.0), T(3)
    r4 = _probe(rng, x4)
    cases["instance_norm"] = (lambda: ad.tsum(nn.instance_norm(x4, s4, t4) * r4), {"x": x4, "scale": s4, "shift": t4})

    # keep inputs away from the kink at zero
    x5 = Tensor(rng.uniform(0.2, 1.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4)))
    r5 = _probe(rng, x5)
    cases["leaky_relu"] = (lambda: ad.tsum(nn.leaky_relu(x5) * r5), {"x": x5})

    x6 = T(2, 2, 4, 4)
    r6 = _probe(rng, Tensor(np.zeros((2, 2, 2, 2))))
    cases["avg_pool2"] = (lambda: ad.tsum(nn.avg_pool2(x6) * r6), {"x": x6})

    x7 = T(3, 5)
    keep_rng_seed = int(rng.integers(1 << 31))
    r7 = _probe(rng, x7)
    cases["dropout"] = (lambda: ad.tsum(nn.dropout(x7, 0.5, True, np.random.default_rng(keep_rng_seed)) * r7),
                        {"x": x7})

    x8, w8, b8 = T(3, 2, 2, 2), T(4, 8), T(4)
    r8 = _probe(rng, Tensor(np.zeros((3, 4))))
    cases["fully_connected"] = (lambda: ad.tsum(nn.fully_connected(x8, w8, b8) * r8), {"x": x8, "weight": w8, "bias": b8})

    a9, b9 = T(1, 2, 3, 3), T(1, 1, 3, 3)
    r9 = _probe(rng, Tensor(np.zeros((1, 3, 3, 3))))
    cases["concat_channels"] = (lambda: ad.tsum(nn.concat_channels([a9, b9]) * r9), {"a": a9, "b": b9})

    x10 = T(4, 3)
    r10 = _probe(rng, x10)
    cases["sigmoid"] = (lambda: ad.tsum(nn.sigmoid(x10) * r10), {"x": x10})

    x11 = T(3, 8)
    r11 = _probe(rng, x11)
    cases["softmax"] = (lambda: ad.tsum(nn.softmax(x11, axis=1) * r11), {"x": x11})
    cases["log_softmax"] = (lambda: ad.tsum(ad.log(nn.softmax(x11, axis=1)) * r11), {"x": x11})
    return cases


def _loss_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], dict[str, Tensor]]]:
    cfg = L.SsimConfig()
    cases = {}
    X = Tensor(rng.uniform(0.1, 0.9, (1, 1, 12, 12)))
    Y = Tensor(rng.uniform(0.1, 0.9, (1, 1, 12, 12)))
    r = _probe(rng, X)
    cases["ssim_map"] = (lambda: ad.tsum(L.ssim_map(X, Y, cfg) * r), {"X": X, "Y": Y})
    cases["ssim_loss"] = (lambda: L.ssim_loss(X, Y, cfg), {"X": X, "Y": Y})

    # originals and reconstructions differ by at least 0.05 so |.| stays smooth
    origs = [Tensor(rng.uniform(0, 1, (2, 1, 8, 8))) for _ in range(3)]
    recs = [Tensor(o.data + rng.uniform(0.05, 0.3, o.shape) * rng.choice([-1.0, 1.0], o.shape)) for o in origs]
    cases["mcc_loss"] = (lambda: L.mcc_loss(origs, recs), {f"rec{i}": t for i, t in enumerate(recs)})
    ss_o = [Tensor(rng.uniform(0.1, 0.9, (1, 1, 12, 12))) for _ in range(2)]
    ss_r = [Tensor(rng.uniform(0.1, 0.9, (1, 1, 12, 12))) for _ in range(2)]
    cases["mcc_ssim_loss"] = (lambda: L.mcc_ssim_loss(ss_o, ss_r, cfg), {f"rec{i}": t for i, t in enumerate(ss_r)})

    dr, df = Tensor(rng.uniform(0, 1, (2, 1, 3, 3))), Tensor(rng.uniform(0, 1, (2, 1, 3, 3)))
    cases["lsgan_dsc_loss"] = (lambda: L.lsgan_dsc_loss(dr, df), {"d_real": dr, "d_fake": df})
    cases["lsgan_gen_loss"] = (lambda: L.lsgan_gen_loss(df), {"d_fake": df})

    logits = Tensor(rng.standard_normal((3, 4)))
    target = np.array([0, 2, 3])
    cases["clsf_loss"] = (lambda: L.clsf_loss(nn.softmax(logits, axis=1), target), {"logits": logits})
    return cases


def run_suite(seed: int = 0, tolerance: float = 1e-5, dtype=np.float64, h: float | None = None) -> list[CaseResult]:
    """Finite-difference check of every layer and loss term; one result per op."""
    if h is None:
        h = 1e-3 if np.dtype(dtype) == np.float64 else 1e-2
    results = []
    with precision(dtype):
        rng = np.random.default_rng(seed)
        cases = {**_layer_cases(rng), **_loss_cases(rng)}
        for name, (fn, tensors) in cases.items():
            err = max(check(fn, tensors, h).values())
            results.append(CaseResult(name, err, err < tolerance))
    return results
