"""Two-phase training: classifier pretraining on real images, then alternating
discriminator / generator updates with multiple cycle consistency."""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import Tensor
from .data import DomainSample, assemble_input, assemble_slots, input_dropout_sample
from .models import (Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, build_discriminator,
                     build_generator)
from .optim import Adam

ADVERSARIAL_TARGETS = ("forward", "cycle", "both")
METRICS_HEADER = ("step", "domain", "nmse", "ssim", "loss_mcc", "loss_mcc_ssim", "loss_gan_gen",
                  "loss_gan_dsc", "loss_clsf_real", "loss_clsf_fake")

# discriminator forward passes per joint step: real + fakes for its own update, fakes for the generator's
DISCRIMINATOR_CALLS_PER_STEP = 3


@dataclass
class TrainConfig:
    n_domains: int = 4
    image_size: int = 32
    in_channels: int = 1
    generator_arch: str = "plain_unet"
    generator_width: int = 8
    generator_depth: int = 3
    residual_blocks: int = 2
    disc_width: int = 16
    disc_downsamples: int = 4
    disc_multi_scale: bool = False
    disc_dropout: float = 0.25
    lambda_mcc: float = 10.0
    lambda_mcc_ssim: float = 1.0
    lambda_gan: float = 1.0
    lambda_clsf: float = 1.0
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    pretrain_lr: float = 1e-5
    batch_size: int = 4
    pretrain_batch_size: int = 4
    classifier_pretrain_epochs: int = 10
    joint_steps: int = 2000
    input_dropout_rate: float = 0.3
    dropout_on_cycle: bool = False
    adversarial_target: str = "forward"
    eval_interval: int = 200
    checkpoint_interval: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.classifier_pretrain_epochs < 0:
            raise ValueError("classifier_pretrain_epochs must be >= 0")
        if self.batch_size < 1 or self.pretrain_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.joint_steps < 0:
            raise ValueError("joint_steps must be >= 0")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")
        if self.adversarial_target not in ADVERSARIAL_TARGETS:
            raise ValueError(f"adversarial_target must be one of {ADVERSARIAL_TARGETS}")
        if not 0.0 <= self.input_dropout_rate < 1.0:
            raise ValueError("input_dropout_rate must lie in [0, 1)")

    @property
    def weights(self) -> L.LossWeights:
        return L.LossWeights(self.lambda_mcc, self.lambda_mcc_ssim, self.lambda_gan, self.lambda_clsf)

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(self.generator_arch, self.n_domains, self.in_channels, self.generator_width,
                             self.generator_depth, self.residual_blocks)

    def discriminator_spec(self) -> DiscriminatorSpec:
        return DiscriminatorSpec(self.n_domains, self.in_channels, self.image_size, self.disc_width,
                                 self.disc_downsamples, self.disc_multi_scale, self.disc_dropout)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format_value(getattr(self, f.name))}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text: str, base: "TrainConfig | None" = None) -> "TrainConfig":
        return (base or cls()).updated(parse_key_values(text))

    def updated(self, values: dict[str, str | object]) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(self)}
        changes = {}
        for key, raw in values.items():
            if key not in types:
                raise KeyError(f"unknown config key {key!r}")
            changes[key] = _coerce(types[key], raw)
        return dataclasses.replace(self, **changes)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(type_name, raw):
    if not isinstance(raw, str):
        return raw
    type_name = type_name if isinstance(type_name, str) else type_name.__name__
    if type_name == "bool":
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    if type_name == "int":
        return int(raw)
    if type_name == "float":
        return float(raw)
    return raw.strip()


def parse_key_values(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, snapshot: dict[str, float]):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainingState:
    """Everything needed to continue training bit-for-bit."""

    config: TrainConfig
    G: Generator
    D: Discriminator
    opt_g: Adam
    opt_d: Adam
    rng: np.random.Generator
    step: int = 0


def init_state(config: TrainConfig) -> TrainingState:
    G = build_generator(config.generator_spec(), seed=config.seed)
    D = build_discriminator(config.discriminator_spec(), seed=config.seed + 1)
    opt_g = Adam(G.parameters(), config.lr, config.beta1, config.beta2, config.adam_eps)
    opt_d = Adam(D.parameters(), config.lr, config.beta1, config.beta2, config.adam_eps)
    return TrainingState(config, G, D, opt_g, opt_d, np.random.default_rng(config.seed + 2))


def stack_samples(samples: Sequence[DomainSample]) -> np.ndarray:
    """(S, N, C, H, W) array in the working dtype; every sample must be complete."""
    if not samples:
        raise ValueError("empty dataset")
    incomplete = [s.subject_id for s in samples if not s.complete]
    if incomplete:
        raise ValueError(f"training needs complete samples; incomplete: {incomplete}")
    return np.stack([s.images for s in samples]).astype(ad.default_dtype())


@dataclass
class StepTrace:
    """Instrumentation filled in by :func:`joint_step`."""

    target: int = -1
    generator_calls: int = 0
    discriminator_calls: int = 0
    reconstructions: int = 0
    clsf_real_inputs: list = field(default_factory=list)
    clsf_fake_inputs: list = field(default_factory=list)
    null_sets: list = field(default_factory=list)


def pretrain_classifier(D: Discriminator, samples, config: TrainConfig, rng: np.random.Generator,
                        epochs: int | None = None) -> Discriminator:
    """Fit the domain-classifier path on real images only.

    One epoch visits every (subject, domain) pair once. The patch head gets no
    gradient, so it stays at its initial values.
    """
    data = samples if isinstance(samples, np.ndarray) else stack_samples(samples)
    if data.shape[0] == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    epochs = config.classifier_pretrain_epochs if epochs is None else epochs
    if epochs == 0:
        return D
    S, N = data.shape[:2]
    opt = Adam(D.parameters(), config.pretrain_lr, config.beta1, config.beta2, config.adam_eps)
    pairs = np.array([(s, k) for s in range(S) for k in range(N)])
    for _ in range(epochs):
        order = pairs[rng.permutation(len(pairs))]
        for start in range(0, len(order), config.pretrain_batch_size):
            chunk = order[start:start + config.pretrain_batch_size]
            _, probs = D(Tensor(data[chunk[:, 0], chunk[:, 1]]), training=True, rng=rng)
            loss = L.clsf_loss(probs, chunk[:, 1])
            if not math.isfinite(loss.item()):
                raise TrainingDiverged("non-finite classifier loss during pretraining", {"clsf_real": loss.item()})
            ad.backward(loss)
            opt.step()
    return D


def classifier_accuracy(D: Discriminator, samples) -> float:
    data = samples if isinstance(samples, np.ndarray) else stack_samples(samples)
    S, N = data.shape[:2]
    images = data.reshape((S * N,) + data.shape[2:])
    labels = np.tile(np.arange(N), S)
    _, probs = D(Tensor(images), training=False)
    return float(np.mean(probs.data.argmax(axis=1) == labels))


def _live_flags(rng, B: int, N: int, target: int, rate: float, trace: StepTrace | None) -> np.ndarray:
    live = np.ones((B, N), dtype=bool)
    for b in range(B):
        nulled = input_dropout_sample(rng, N, target, rate)
        live[b, list(nulled)] = False
        if trace is not None:
            trace.null_sets.append(nulled)
    return live


def joint_step(G: Generator, D: Discriminator, batch: np.ndarray, rng: np.random.Generator,
               config: TrainConfig, opt_g: Adam, opt_d: Adam, *, target: int | None = None,
               update_d: bool = True, trace: StepTrace | None = None) -> L.LossReport:
    """One alternating update on a batch of complete samples (B, N, C, H, W).

    The generator runs once forward (imputing the sampled target from the
    dropout-thinned complement) and once per other domain to rebuild it from
    a set that contains the fake. The discriminator then updates against the
    frozen generator, and the generator against the frozen discriminator.
    """
    B, N = batch.shape[:2]
    kappa = int(rng.integers(N)) if target is None else int(target)
    if trace is not None:
        trace.target = kappa
    calls_before = (G.calls, D.calls)
    slots = [batch[:, d] for d in range(N)]

    G.requires_grad_(True)
    D.requires_grad_(False)
    live = _live_flags(rng, B, N, kappa, config.input_dropout_rate, trace)
    x_hat = G(assemble_slots(slots, live, kappa))

    originals, reconstructions = [], []
    for other in range(N):
        if other == kappa:
            continue
        cycle_slots = list(slots)
        cycle_slots[kappa] = x_hat
        if config.dropout_on_cycle:
            cycle_live = _live_flags(rng, B, N, other, config.input_dropout_rate, None)
        else:
            cycle_live = np.ones((B, N), dtype=bool)
        reconstructions.append(G(assemble_slots(cycle_slots, cycle_live, other)))
        originals.append(Tensor(batch[:, other]))

    fakes = []
    if config.adversarial_target in ("forward", "both"):
        fakes.append(x_hat)
    if config.adversarial_target in ("cycle", "both"):
        # same-domain re-generation from the untouched complement
        fakes.append(G(assemble_slots(slots, np.ones((B, N), dtype=bool), kappa)))
    fake = ad.concat(fakes, axis=0)
    fake_labels = np.full(fake.shape[0], kappa)

    real = Tensor(batch[:, kappa])
    G.requires_grad_(False)
    D.requires_grad_(True)
    d_real_patch, d_real_probs = D(real, training=True, rng=rng)
    d_fake_patch, _ = D(fake.detach(), training=True, rng=rng)
    gan_dsc = L.lsgan_dsc_loss(d_real_patch, d_fake_patch)
    if trace is not None:
        trace.clsf_real_inputs.append(real)
    clsf_real = L.clsf_loss(d_real_probs, np.full(B, kappa))
    loss_d = gan_dsc + clsf_real
    _require_finite({"gan_dsc": gan_dsc, "clsf_real": clsf_real})
    if update_d:
        ad.backward(loss_d)
        opt_d.step()

    G.requires_grad_(True)
    D.requires_grad_(False)
    g_fake_patch, g_fake_probs = D(fake, training=True, rng=rng)
    if trace is not None:
        trace.clsf_fake_inputs.append(fake)
    parts = {
        "mcc": L.mcc_loss(originals, reconstructions),
        "mcc_ssim": L.mcc_ssim_loss(originals, reconstructions),
        "gan_gen": L.lsgan_gen_loss(g_fake_patch),
        "clsf_fake": L.clsf_loss(g_fake_probs, fake_labels),
    }
    _require_finite({**parts, "gan_dsc": gan_dsc, "clsf_real": clsf_real})
    total_gen = L.total_generator_loss(parts, config.weights)
    ad.backward(total_gen)
    opt_g.step()
    D.requires_grad_(True)
    opt_d.zero_grad()

    if trace is not None:
        trace.generator_calls += G.calls - calls_before[0]
        trace.discriminator_calls += D.calls - calls_before[1]
        trace.reconstructions += len(reconstructions)
    return L.aggregate({**parts, "gan_dsc": gan_dsc, "clsf_real": clsf_real}, config.weights)


def _require_finite(parts: dict[str, Tensor]) -> None:
    snapshot = {k: v.item() for k, v in parts.items()}
    bad = [k for k, v in snapshot.items() if not math.isfinite(v)]
    if bad:
        raise TrainingDiverged(f"non-finite loss terms: {', '.join(bad)}", snapshot)


# imputation and evaluation


def impute_batch(G: Generator, samples: Sequence[DomainSample], target: int,
                 null_sets: Sequence | None = None) -> np.ndarray:
    """Eval-mode imputation of ``target`` for several samples; returns (B, C, H, W) in [0, 1]."""
    inputs = [assemble_input(s, target, () if null_sets is None else null_sets[i]) for i, s in enumerate(samples)]
    out = G(ad.concat(inputs, axis=0))
    return np.clip(out.data.astype(np.float64), 0.0, 1.0)


def impute(model, sample: DomainSample, target: int, null_set=()) -> np.ndarray:
    """Impute one domain image (C, H, W); ``model`` is a generator or a :class:`TrainingState`."""
    G = model.G if isinstance(model, TrainingState) else model
    return impute_batch(G, [sample], target, [null_set])[0]


class GeneratorImputer:
    def __init__(self, G: Generator):
        self.G = G

    def __call__(self, samples: Sequence[DomainSample], target: int) -> np.ndarray:
        return impute_batch(self.G, samples, target)


class OracleImputer:
    """Returns the ground truth; upper bound for every metric."""

    def __call__(self, samples: Sequence[DomainSample], target: int) -> np.ndarray:
        return np.stack([s.images[target] for s in samples]).astype(np.float64)


@dataclass
class EvalRow:
    domain: int
    nmse: float
    ssim: float


@dataclass
class EvalTable:
    rows: list[EvalRow]
    outputs: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["domain", "nmse", "ssim"])
        for r in self.rows:
            writer.writerow([r.domain, f"{r.nmse:.8g}", f"{r.ssim:.8g}"])
        return buf.getvalue()

    def mean(self) -> tuple[float, float]:
        return (float(np.mean([r.nmse for r in self.rows])), float(np.mean([r.ssim for r in self.rows])))


def evaluate(model, samples: Sequence[DomainSample], ssim_cfg: L.SsimConfig = L.SsimConfig()) -> EvalTable:
    """Per target domain: impute from the full complement and average NMSE / SSIM over subjects."""
    if not samples:
        raise ValueError("evaluation needs at least one sample")
    if isinstance(model, TrainingState):
        model = model.G
    imputer = GeneratorImputer(model) if isinstance(model, Generator) else model
    N = samples[0].n_domains
    rows, outputs = [], {}
    for k in range(N):
        subset = [s for s in samples if s.available[k]]
        if not subset:
            rows.append(EvalRow(k, float("nan"), float("nan")))
            continue
        preds = imputer(subset, k)
        outputs[k] = preds
        nm = [L.nmse(p, s.images[k]) for p, s in zip(preds, subset)]
        ss = [L.ssim(p, s.images[k], ssim_cfg) for p, s in zip(preds, subset)]
        rows.append(EvalRow(k, float(np.mean(nm)), float(np.mean(ss))))
    return EvalTable(rows, outputs)


def evaluate_nulled(model, samples: Sequence[DomainSample], n_nulled: int) -> float:
    """Mean NMSE over every target and every way of nulling ``n_nulled`` complement domains."""
    if isinstance(model, TrainingState):
        model = model.G
    N = samples[0].n_domains
    if not 0 <= n_nulled < N - 1:
        raise ValueError(f"can null between 0 and {N - 2} of {N - 1} complement domains")
    scores = []
    for k in range(N):
        complement = [d for d in range(N) if d != k]
        for nulled in itertools.combinations(complement, n_nulled):
            preds = impute_batch(model, samples, k, [nulled] * len(samples))
            scores.extend(L.nmse(p, s.images[k]) for p, s in zip(preds, samples))
    return float(np.mean(scores))


def copy_baseline(samples: Sequence[DomainSample]) -> list[float]:
    """For each target domain, the best mean NMSE obtainable by copying one complement image verbatim."""
    N = samples[0].n_domains
    best = []
    for k in range(N):
        scores = [np.mean([L.nmse(s.images[j], s.images[k]) for s in samples]) for j in range(N) if j != k]
        best.append(float(min(scores)))
    return best


# training driver


def _metrics_row(step: int, table: EvalTable | None, report: L.LossReport | None) -> dict:
    nm, ss = table.mean() if table is not None else (float("nan"), float("nan"))
    losses = report.as_dict() if report is not None else {}
    nan = float("nan")
    return {
        "step": step, "domain": "all", "nmse": nm, "ssim": ss,
        "loss_mcc": losses.get("mcc", nan), "loss_mcc_ssim": losses.get("mcc_ssim", nan),
        "loss_gan_gen": losses.get("gan_gen", nan), "loss_gan_dsc": losses.get("gan_dsc", nan),
        "loss_clsf_real": losses.get("clsf_real", nan), "loss_clsf_fake": losses.get("clsf_fake", nan),
    }


def metrics_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for row in rows:
        writer.writerow([row[k] if k in ("step", "domain") else f"{row[k]:.8g}" for k in METRICS_HEADER])
    return buf.getvalue()


def train(config: TrainConfig, train_samples: Sequence[DomainSample],
          val_samples: Sequence[DomainSample] | None = None, state: TrainingState | None = None,
          checkpoint_dir: str | os.PathLike | None = None,
          on_step: Callable[[TrainingState, L.LossReport], None] | None = None) -> tuple[TrainingState, list[dict]]:
    """Pretrain the classifier (fresh runs only), then run joint steps up to ``config.joint_steps``.

    Passing ``state`` resumes from a checkpoint; its own config governs
    everything except ``joint_steps``, which is taken from ``config``.
    Returns the final state and one metrics row per evaluation (step 0 and
    every ``eval_interval`` steps).
    """
    from .checkpoint import save_checkpoint

    data = stack_samples(train_samples)
    if state is None:
        state = init_state(config)
        pretrain_classifier(state.D, data, config, state.rng)
    else:
        state.config = dataclasses.replace(state.config, joint_steps=config.joint_steps)
    cfg = state.config

    def validate():
        return evaluate(state.G, val_samples) if val_samples else None

    log = []
    report = None
    if state.step == 0:
        log.append(_metrics_row(0, validate(), None))
    while state.step < cfg.joint_steps:
        idx = state.rng.choice(len(data), size=cfg.batch_size, replace=len(data) < cfg.batch_size)
        report = joint_step(state.G, state.D, data[idx], state.rng, cfg, state.opt_g, state.opt_d)
        state.step += 1
        if on_step is not None:
            on_step(state, report)
        if state.step % cfg.eval_interval == 0:
            log.append(_metrics_row(state.step, validate(), report))
        if checkpoint_dir is not None and cfg.checkpoint_interval and state.step % cfg.checkpoint_interval == 0:
            save_checkpoint(os.path.join(checkpoint_dir, f"step{state.step:06d}.ckpt"), state)
    return state, log
