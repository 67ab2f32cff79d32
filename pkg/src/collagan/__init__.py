"""Missing-domain image imputation with a collaborative GAN, built on a small numpy autodiff engine."""

from .autodiff import Tensor, backward, precision
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DomainSample, assemble_input, synth_dataset
from .losses import LossWeights, SsimConfig, nmse, ssim
from .models import DiscriminatorSpec, GeneratorSpec, build_discriminator, build_generator
from .training import TrainConfig, evaluate, impute, joint_step, pretrain_classifier, train

__all__ = [
    "Tensor", "backward", "precision",
    "load_checkpoint", "save_checkpoint",
    "DomainSample", "assemble_input", "synth_dataset",
    "LossWeights", "SsimConfig", "nmse", "ssim",
    "DiscriminatorSpec", "GeneratorSpec", "build_discriminator", "build_generator",
    "TrainConfig", "evaluate", "impute", "joint_step", "pretrain_classifier", "train",
]
