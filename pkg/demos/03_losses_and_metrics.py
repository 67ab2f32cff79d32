"""What the loss terms and metrics report for a few controlled corruptions.

Run with ``python3 demos/03_losses_and_metrics.py``.
"""

import math

import numpy as np

from collagan import data as D
from collagan import losses as L

samples, _ = D.synth_dataset(1, 4, 32, 32, seed=3)
ref = samples[0].images[0]
rng = np.random.default_rng(0)

corruptions = {
    "identical": ref,
    "brighter by 0.05": np.clip(ref + 0.05, 0, 1),
    "noise sd 0.05": np.clip(ref + rng.normal(0, 0.05, ref.shape), 0, 1),
    "3x3 blur": D.box_blur3(ref),
    "flipped": ref[:, :, ::-1],
}
print(f"{'corruption':18s} {'nmse':>8s} {'ssim':>7s} {'l1 (mcc)':>9s} {'ssim loss':>9s}")
for name, img in corruptions.items():
    print(f"{name:18s} {L.nmse(img, ref):8.4f} {L.ssim(img, ref):7.4f} "
          f"{L.mcc_loss([ref[None]], [img[None]]).item():9.4f} "
          f"{L.mcc_ssim_loss([ref[None]], [img[None]]).item():9.4f}")

# The adversarial and classifier terms at their reference points.
print("LSGAN discriminator loss, perfect D:", L.lsgan_dsc_loss(np.ones(4), np.zeros(4)).item())
print("LSGAN generator loss, fooled D:", L.lsgan_gen_loss(np.ones(4)).item())
uniform = np.full((1, 4), 0.25)
print(f"classifier loss at uniform guess: {L.clsf_loss(uniform, 0).item():.4f} (ln 4 = {math.log(4):.4f})")

weights = L.LossWeights()
report = L.aggregate({"mcc": 0.02, "mcc_ssim": 0.01, "gan_gen": 0.3, "gan_dsc": 0.4,
                      "clsf_real": 0.1, "clsf_fake": 0.2}, weights)
print("weighted generator objective:", round(report.total_gen, 4), "discriminator:", round(report.total_dsc, 4))
