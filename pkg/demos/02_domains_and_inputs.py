"""How a multi-domain sample becomes a generator input.

Builds the synthetic four-domain set, shows the mask channels and the
zero-filled slots, draws a few input-dropout patterns, and writes a montage of
one subject to ``demo_out/domains.pgm``.

Run with ``python3 demos/02_domains_and_inputs.py``.
"""

from pathlib import Path

import numpy as np

from collagan import data as D
from collagan.cli import montage
from collagan.netpbm import write_image

out = Path("demo_out")
out.mkdir(exist_ok=True)

samples, registry = D.synth_dataset(n_subjects=4, n_domains=4, height=32, width=32, seed=0)
print("domains:", registry.names)
first = samples[0]
for d, name in enumerate(registry.names):
    print(f"  {name:13s} mean intensity {first.images[d].mean():.3f}")

# The identity and inversion domains add up to one everywhere.
print("identity + inversion == 1:", np.allclose(first.images[0] + first.images[1], 1.0))

# Imputing domain 2: its slot is zeroed, and mask channel 2 is all ones.
x = D.assemble_input(first, target=2).data[0]
print("input channels:", x.shape[0], "(4 image slots + 4 mask channels)")
print("slot energies:", [round(float(np.abs(x[d]).sum()), 1) for d in range(4)])
print("mask channel sums:", [int(x[4 + d].sum()) for d in range(4)])

# Nulling domain 0 as well leaves only domains 1 and 3 live.
x = D.assemble_input(first, target=2, null_set={0}).data[0]
print("with domain 0 nulled:", [round(float(np.abs(x[d]).sum()), 1) for d in range(4)])

# Input dropout never nulls every complement domain.
rng = np.random.default_rng(1)
print("dropout draws for target 2, rate 0.3:",
      [sorted(D.input_dropout_sample(rng, 4, 2, 0.3)) for _ in range(8)])

# One row per subject, domains left to right.
write_image(out / "domains.pgm", montage([list(s.images) for s in samples]))
print("wrote", out / "domains.pgm")
