"""A short walk through the tensor engine, the optimizer and the gradient checker.

Run with ``python3 demos/01_autodiff_tour.py``.
"""

import numpy as np

from collagan import autodiff as ad
from collagan import nn
from collagan.autodiff import Tensor, backward, precision
from collagan.gradcheck import check, run_suite
from collagan.optim import Adam

# Tensors record the ops that built them. backward() walks that record in
# reverse and fills .grad on every leaf that asked for one.
x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
loss = ad.tsum(x * x)
backward(loss)
print("d/dx sum(x^2) at", x.data, "=", x.grad)

# A second backward pass replaces the gradient rather than adding to it.
backward(ad.tsum(x * 3.0))
print("after a second pass:", x.grad)

# The layers are ordinary functions over tensors. Here a conv, instance norm
# and leaky ReLU feed a random projection, and the checker compares the
# analytic gradients with central differences in 64-bit mode.
rng = np.random.default_rng(0)
with precision(np.float64):
    image = Tensor(rng.standard_normal((1, 2, 6, 6)))
    kernel = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5)
    probe = Tensor(rng.standard_normal((1, 3, 6, 6)))
    errors = check(lambda: ad.tsum(nn.leaky_relu(nn.instance_norm(nn.conv2d(image, kernel))) * probe),
                   {"image": image, "kernel": kernel})
print("relative errors:", {k: f"{v:.1e}" for k, v in errors.items()})

# Adam on a quadratic bowl: the iterate walks towards the minimum at zero.
w = Tensor(np.array([2.0, -3.0]), requires_grad=True)
opt = Adam({"w": w}, lr=0.1)
for step in range(50):
    backward(ad.tsum(w * w))
    opt.step()
print("w after 50 Adam steps:", np.round(w.data, 4))

# The full suite covers every layer and loss term; the CLI exposes it as
# ``collagan gradcheck``.
for result in run_suite(seed=0):
    print(f"  {result.name:16s} {result.error:.2e} {'ok' if result.passed else 'FAIL'}")
