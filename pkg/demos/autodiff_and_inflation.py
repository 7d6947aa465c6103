"""
Autodiff core and kernel inflation
==================================

A tour of the numpy autodiff core: build a tiny graph, check its gradients
against finite differences, then inflate a 2D kernel to 3D and confirm that a
video of one repeated frame gives back the 2D response.
"""

import numpy as np

from twopath import core
from twopath.checks import format_table, run_gradient_suite
from twopath.inflation import boring_video_equivalence, inflate_2d_to_3d

rng = np.random.default_rng(0)

# a conv -> relu -> mean graph, differentiated by hand-written backward rules
x = core.Tensor(rng.standard_normal((1, 2, 5, 5)), requires_grad=True)
w = core.Parameter(rng.standard_normal((3, 2, 3, 3)), dtype=np.float64)
y = core.mean(core.relu(core.conv2d(x, w, None, 1, 1)))
core.backward(y)
print("d mean / d input has shape", x.grad.shape, "and norm %.4f" % np.linalg.norm(x.grad))

# central differences agree to ~1e-10 in 64-bit
err = core.grad_check(lambda a, b: core.mean(core.relu(core.conv2d(a, b, None, 1, 1))),
                      [(1, 2, 5, 5), (3, 2, 3, 3)], seed=1)
print("relative error of the conv graph: %.2e" % err)

# the same check over every differentiable op
print(format_table(run_gradient_suite()))

# inflation: replicate the 2D kernel over N time steps and divide by N
k2d = rng.standard_normal((4, 1, 3, 3)).astype(np.float32)
k3d = inflate_2d_to_3d(k2d, 5)
print("2D kernel", k2d.shape, "-> 3D kernel", k3d.shape)
print("summing the 3D kernel over time gives back the 2D one:",
      np.allclose(k3d.sum(axis=2), k2d, atol=1e-6))

# on a "boring" video the 3D conv reproduces the 2D conv on every output frame
frame = rng.standard_normal((1, 12, 12)).astype(np.float32)
dev = boring_video_equivalence(frame, k2d, np.zeros(4, np.float32), 5, 1, 1)
print("boring-video deviation (float32): %.2e" % dev)
