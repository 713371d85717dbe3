"""Two disjoint circles: the pushforward baseline smears mass across the gap.

A one-dimensional latent space is connected, so the decoder image must join
the two circles, and the latent EBM cannot put zero mass on the join.  The
constrained model has no such problem: its manifold is a zero set, which can
have several components.

    python demos/mixture_baseline.py
"""

import math

import numpy as np

from implicit_manifolds.data import gen_von_mises_mixture
from implicit_manifolds.mesh import extract_contours
from implicit_manifolds.mdf import MdfTrainConfig, train_mdf
from implicit_manifolds.pushforward import AutoencoderConfig, LatentEbmConfig, fit_pushforward, pushforward_log_density

ds = gen_von_mises_mixture(1000, seed=0)

pf = fit_pushforward(ds.points, AutoencoderConfig(epochs=100),
                     LatentEbmConfig(epochs=100, steps=60, epsilon=0.5, drift_scale=10 / 0.5**2, grad_clamp=0.03))
xs, ys = np.linspace(-3.5, 3.5, 141), np.linspace(-1.5, 1.5, 61)
grid = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1).reshape(-1, 2)
with np.errstate(all="ignore"):
    top = np.max(pushforward_log_density(pf, grid))
bridge = np.stack([np.linspace(-1, 1, 21), np.zeros(21)], 1)
gap = np.min(pushforward_log_density(pf, bridge)) - top
print(f"pushforward: weakest bridge point is exp({gap:.2f}) = {math.exp(gap):.2e} of the peak density")

mdf = train_mdf(ds.points, MdfTrainConfig(manifold_dim=1, epochs=1000))
lines = extract_contours(mdf, ([-3.5, -1.5], [3.5, 1.5]))
print(f"constrained: learned zero set has {len(lines)} component(s)")
for line in lines:
    print(f"  centred near ({line[:, 0].mean():+.2f}, {line[:, 1].mean():+.2f}), {len(line)} vertices")
