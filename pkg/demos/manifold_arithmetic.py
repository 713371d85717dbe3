"""Build new manifolds from old ones without retraining.

The product of two MDFs vanishes on the union of their zero sets; stacking
them vanishes only on the intersection.  CLMC samples from either directly.

    python demos/manifold_arithmetic.py
"""

import math

import numpy as np

from implicit_manifolds import ClmcConfig, ConstrainedModel, EnergyModel, MdfModel, intersect, run_chains, union
from implicit_manifolds.analytic import SphereMap
from implicit_manifolds.cebm import SampleBuffer, init_chain_points


def ball(center):
    n = len(center)
    return ConstrainedModel(MdfModel(SphereMap(center, 1.0), n, n - 1), EnergyModel.constant(n))


rng = np.random.default_rng(0)
cfg = ClmcConfig(epsilon=0.1, steps=100)

ring = intersect(ball([-0.5, 0.0, 0.0]), ball([0.5, 0.0, 0.0]))
x0 = init_chain_points(SampleBuffer([-1.5] * 3, [1.5] * 3), ring.mdf, 200, rng)
x = run_chains(ring.mdf, ring.energy, x0, cfg).x
print(f"intersection: max |x1| = {np.abs(x[:, 0]).max():.1e}, "
      f"radius error = {np.abs(np.hypot(x[:, 1], x[:, 2]) - math.sqrt(3) / 2).max():.1e}")

pair = union(ball([-2.0, 0.0]), ball([2.0, 0.0]))
x0 = init_chain_points(SampleBuffer([-3.5, -1.5], [3.5, 1.5]), pair.mdf, 200, rng)
x = run_chains(pair.mdf, pair.energy, x0, cfg).x
left = np.sum(x[:, 0] < 0)
print(f"union: {left} chains on the left circle, {len(x) - left} on the right")
