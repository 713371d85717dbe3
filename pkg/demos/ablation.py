"""Why the rank penalty matters.

Without it (alpha = 0) nothing stops the MDF from collapsing towards the zero
function, which fits the data trivially.  The mean gain ``|v^T J_F|`` over
random unit directions ``v`` measures how far from flat the network is.

    python demos/ablation.py
"""

import numpy as np

from implicit_manifolds import MdfTrainConfig, train_mdf
from implicit_manifolds.data import gen_von_mises_circle
from implicit_manifolds.mdf import mean_direction_gain, residual

ds = gen_von_mises_circle(1000, seed=0)
for alpha in (1.0, 0.0):
    mdf = train_mdf(ds.points, MdfTrainConfig(manifold_dim=1, alpha=alpha))
    gain = mean_direction_gain(mdf, ds.points, np.random.default_rng(0))
    off = np.mean(np.abs(residual(mdf, 2.0 * ds.points)))
    print(f"alpha={alpha}: mean |v^T J| on data {gain:.4f}, mean |F| at radius 2 {off:.4f}")
