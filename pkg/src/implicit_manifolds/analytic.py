"""Closed-form manifold-defining maps used as references and test fixtures."""

from __future__ import annotations

import numpy as np

from .netcore import _as_batch


class SphereMap:
    """``F(x) = |x - c|^2 - r^2``: a circle for n=2, a sphere for n=3."""

    out_dim = 1

    def __init__(self, center, radius=1.0):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)

    @property
    def in_dim(self):
        return self.center.size

    def forward(self, x):
        x, single = _as_batch(x, self.in_dim, "sphere input")
        d = x - self.center
        y = (np.einsum("ij,ij->i", d, d) - self.radius**2)[:, None]
        return y[0] if single else y

    def jvp(self, x, u):
        x, single = _as_batch(x, self.in_dim, "sphere point")
        u, _ = _as_batch(u, self.in_dim, "sphere tangent")
        y = 2.0 * np.einsum("ij,ij->i", x - self.center, u)[:, None]
        return y[0] if single else y

    def vjp(self, x, v):
        x, single = _as_batch(x, self.in_dim, "sphere point")
        v, _ = _as_batch(v, 1, "sphere cotangent")
        y = 2.0 * (x - self.center) * v
        return y[0] if single else y

    def to_dict(self):
        return {"kind": "sphere", "center": self.center.tolist(), "radius": self.radius}


class TorusMap:
    """``F(x) = (sqrt(x^2 + y^2) - R)^2 + z^2 - r^2`` about the z axis."""

    in_dim = 3
    out_dim = 1

    def __init__(self, major=2.0, minor=1.0):
        self.major = float(major)
        self.minor = float(minor)

    def _grad(self, x):
        rho = np.hypot(x[:, 0], x[:, 1])
        scale = 2.0 * (rho - self.major) / np.where(rho > 0, rho, 1.0)
        return np.stack([scale * x[:, 0], scale * x[:, 1], 2.0 * x[:, 2]], axis=1)

    def forward(self, x):
        x, single = _as_batch(x, 3, "torus input")
        rho = np.hypot(x[:, 0], x[:, 1])
        y = ((rho - self.major) ** 2 + x[:, 2] ** 2 - self.minor**2)[:, None]
        return y[0] if single else y

    def jvp(self, x, u):
        x, single = _as_batch(x, 3, "torus point")
        u, _ = _as_batch(u, 3, "torus tangent")
        y = np.einsum("ij,ij->i", self._grad(x), u)[:, None]
        return y[0] if single else y

    def vjp(self, x, v):
        x, single = _as_batch(x, 3, "torus point")
        v, _ = _as_batch(v, 1, "torus cotangent")
        y = self._grad(x) * v
        return y[0] if single else y

    def to_dict(self):
        return {"kind": "torus", "major": self.major, "minor": self.minor}
