"""Manifold arithmetic.

The product of two MDFs vanishes on the union of their zero sets and the
concatenation vanishes on the intersection.  Energies follow along as a
log-mixture (union) or a sum (intersection).  Composite nodes expose the same
``forward / jvp / vjp`` protocol as :class:`~implicit_manifolds.netcore.MlpModel`,
so the sampler never needs to know it is looking at a composite.
"""

from __future__ import annotations

import numpy as np

from .cebm import ConstrainedModel, EnergyModel
from .mdf import MdfModel


def _unwrap(node):
    return node.net if isinstance(node, EnergyModel) else node


class ProductNode:
    """Elementwise ``F1(x) * F2(x)``."""

    def __init__(self, left, right):
        if left.in_dim != right.in_dim or left.out_dim != right.out_dim:
            raise ValueError("product needs children with equal input and output dims")
        self.left, self.right = left, right

    in_dim = property(lambda self: self.left.in_dim)
    out_dim = property(lambda self: self.left.out_dim)

    def forward(self, x):
        return self.left.forward(x) * self.right.forward(x)

    def jvp(self, x, u):
        return self.left.jvp(x, u) * self.right.forward(x) + self.left.forward(x) * self.right.jvp(x, u)

    def vjp(self, x, v):
        return self.left.vjp(x, v * self.right.forward(x)) + self.right.vjp(x, v * self.left.forward(x))

    def to_dict(self):
        return {"kind": "product", "left": node_to_dict(self.left), "right": node_to_dict(self.right)}


class ConcatNode:
    """Stacked outputs ``(F1(x), F2(x))``."""

    def __init__(self, left, right):
        if left.in_dim != right.in_dim:
            raise ValueError("concat needs children with equal input dims")
        self.left, self.right = left, right

    in_dim = property(lambda self: self.left.in_dim)
    out_dim = property(lambda self: self.left.out_dim + self.right.out_dim)

    def forward(self, x):
        return np.concatenate([self.left.forward(x), self.right.forward(x)], axis=-1)

    def jvp(self, x, u):
        return np.concatenate([self.left.jvp(x, u), self.right.jvp(x, u)], axis=-1)

    def vjp(self, x, v):
        v = np.asarray(v, dtype=np.float64)
        k = self.left.out_dim
        return self.left.vjp(x, v[..., :k]) + self.right.vjp(x, v[..., k:])

    def to_dict(self):
        return {"kind": "concat", "left": node_to_dict(self.left), "right": node_to_dict(self.right)}


class TranslateNode:
    """Evaluates the child at ``x - offset``."""

    def __init__(self, child, offset):
        self.child = child
        self.offset = np.asarray(offset, dtype=np.float64)
        if self.offset.shape != (child.in_dim,):
            raise ValueError("offset length must equal the ambient dimension")

    in_dim = property(lambda self: self.child.in_dim)
    out_dim = property(lambda self: self.child.out_dim)

    def forward(self, x):
        return self.child.forward(np.asarray(x, dtype=np.float64) - self.offset)

    def jvp(self, x, u):
        return self.child.jvp(np.asarray(x, dtype=np.float64) - self.offset, u)

    def vjp(self, x, v):
        return self.child.vjp(np.asarray(x, dtype=np.float64) - self.offset, v)

    def to_dict(self):
        return {"kind": "translate", "offset": self.offset.tolist(), "child": node_to_dict(self.child)}


class SumNode:
    """``E1(x) + E2(x)``."""

    out_dim = 1

    def __init__(self, left, right):
        if left.in_dim != right.in_dim:
            raise ValueError("sum needs children with equal input dims")
        self.left, self.right = left, right

    in_dim = property(lambda self: self.left.in_dim)

    def forward(self, x):
        return self.left.forward(x) + self.right.forward(x)

    def jvp(self, x, u):
        return self.left.jvp(x, u) + self.right.jvp(x, u)

    def vjp(self, x, v):
        return self.left.vjp(x, v) + self.right.vjp(x, v)

    def to_dict(self):
        return {"kind": "sum", "left": node_to_dict(self.left), "right": node_to_dict(self.right)}


class LogMixtureNode:
    """``-log(w exp(-E1) + (1 - w) exp(-E2))``."""

    out_dim = 1

    def __init__(self, left, right, weight=0.5):
        if not 0.0 <= weight <= 1.0:
            raise ValueError("mixture weight must lie in [0, 1]")
        if left.in_dim != right.in_dim:
            raise ValueError("mixture needs children with equal input dims")
        self.left, self.right, self.weight = left, right, float(weight)

    in_dim = property(lambda self: self.left.in_dim)

    def _terms(self, x):
        with np.errstate(divide="ignore"):
            a = np.log(self.weight) - self.left.forward(x)
            b = np.log1p(-self.weight) - self.right.forward(x)
        e = -np.logaddexp(a, b)
        # responsibilities of each component
        return e, np.exp(a + e), np.exp(b + e)

    def forward(self, x):
        return self._terms(x)[0]

    def jvp(self, x, u):
        _, p, q = self._terms(x)
        return p * self.left.jvp(x, u) + q * self.right.jvp(x, u)

    def vjp(self, x, v):
        _, p, q = self._terms(x)
        return self.left.vjp(x, v * p) + self.right.vjp(x, v * q)

    def to_dict(self):
        return {"kind": "log_mixture", "weight": self.weight,
                "left": node_to_dict(self.left), "right": node_to_dict(self.right)}


def node_to_dict(node) -> dict:
    from .serialize import node_to_dict as _to

    return _to(node)


def union(a: ConstrainedModel, b: ConstrainedModel, w: float = 0.5) -> ConstrainedModel:
    """Zero set ``M_a ∪ M_b``; energy is the ``w``-weighted log-mixture."""
    if a.mdf.ambient_dim != b.mdf.ambient_dim:
        raise ValueError("ambient dimensions differ")
    if a.mdf.codim != b.mdf.codim:
        raise ValueError("union requires MDFs with equal output dimension")
    net = ProductNode(a.mdf.net, b.mdf.net)
    mdf = MdfModel(net, a.mdf.ambient_dim, a.mdf.manifold_dim, a.mdf.eta, a.mdf.alpha)
    energy = EnergyModel(LogMixtureNode(_unwrap(a.energy), _unwrap(b.energy), w))
    return ConstrainedModel(mdf, energy)


def intersect(a: ConstrainedModel, b: ConstrainedModel) -> ConstrainedModel:
    """Zero set ``M_a ∩ M_b``; energies add."""
    n = a.mdf.ambient_dim
    if n != b.mdf.ambient_dim:
        raise ValueError("ambient dimensions differ")
    codim = a.mdf.codim + b.mdf.codim
    if codim >= n:
        raise ValueError(f"combined codimension {codim} leaves no manifold in R^{n}")
    net = ConcatNode(a.mdf.net, b.mdf.net)
    mdf = MdfModel(net, n, n - codim, a.mdf.eta, a.mdf.alpha)
    energy = EnergyModel(SumNode(_unwrap(a.energy), _unwrap(b.energy)))
    return ConstrainedModel(mdf, energy)


def translate(model: ConstrainedModel, offset) -> ConstrainedModel:
    """Rigidly shift both the manifold and the energy by ``offset``."""
    mdf = model.mdf.with_net(TranslateNode(model.mdf.net, offset))
    energy = EnergyModel(TranslateNode(_unwrap(model.energy), offset))
    return ConstrainedModel(mdf, energy)
