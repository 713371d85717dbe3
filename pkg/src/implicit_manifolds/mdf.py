"""Manifold-defining functions: training, residuals and projection.

A manifold-defining function (MDF) ``F: R^n -> R^(n-m)`` describes its
manifold as the zero set ``{x : F(x) = 0}``.  Training minimises the squared
residual on data plus a hinge penalty that keeps every singular value of the
Jacobian above ``eta``, probed through random unit directions ``v``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import InputShapeError, SingularSystemError, TrainingDivergenceError
from .netcore import GradientBundle, MlpModel, _as_batch, _tape, silu_prime, silu_second
from .solvers import AdamState, LbfgsConfig, adam_step, cg_solve_batch, clip_grad_norm, lbfgs_minimize_batch

log = logging.getLogger(__name__)

PROJECTION_TOL = 1e-4
DEFAULT_PROJECTION = LbfgsConfig(max_iters=200, grad_tol=1e-13, f_tol=1e-26)


@dataclass(frozen=True, eq=False)
class MdfModel:
    net: object
    ambient_dim: int
    manifold_dim: int
    eta: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        n, m = self.ambient_dim, self.manifold_dim
        if not 0 < m < n:
            raise ValueError(f"need 0 < m < n, got m={m}, n={n}")
        if self.net.in_dim != n:
            raise InputShapeError(f"net input dim {self.net.in_dim} != ambient dim {n}")
        if isinstance(self.net, MlpModel) and self.net.out_dim != n - m:
            raise InputShapeError(f"net output dim {self.net.out_dim} != n - m = {n - m}")

    @property
    def codim(self) -> int:
        return self.net.out_dim

    def forward(self, x):
        return self.net.forward(x)

    def jvp(self, x, u):
        return self.net.jvp(x, u)

    def vjp(self, x, v):
        return self.net.vjp(x, v)

    def with_net(self, net) -> "MdfModel":
        return MdfModel(net, self.ambient_dim, self.manifold_dim, self.eta, self.alpha)


@dataclass(frozen=True)
class MdfTrainConfig:
    manifold_dim: int = 1
    hidden: tuple = (8, 8, 8)
    epochs: int = 100
    batch_size: int = 100
    lr: float = 0.01
    eta: float = 1.0
    alpha: float = 1.0
    grad_clip: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr > 0 required")
        if self.eta < 0 or self.alpha < 0:
            raise ValueError("eta and alpha must be non-negative")


def residual(model: MdfModel, x):
    """``|F(x)|`` for a point or per row of a batch."""
    return np.linalg.norm(model.forward(x), axis=-1)


def sample_unit_sphere(dim: int, rng: np.random.Generator, size=None):
    """Uniform direction(s) on the unit sphere in ``R^dim``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    shape = (dim,) if size is None else (size, dim)
    v = rng.standard_normal(shape)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    while np.any(norms == 0):
        zero = (norms == 0).ravel()
        if size is None:
            v = rng.standard_normal(shape)
        else:
            v[zero] = rng.standard_normal((int(zero.sum()), dim))
        norms = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / norms


def loss_and_grad(net: MlpModel, x, directions, eta: float, alpha: float):
    """Batch-mean MDF loss for fixed directions, and its parameter gradient.

    The hinge term depends on ``w = J^T v``, which is itself produced by a
    reverse sweep; its parameter gradient is obtained by differentiating that
    sweep by hand (this is where the SiLU second derivative enters).
    """
    x, _ = _as_batch(x, net.in_dim, "mdf batch")
    v, _ = _as_batch(directions, net.out_dim, "mdf directions")
    nb = x.shape[0]
    layers = net.layers
    nl = len(layers)
    pre, hs, y = _tape(net, x)

    # reverse sweep producing w = J^T v; ga[i] is the cotangent of pre[i]
    ga = [None] * (nl - 1)
    gh = v @ layers[-1][0]
    ghs = [None] * nl  # ghs[i]: cotangent of hs[i]
    ghs[nl - 1] = gh
    for i in range(nl - 2, -1, -1):
        ga[i] = silu_prime(pre[i]) * ghs[i + 1]
        ghs[i] = ga[i] @ layers[i][0]
    w = ghs[0]

    nu = np.linalg.norm(w, axis=1)
    hinge = np.maximum(eta - nu, 0.0)
    value = float(np.mean(np.einsum("ij,ij->i", y, y) + alpha * hinge**2))

    dW = [np.zeros_like(W) for W, _ in layers]
    db = [np.zeros_like(b) for _, b in layers]

    # adjoint of w; zero at the hinge kink and at nu == 0
    coef = np.where((hinge > 0) & (nu > 0), -2.0 * alpha * hinge / np.where(nu > 0, nu, 1.0), 0.0)
    w_bar = (coef / nb)[:, None] * w

    seeds = [None] * (nl - 1)
    gh_bar = w_bar  # adjoint of ghs[0]
    for i in range(nl - 1):
        # ghs[i] = ga[i] @ W_i
        dW[i] += ga[i].T @ gh_bar
        ga_bar = gh_bar @ layers[i][0].T
        # ga[i] = silu'(pre[i]) * ghs[i+1]
        seeds[i] = silu_second(pre[i]) * ghs[i + 1] * ga_bar
        gh_bar = silu_prime(pre[i]) * ga_bar
    # ghs[nl-1] = v @ W_last, v constant
    dW[-1] += v.T @ gh_bar

    # ordinary backprop of the forward pass, with the extra pre-activation seeds
    delta = 2.0 * y / nb
    for i in range(nl - 1, -1, -1):
        dW[i] += delta.T @ hs[i]
        db[i] += delta.sum(axis=0)
        if i > 0:
            delta = silu_prime(pre[i - 1]) * (delta @ layers[i][0]) + seeds[i - 1]

    flat = np.concatenate([c for W, b in zip(dW, db) for c in (W.ravel(), b)])
    return value, flat


def mdf_loss(model: MdfModel, batch, rng: np.random.Generator):
    """Loss with one fresh unit direction per batch element."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    if not isinstance(model.net, MlpModel):
        raise TypeError("mdf_loss needs an atomic MlpModel")
    v = sample_unit_sphere(model.codim, rng, size=batch.shape[0])
    value, grad = loss_and_grad(model.net, batch, v, model.eta, model.alpha)
    return value, GradientBundle(grad)


@dataclass
class TrainLog:
    epoch_loss: list = field(default_factory=list)


def train_mdf(data, cfg: MdfTrainConfig, init: Optional[MdfModel] = None, train_log: Optional[TrainLog] = None):
    """Minibatch Adam on :func:`mdf_loss`.

    Passing ``init`` resumes from an existing model (its architecture wins
    over ``cfg.hidden``).  Per-epoch mean losses are appended to ``train_log``.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n = data.shape[1]
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        net = MlpModel.init((n, *cfg.hidden, n - cfg.manifold_dim), rng)
    else:
        net = init.net
    model = MdfModel(net, n, cfg.manifold_dim, cfg.eta, cfg.alpha)
    params = net.params.copy()
    state = AdamState.zeros(params.size, lr=cfg.lr)
    train_log = train_log if train_log is not None else TrainLog()

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for bi, start in enumerate(range(0, len(data), cfg.batch_size)):
            batch = data[order[start : start + cfg.batch_size]]
            value, bundle = mdf_loss(model, batch, rng)
            if not np.isfinite(value) or not np.all(np.isfinite(bundle.param_grad)):
                raise TrainingDivergenceError(
                    f"non-finite MDF loss at epoch {epoch}, batch {bi}", epoch=epoch, batch=bi)
            grad = bundle.param_grad
            if cfg.grad_clip is not None:
                grad = clip_grad_norm(grad, cfg.grad_clip)
            params, state = adam_step(state, params, grad)
            model = model.with_net(net.with_params(params))
            total += value * len(batch)
            count += len(batch)
        train_log.epoch_loss.append(total / max(count, 1))
        log.debug("mdf epoch %d loss %.6g", epoch, train_log.epoch_loss[-1])
    return model


def mean_direction_gain(model: MdfModel, x, rng: np.random.Generator) -> float:
    """Mean of ``|v^T J_F(x)|`` over the points, with random unit ``v``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    v = sample_unit_sphere(model.codim, rng, size=x.shape[0])
    return float(np.mean(np.linalg.norm(model.vjp(x, v), axis=1)))


class Projection(NamedTuple):
    x: np.ndarray
    residual: np.ndarray
    ok: np.ndarray


def project_to_manifold(model: MdfModel, x0, cfg: LbfgsConfig = DEFAULT_PROJECTION, tol: float = PROJECTION_TOL):
    """Minimise ``|F(x)|^2`` with L-BFGS starting from each row of ``x0``.

    ``ok`` flags points whose final residual is at most ``tol``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    xb = np.atleast_2d(x0)

    def fun(x, idx):
        fx = model.forward(x)
        return np.einsum("ij,ij->i", fx, fx), 2.0 * model.vjp(x, fx)

    res = lbfgs_minimize_batch(fun, xb, cfg)
    resid = residual(model, res.x)
    ok = resid <= tol
    if single:
        return Projection(res.x[0], float(resid[0]), bool(ok[0]))
    return Projection(res.x, resid, ok)


def min_singular_estimate(model: MdfModel, x, iters: int = 20) -> float:
    """Smallest singular value of ``J_F(x)`` by inverse iteration on ``J J^T``.

    Each inverse step is a matrix-free CG solve; a CG breakdown means the
    Jacobian is rank deficient and 0 is returned.
    """
    x = np.asarray(x, dtype=np.float64)

    def apply(v):
        return model.jvp(x[None], model.vjp(x[None], v))

    k = model.codim
    y = np.random.default_rng(0).standard_normal(k)
    y /= np.linalg.norm(y)
    for _ in range(iters):
        res = cg_solve_batch(apply, y[None], tol=1e-12, max_iters=20 * k)
        if res.singular[0]:
            return 0.0
        z = res.x[0]
        nz = np.linalg.norm(z)
        if not np.isfinite(nz) or nz == 0:
            return 0.0
        y = z / nz
    lam = float(y @ apply(y[None])[0])
    return float(np.sqrt(max(lam, 0.0)))
