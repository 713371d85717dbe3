"""Constrained energy-based models.

The density of a point on the learned manifold is ``exp(-E(x)) / Z`` where
``Z`` integrates ``exp(-E)`` over the manifold.  The energy is trained by
contrastive divergence, with negative samples drawn by constrained Langevin
chains that are mostly restarted from a persistent buffer.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .clmc import ClmcConfig, run_chains
from .errors import OffManifoldError, TrainingDivergenceError
from .mdf import MdfModel, project_to_manifold, residual
from .netcore import GradientBundle, MlpModel, param_grad
from .solvers import AdamState, adam_step, clip_grad_norm

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EnergyModel:
    """Scalar energy ``R^n -> R`` backed by an MLP or a composite node."""

    net: object

    def __post_init__(self):
        if self.net.out_dim != 1:
            raise ValueError("energy nets must have scalar output")

    @classmethod
    def constant(cls, dim: int, value: float = 0.0) -> "EnergyModel":
        return cls(MlpModel.linear(np.zeros((1, dim)), [value]))

    @property
    def in_dim(self):
        return self.net.in_dim

    @property
    def out_dim(self):
        return 1

    def value(self, x):
        """Energy at a point (float) or per row of a batch."""
        y = self.net.forward(x)
        return y[..., 0] if np.ndim(x) > 1 else float(y[0])

    def grad(self, x):
        """Input gradient of the energy."""
        x = np.asarray(x, dtype=np.float64)
        v = np.ones(x.shape[:-1] + (1,))
        return self.net.vjp(x, v)

    # map protocol, so energies can sit inside composite nodes
    def forward(self, x):
        return self.net.forward(x)

    def jvp(self, x, u):
        return self.net.jvp(x, u)

    def vjp(self, x, v):
        return self.net.vjp(x, v)


@dataclass(frozen=True, eq=False)
class ConstrainedModel:
    mdf: MdfModel
    energy: EnergyModel
    log_z: Optional[float] = None
    log_z_stderr: Optional[float] = None
    # False when Z was estimated without knowing the manifold volume
    log_z_absolute: bool = True

    def __post_init__(self):
        if self.mdf.ambient_dim != self.energy.in_dim:
            raise ValueError("MDF ambient dimension differs from energy input dimension")

    def with_log_z(self, log_z, stderr=None, absolute=True) -> "ConstrainedModel":
        return replace(self, log_z=log_z, log_z_stderr=stderr, log_z_absolute=absolute)


@dataclass
class SampleBuffer:
    """FIFO reservoir of on-manifold points for restarting chains.

    Fresh chains start from uniform noise in ``[box_lo, box_hi]`` projected
    onto the manifold.
    """

    box_lo: np.ndarray
    box_hi: np.ndarray
    capacity: int = 1000
    buffer_prob: float = 0.95
    constraint_tol: float = 1e-5
    entries: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.box_lo = np.asarray(self.box_lo, dtype=np.float64)
        self.box_hi = np.asarray(self.box_hi, dtype=np.float64)
        if not 0 <= self.buffer_prob <= 1:
            raise ValueError("buffer_prob must lie in [0, 1]")
        if self.entries is None:
            self.entries = np.zeros((0, self.box_lo.size))

    @classmethod
    def around(cls, data, inflation=0.25, **kw) -> "SampleBuffer":
        """Buffer whose noise box is the data bounding box grown by ``inflation`` per side span."""
        data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        lo, hi = data.min(axis=0), data.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        return cls(lo - 0.5 * inflation * span, hi + 0.5 * inflation * span, **kw)

    def __len__(self):
        return len(self.entries)

    def push(self, points, mdf: Optional[MdfModel] = None):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if mdf is not None and len(points):
            points = points[residual(mdf, points) < self.constraint_tol]
        self.entries = np.concatenate([self.entries, points])[-self.capacity :]


def _fresh_points(buffer: SampleBuffer, mdf: MdfModel, count: int, rng, attempts: int = 10):
    out = np.zeros((count, buffer.box_lo.size))
    todo = np.arange(count)
    for _ in range(attempts):
        if todo.size == 0:
            return out
        noise = rng.uniform(buffer.box_lo, buffer.box_hi, size=(todo.size, buffer.box_lo.size))
        proj = project_to_manifold(mdf, noise)
        good = proj.ok & (proj.residual < buffer.constraint_tol)
        out[todo[good]] = proj.x[good]
        todo = todo[~good]
    if todo.size:
        raise RuntimeError(f"could not project {todo.size} noise points onto the manifold")
    return out


def init_chain_points(buffer: SampleBuffer, mdf: MdfModel, count: int, rng, return_mask: bool = False):
    """Chain starting points: buffer draws with probability ``buffer_prob``, else projected noise."""
    if count < 1:
        raise ValueError("count must be >= 1")
    n = buffer.box_lo.size
    pts = np.zeros((count, n))
    from_buffer = rng.random(count) < buffer.buffer_prob
    if len(buffer) == 0:
        from_buffer[:] = False
    idx = np.flatnonzero(from_buffer)
    if idx.size:
        picks = buffer.entries[rng.integers(0, len(buffer), size=idx.size)]
        still_on = residual(mdf, picks) < buffer.constraint_tol
        pts[idx[still_on]] = picks[still_on]
        from_buffer[idx[~still_on]] = False
    fresh = np.flatnonzero(~from_buffer)
    if fresh.size:
        pts[fresh] = _fresh_points(buffer, mdf, fresh.size, rng)
    return (pts, from_buffer) if return_mask else pts


@dataclass(frozen=True)
class EnergyTrainConfig:
    hidden: tuple = (32, 32)
    epochs: int = 40
    rounds: Optional[tuple] = None  # ((epochs, steps), ...) overrides epochs and clmc.steps
    batch_size: int = 100
    lr: float = 0.01
    grad_clip: Optional[float] = 1.0
    energy_reg_coeff: float = 0.1
    buffer_prob: float = 0.95
    buffer_capacity: int = 1000
    box_inflation: float = 0.25
    clmc: ClmcConfig = ClmcConfig(epsilon=0.3, steps=10, grad_clamp=0.1)
    seed: int = 0

    def schedule(self):
        if self.rounds:
            return [(int(e), int(k)) for e, k in self.rounds]
        return [(self.epochs, self.clmc.steps)]


def contrastive_gradient(net: MlpModel, positives, negatives, reg_coeff: float):
    """Gradient of ``mean E(pos) - mean E(neg) + c * (mean E(pos)^2 + mean E(neg)^2)``."""
    pos = np.atleast_2d(positives)
    neg = np.atleast_2d(negatives)
    e_pos = net.forward(pos)[:, 0]
    e_neg = net.forward(neg)[:, 0]
    up_pos = ((1.0 + 2.0 * reg_coeff * e_pos) / len(pos))[:, None]
    up_neg = ((-1.0 + 2.0 * reg_coeff * e_neg) / len(neg))[:, None]
    g = param_grad(net, pos, up_pos).param_grad + param_grad(net, neg, up_neg).param_grad
    return g, e_pos, e_neg


def cd_step(model: ConstrainedModel, data_batch, cfg: EnergyTrainConfig, buffer: SampleBuffer, rng,
            clmc: Optional[ClmcConfig] = None) -> Optional[GradientBundle]:
    """Contrastive-divergence gradient for one batch.

    Negatives come from CLMC chains; valid final states are pushed into the
    buffer.  Returns ``None`` (and warns) when no chain produced a valid state.
    """
    data_batch = np.atleast_2d(np.asarray(data_batch, dtype=np.float64))
    if data_batch.shape[0] == 0:
        raise ValueError("empty batch")
    clmc = cfg.clmc if clmc is None else clmc
    x0 = init_chain_points(buffer, model.mdf, len(data_batch), rng)
    state = run_chains(model.mdf, model.energy, x0, clmc, rng=rng)
    valid = state.constraint_residual < clmc.constraint_tol
    if not valid.any():
        warnings.warn("every negative chain violated the constraint; skipping update")
        return None
    negatives = state.x[valid]
    buffer.push(negatives)
    grad, _, _ = contrastive_gradient(model.energy.net, data_batch, negatives, cfg.energy_reg_coeff)
    if cfg.grad_clip is not None:
        grad = clip_grad_norm(grad, cfg.grad_clip)
    return GradientBundle(grad)


@dataclass
class EnergyTrainLog:
    mean_pos_energy: list = field(default_factory=list)
    mean_neg_energy: list = field(default_factory=list)


def train_energy(mdf: MdfModel, data, cfg: EnergyTrainConfig, init: Optional[EnergyModel] = None,
                 train_log: Optional[EnergyTrainLog] = None) -> ConstrainedModel:
    """Fit an energy on the frozen manifold of ``mdf`` by contrastive divergence."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n = data.shape[1]
    rng = np.random.default_rng(cfg.seed)
    net = init.net if init is not None else MlpModel.init((n, *cfg.hidden, 1), rng)
    params = net.params.copy()
    state = AdamState.zeros(params.size, lr=cfg.lr)
    buffer = SampleBuffer.around(data, cfg.box_inflation, capacity=cfg.buffer_capacity,
                                 buffer_prob=cfg.buffer_prob, constraint_tol=cfg.clmc.constraint_tol)
    train_log = train_log if train_log is not None else EnergyTrainLog()
    model = ConstrainedModel(mdf, EnergyModel(net))
    epoch = 0
    for n_epochs, steps in cfg.schedule():
        clmc = replace(cfg.clmc, steps=steps)
        for _ in range(n_epochs):
            order = rng.permutation(len(data))
            for bi, start in enumerate(range(0, len(data), cfg.batch_size)):
                batch = data[order[start : start + cfg.batch_size]]
                bundle = cd_step(model, batch, cfg, buffer, rng, clmc=clmc)
                if bundle is None:
                    continue
                params, state = adam_step(state, params, bundle.param_grad)
                model = ConstrainedModel(mdf, EnergyModel(net.with_params(params)))
            e_data = model.energy.value(data)
            if not np.all(np.isfinite(e_data)) or np.max(np.abs(e_data)) > 1e6:
                raise TrainingDivergenceError(f"energies diverged at epoch {epoch}", epoch=epoch)
            e_neg = model.energy.value(buffer.entries) if len(buffer) else np.array([np.nan])
            train_log.mean_pos_energy.append(float(np.mean(e_data)))
            train_log.mean_neg_energy.append(float(np.mean(e_neg)))
            log.debug("energy epoch %d: data %.4f buffer %.4f", epoch,
                      train_log.mean_pos_energy[-1], train_log.mean_neg_energy[-1])
            epoch += 1
    return model


def jackknife_log_mean_exp(u, log_volume: float = 0.0):
    """``log_volume + log mean exp(u)`` and its jackknife standard error."""
    u = np.asarray(u, dtype=np.float64)
    n = u.size
    if n < 2:
        raise ValueError("need at least two samples")
    estimate = log_volume + logsumexp(u) - np.log(n)
    shift = np.max(u)
    w = np.exp(u - shift)
    total = w.sum()
    with np.errstate(divide="ignore"):
        loo = log_volume + shift + np.log(np.maximum(total - w, 0.0) / (n - 1))
    loo = loo[np.isfinite(loo)]
    if len(loo) < 2:
        return float(estimate), float("inf")
    stderr = np.sqrt((len(loo) - 1) / len(loo) * np.sum((loo - loo.mean()) ** 2))
    return float(estimate), float(stderr)


def estimate_log_z(model: ConstrainedModel, manifold_samples, manifold_volume: float):
    """Monte Carlo ``log Z`` from uniform manifold samples, with a jackknife standard error."""
    if manifold_volume <= 0:
        raise ValueError("manifold volume must be positive")
    x = np.atleast_2d(np.asarray(manifold_samples, dtype=np.float64))
    return jackknife_log_mean_exp(-model.energy.value(x), np.log(manifold_volume))


def normalize(model: ConstrainedModel, manifold_samples, manifold_volume: Optional[float]) -> ConstrainedModel:
    """Attach a ``log Z`` estimate.  Without a volume, Z is relative (log-volume unknown)."""
    absolute = manifold_volume is not None
    log_z, se = estimate_log_z(model, manifold_samples, manifold_volume if absolute else 1.0)
    return model.with_log_z(log_z, se, absolute)


def log_density(model: ConstrainedModel, x, constraint_tol: float = 1e-5):
    """``-E(x) - log Z`` for points on the model manifold."""
    if model.log_z is None:
        raise ValueError("model has no log normalizer; estimate it first")
    res = residual(model.mdf, x)
    if np.any(~(res < constraint_tol)):
        raise OffManifoldError("log_density queried off the model manifold")
    return -model.energy.value(x) - model.log_z
