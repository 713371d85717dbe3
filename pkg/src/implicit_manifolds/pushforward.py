"""Two-step pushforward baseline: autoencoder plus a latent-space EBM.

Densities on the data manifold follow from the change of variables through
the decoder, ``log p(x) = log p(z) - 0.5 * log det(J_f(z)^T J_f(z))`` with
``z = g(x)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cebm import EnergyModel, contrastive_gradient, jackknife_log_mean_exp
from .errors import TrainingDivergenceError
from .netcore import MlpModel, param_grad
from .solvers import AdamState, adam_step, clip_grad_norm

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PushforwardModel:
    encoder: MlpModel
    decoder: MlpModel
    latent_energy: EnergyModel
    latent_log_z: Optional[float] = None
    latent_log_z_stderr: Optional[float] = None
    latent_box: tuple = ((-4.0,), (4.0,))

    def __post_init__(self):
        if self.encoder.out_dim != self.decoder.in_dim or self.decoder.out_dim != self.encoder.in_dim:
            raise ValueError("encoder and decoder dimensions are inconsistent")
        if self.latent_energy.in_dim != self.encoder.out_dim:
            raise ValueError("latent energy must act on the latent space")


@dataclass(frozen=True)
class AutoencoderConfig:
    latent_dim: int = 1
    hidden: tuple = (32, 32, 32)
    epochs: int = 300
    batch_size: int = 100
    lr: float = 1e-3
    grad_clip: Optional[float] = 1.0
    seed: int = 0


@dataclass(frozen=True)
class LatentEbmConfig:
    hidden: tuple = (32, 32, 32)
    epochs: int = 200
    batch_size: int = 100
    lr: float = 0.01
    grad_clip: Optional[float] = 1.0
    energy_reg_coeff: float = 0.1
    steps: int = 60
    epsilon: float = 0.5
    drift_scale: float = 1.0
    grad_clamp: float = 0.03
    buffer_prob: float = 0.95
    buffer_capacity: int = 1000
    # None derives the box from the encoded data, inflated like the ambient chain box
    box: Optional[tuple] = None
    box_inflation: float = 0.25
    seed: int = 0


def reconstruction_loss(encoder: MlpModel, decoder: MlpModel, x):
    """Mean squared reconstruction error and the gradient w.r.t. ``(encoder, decoder)`` params."""
    x = np.atleast_2d(x)
    z = encoder.forward(x)
    diff = decoder.forward(z) - x
    nb = len(x)
    value = float(np.mean(np.einsum("ij,ij->i", diff, diff)))
    dec = param_grad(decoder, z, 2.0 * diff / nb)
    enc = param_grad(encoder, x, dec.input_grad)
    return value, np.concatenate([enc.param_grad, dec.param_grad])


def train_autoencoder(data, cfg: AutoencoderConfig, init=None):
    """Joint Adam on the reconstruction loss; returns ``(encoder, decoder)``."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n = data.shape[1]
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        encoder = MlpModel.init((n, *cfg.hidden, cfg.latent_dim), rng)
        decoder = MlpModel.init((cfg.latent_dim, *cfg.hidden, n), rng)
    else:
        encoder, decoder = init
    split = encoder.params.size
    params = np.concatenate([encoder.params, decoder.params])
    state = AdamState.zeros(params.size, lr=cfg.lr)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), cfg.batch_size):
            batch = data[order[start : start + cfg.batch_size]]
            value, grad = reconstruction_loss(encoder, decoder, batch)
            if not np.isfinite(value):
                raise TrainingDivergenceError(f"reconstruction loss diverged at epoch {epoch}", epoch=epoch)
            if cfg.grad_clip is not None:
                grad = clip_grad_norm(grad, cfg.grad_clip)
            params, state = adam_step(state, params, grad)
            encoder = encoder.with_params(params[:split])
            decoder = decoder.with_params(params[split:])
    return encoder, decoder


def latent_box(codes, cfg: LatentEbmConfig):
    """``(lo, hi)`` arrays bounding the latent chains."""
    codes = np.atleast_2d(codes)
    m = codes.shape[1]
    if cfg.box is not None:
        lo, hi = cfg.box
        return np.full(m, float(lo)), np.full(m, float(hi))
    lo, hi = codes.min(axis=0), codes.max(axis=0)
    pad = cfg.box_inflation * (hi - lo) / 2
    return lo - pad, hi + pad


def langevin_chains(energy: EnergyModel, z0, cfg: LatentEbmConfig, rng, box):
    """Unconstrained Langevin ``z <- z - s (eps^2/2) clamp(grad E) + eps N(0, I)``, kept inside the box."""
    z = np.array(z0, dtype=np.float64, ndmin=2)
    lo, hi = box
    c = cfg.drift_scale * 0.5 * cfg.epsilon**2
    for _ in range(cfg.steps):
        g = np.clip(energy.grad(z), -cfg.grad_clamp, cfg.grad_clamp)
        z = z - c * g + cfg.epsilon * rng.standard_normal(z.shape)
        np.clip(z, lo, hi, out=z)
    return z


@dataclass
class LatentTrainLog:
    mean_pos_energy: list = field(default_factory=list)
    mean_neg_energy: list = field(default_factory=list)


def train_latent_ebm(encoder: MlpModel, data, cfg: LatentEbmConfig,
                     train_log: Optional[LatentTrainLog] = None) -> EnergyModel:
    """Contrastive divergence on the encoded data with a persistent buffer."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    codes = encoder.forward(data)
    m = codes.shape[1]
    rng = np.random.default_rng(cfg.seed)
    net = MlpModel.init((m, *cfg.hidden, 1), rng)
    params = net.params.copy()
    state = AdamState.zeros(params.size, lr=cfg.lr)
    lo, hi = latent_box(codes, cfg)
    buffer = np.zeros((0, m))
    energy = EnergyModel(net)
    train_log = train_log if train_log is not None else LatentTrainLog()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(codes))
        for start in range(0, len(codes), cfg.batch_size):
            batch = codes[order[start : start + cfg.batch_size]]
            nb = len(batch)
            z0 = rng.uniform(lo, hi, size=(nb, m))
            use = rng.random(nb) < cfg.buffer_prob
            if len(buffer) and use.any():
                z0[use] = buffer[rng.integers(0, len(buffer), size=int(use.sum()))]
            neg = langevin_chains(energy, z0, cfg, rng, (lo, hi))
            buffer = np.concatenate([buffer, neg])[-cfg.buffer_capacity :]
            grad, _, _ = contrastive_gradient(energy.net, batch, neg, cfg.energy_reg_coeff)
            if cfg.grad_clip is not None:
                grad = clip_grad_norm(grad, cfg.grad_clip)
            params, state = adam_step(state, params, grad)
            energy = EnergyModel(net.with_params(params))
        e = energy.value(codes)
        if not np.all(np.isfinite(e)) or np.max(np.abs(e)) > 1e6:
            raise TrainingDivergenceError(f"latent energies diverged at epoch {epoch}", epoch=epoch)
        train_log.mean_pos_energy.append(float(np.mean(e)))
        train_log.mean_neg_energy.append(float(np.mean(energy.value(buffer))))
    return energy


def estimate_latent_log_z(energy: EnergyModel, box, n_samples: int, rng):
    """Monte Carlo ``log Z`` of ``exp(-E)`` over the latent box, with a jackknife error."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in box)
    z = rng.uniform(lo, hi, size=(n_samples, lo.size))
    return jackknife_log_mean_exp(-energy.value(z), float(np.sum(np.log(hi - lo))))


def fit_pushforward(data, ae_cfg: AutoencoderConfig, ebm_cfg: LatentEbmConfig, n_norm: int = 100_000) -> PushforwardModel:
    """Autoencoder, then latent EBM, then latent normalisation."""
    encoder, decoder = train_autoencoder(data, ae_cfg)
    energy = train_latent_ebm(encoder, data, ebm_cfg)
    lo, hi = latent_box(encoder.forward(np.atleast_2d(data)), ebm_cfg)
    box = (tuple(lo.tolist()), tuple(hi.tolist()))
    log_z, se = estimate_latent_log_z(energy, box, n_norm, np.random.default_rng(ebm_cfg.seed + 1))
    return PushforwardModel(encoder, decoder, energy, log_z, se, box)


def decoder_gram(decoder: MlpModel, z):
    """``J_f(z)^T J_f(z)`` per row, assembled from one JVP per latent direction."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    m = z.shape[1]
    cols = [decoder.jvp(z, np.broadcast_to(np.eye(m)[i], z.shape)) for i in range(m)]
    jac = np.stack(cols, axis=2)  # (B, n, m)
    return np.einsum("bni,bnj->bij", jac, jac)


def pushforward_log_density(model: PushforwardModel, x):
    """Change-of-variables log density at ambient point(s) ``x``."""
    if model.latent_log_z is None:
        raise ValueError("latent log normaliser missing; run estimate_latent_log_z first")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    z = model.encoder.forward(xb)
    det = np.linalg.det(decoder_gram(model.decoder, z))
    bad = ~(det > 0)
    if bad.any():
        warnings.warn(f"{int(bad.sum())} singular decoder Gram matrices; density set to -inf")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -model.latent_energy.value(z) - model.latent_log_z - 0.5 * np.log(np.where(bad, 1.0, det))
    out = np.where(bad, -np.inf, out)
    return float(out[0]) if single else out
