"""Constrained Langevin Monte Carlo on an implicit manifold.

One iteration draws ambient Gaussian momentum, projects it onto the tangent
space ``ker J_F(x)`` and takes a constrained leapfrog step whose Lagrange
multipliers are found by L-BFGS, so the new point lands back on ``F = 0``.
There is no accept/reject step.

All routines work on a batch of chains at once; each chain only ever reads
its own row, so a batch is just many independent chains advanced together.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import OffManifoldError, RankDeficiencyError
from .mdf import MdfModel, residual
from .solvers import LbfgsConfig, cg_solve_batch, lbfgs_minimize_batch

DEFAULT_LAGRANGE = LbfgsConfig(max_iters=20, grad_tol=1e-14, f_tol=1e-24)


@dataclass(frozen=True)
class ClmcConfig:
    epsilon: float = 0.1
    steps: int = 10
    grad_clamp: float = np.inf
    lagrange_cfg: LbfgsConfig = DEFAULT_LAGRANGE
    constraint_tol: float = 1e-5
    seed: int = 0
    drift_scale: float = 1.0
    cg_tol: float = 1e-10
    max_retries: int = 3

    def __post_init__(self):
        if self.epsilon <= 0 or self.steps < 0 or self.grad_clamp <= 0:
            raise ValueError("need epsilon > 0, steps >= 0 and grad_clamp > 0")


@dataclass
class ChainState:
    """Position and diagnostics; array fields carry a leading chain axis for batches."""

    x: np.ndarray
    constraint_residual: object
    lagrange_iters: object = 0
    cg_iters: object = 0
    failures: object = 0
    trace: Optional[list] = field(default=None, repr=False)


def _tangent_batch(mdf: MdfModel, x, r_raw, cg_tol):
    a = mdf.jvp(x, r_raw)
    res = cg_solve_batch(lambda v: mdf.jvp(x, mdf.vjp(x, v)), a, tol=cg_tol, max_iters=10 * a.shape[1])
    r = r_raw - mdf.vjp(x, res.x)
    # a vanishing Jacobian row gives a zero right-hand side, which CG never flags
    k = a.shape[1]
    rows = np.stack([np.linalg.norm(mdf.vjp(x, np.broadcast_to(np.eye(k)[i], a.shape)), axis=1)
                     for i in range(k)], axis=1)
    singular = res.singular | np.any(rows <= 1e-12, axis=1)
    return r, res.iterations, singular


def tangent_project(mdf: MdfModel, x, r_raw, cg_tol: float = 1e-10):
    """Remove the component of ``r_raw`` normal to the manifold at ``x``.

    Uses ``r = r' - J^T (J J^T)^{-1} J r'`` with the inverse applied by CG on
    ``v -> J (J^T v)`` (a reverse then a forward pass).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb, rb = np.atleast_2d(x), np.atleast_2d(np.asarray(r_raw, dtype=np.float64))
    r, _, singular = _tangent_batch(mdf, xb, rb, cg_tol)
    if singular.any():
        raise RankDeficiencyError("constraint Jacobian is rank deficient at the given point")
    return r[0] if single else r


def _energy_grad(energy, x, clamp):
    g = energy.grad(x)
    return np.clip(g, -clamp, clamp) if np.isfinite(clamp) else g


def _solve_positions(mdf, x, base, c, cfg):
    """Solve for the multipliers of each row and return the resulting positions."""

    def fun(lam, idx):
        xi = x[idx]
        y = base[idx] - c[idx, None] * mdf.vjp(xi, lam)
        fy = mdf.forward(y)
        grad = -2.0 * c[idx, None] * mdf.jvp(xi, mdf.vjp(y, fy))
        return np.einsum("ij,ij->i", fy, fy), grad

    lam0 = np.zeros((x.shape[0], mdf.codim))
    res = lbfgs_minimize_batch(fun, lam0, cfg.lagrange_cfg)
    x_new = base - c[:, None] * mdf.vjp(x, res.x)
    return x_new, res.iterations


def _leapfrog_batch(mdf, energy, x, r, cfg: ClmcConfig):
    """Constrained leapfrog for every row, halving the step on failure.

    Returns ``(x_new, residual, lagrange_iters, failed)``; failed rows keep
    their old position.
    """
    nb = x.shape[0]
    grad = _energy_grad(energy, x, cfg.grad_clamp)
    eps = np.full(nb, float(cfg.epsilon))
    x_out = x.copy()
    resid = residual(mdf, x)
    iters = np.zeros(nb, dtype=int)
    pending = np.arange(nb)
    for _ in range(cfg.max_retries + 1):
        e = eps[pending]
        c = 0.5 * e * e
        xp = x[pending]
        base = xp + e[:, None] * r[pending] - (cfg.drift_scale * c)[:, None] * grad[pending]
        x_new, it = _solve_positions(mdf, xp, base, c, cfg)
        iters[pending] += it
        res_new = residual(mdf, x_new)
        good = np.isfinite(res_new) & (res_new < cfg.constraint_tol)
        acc = pending[good]
        x_out[acc] = x_new[good]
        resid[acc] = res_new[good]
        pending = pending[~good]
        if pending.size == 0:
            break
        eps[pending] *= 0.5
    failed = np.zeros(nb, dtype=bool)
    failed[pending] = True
    return x_out, resid, iters, failed


def constrained_leapfrog(mdf: MdfModel, energy, x, r, cfg: ClmcConfig) -> ChainState:
    """One constrained position update from ``x`` with tangent momentum ``r``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb, rb = np.atleast_2d(x), np.atleast_2d(np.asarray(r, dtype=np.float64))
    x_new, resid, iters, failed = _leapfrog_batch(mdf, energy, xb, rb, cfg)
    if single:
        return ChainState(x_new[0], float(resid[0]), int(iters[0]), 0, int(failed[0]))
    return ChainState(x_new, resid, iters, np.zeros(len(xb), dtype=int), failed.astype(int))


def run_chains(mdf: MdfModel, energy, x0, cfg: ClmcConfig, rng: Optional[np.random.Generator] = None,
               trace: bool = False) -> ChainState:
    """Advance every row of ``x0`` by ``cfg.steps`` CLMC iterations.

    Without ``rng`` chain ``i`` draws its momenta from its own generator
    seeded with ``cfg.seed + i``; with ``rng`` all momenta come from it.
    Chains that hit a rank-deficient Jacobian or exhaust their step retries
    stay put for that iteration and record a failure.
    """
    x = np.array(x0, dtype=np.float64, ndmin=2)
    nc, n = x.shape
    start = residual(mdf, x)
    if np.any(~(start < cfg.constraint_tol)):
        raise OffManifoldError(
            f"{int(np.sum(~(start < cfg.constraint_tol)))} starting points violate the constraint tolerance")
    if rng is None:
        noise = np.stack([np.random.default_rng(cfg.seed + i).standard_normal((cfg.steps, n))
                          for i in range(nc)], axis=1) if nc else np.zeros((cfg.steps, 0, n))
    else:
        noise = rng.standard_normal((cfg.steps, nc, n))
    resid = start
    lag = np.zeros(nc, dtype=int)
    cgi = np.zeros(nc, dtype=int)
    fails = np.zeros(nc, dtype=int)
    rows = [] if trace else None
    if trace:
        rows.extend((0, i, x[i].copy(), resid[i]) for i in range(nc))
    for step in range(cfg.steps):
        r, it, singular = _tangent_batch(mdf, x, noise[step], cfg.cg_tol)
        cgi += it
        ok = np.flatnonzero(~singular)
        fails[singular] += 1
        if ok.size:
            x_new, res_new, li, failed = _leapfrog_batch(mdf, energy, x[ok], r[ok], cfg)
            x[ok] = x_new
            resid[ok] = res_new
            lag[ok] += li
            fails[ok] += failed
        if trace:
            rows.extend((step + 1, i, x[i].copy(), resid[i]) for i in range(nc))
    return ChainState(x, resid, lag, cgi, fails, rows)


def clmc_run(mdf: MdfModel, energy, x0, cfg: ClmcConfig, rng: np.random.Generator) -> ChainState:
    """A single chain of ``cfg.steps`` iterations from ``x0``."""
    x0 = np.asarray(x0, dtype=np.float64)
    st = run_chains(mdf, energy, x0[None], cfg, rng=rng)
    return ChainState(st.x[0], float(st.constraint_residual[0]), int(st.lagrange_iters[0]),
                      int(st.cg_iters[0]), int(st.failures[0]))


def write_trace(path, state: ChainState):
    """Write ``step, chain, x0..x{n-1}, residual`` rows from a traced run."""
    n = state.x.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "chain", *[f"x{i}" for i in range(n)], "residual"])
        for step, chain, x, res in state.trace:
            w.writerow([step, chain, *map(repr, map(float, x)), repr(float(res))])
