"""Optimisation and linear-algebra kernels.

The conjugate-gradient and L-BFGS routines are written for a *batch* of
independent problems advanced in lock step, because the samplers solve one
tiny system per chain and the chains are many.  ``cg_solve`` and
``lbfgs_minimize`` are the single-problem front ends.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConvergenceWarning, SingularSystemError, TrainingDivergenceError


# ---------------------------------------------------------------------------
# Adam and clipping


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, lr, **kw)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ValueError("params, grads and Adam moments must have equal length")
    if not np.all(np.isfinite(grads)):
        raise TrainingDivergenceError("non-finite gradient passed to Adam")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, first_moment=m, second_moment=v, step_count=t)


def clip_grad_norm(grads, max_norm: float):
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    grads = np.asarray(grads, dtype=np.float64)
    norm = np.linalg.norm(grads)
    if norm > max_norm:
        return grads * (max_norm / norm)
    return grads


# ---------------------------------------------------------------------------
# Conjugate gradients


class CgResult(NamedTuple):
    x: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    singular: np.ndarray


def cg_solve_batch(apply, b, tol=1e-6, max_iters=None, breakdown_tol=1e-20) -> CgResult:
    """Solve ``A_i x_i = b_i`` for every row of ``b``.

    ``apply`` maps a ``(B, d)`` array of directions to ``(B, d)`` products;
    row ``i`` of the output must only depend on row ``i`` of the input.  A
    row whose curvature ``p^T A p`` falls below ``breakdown_tol * |p|^2`` is
    marked singular and frozen.
    """
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    nb, d = b.shape
    max_iters = 10 * d if max_iters is None else max_iters
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = np.einsum("ij,ij->i", r, r)
    bnorm = np.sqrt(rs)
    target = tol * bnorm
    done = np.sqrt(rs) <= target
    singular = np.zeros(nb, dtype=bool)
    iters = np.zeros(nb, dtype=int)
    for _ in range(max_iters):
        active = ~(done | singular)
        if not active.any():
            break
        ap = apply(p)
        pap = np.einsum("ij,ij->i", p, ap)
        pp = np.einsum("ij,ij->i", p, p)
        broke = active & ~(pap > breakdown_tol * pp)
        singular |= broke
        active &= ~broke
        alpha = np.where(active, rs / np.where(active, pap, 1.0), 0.0)
        x += alpha[:, None] * p
        r -= alpha[:, None] * ap
        rs_new = np.einsum("ij,ij->i", r, r)
        iters += active
        done |= active & (np.sqrt(rs_new) <= target)
        beta = np.where(active, rs_new / np.where(active, rs, 1.0), 0.0)
        p = np.where(active[:, None], r + beta[:, None] * p, p)
        rs = np.where(active, rs_new, rs)
    return CgResult(x, iters, done, singular)


def cg_solve(apply: Callable, b, tol: float = 1e-6, max_iters=None):
    """Matrix-free CG for one SPD system ``A x = b``.

    Raises :class:`SingularSystemError` on breakdown and warns with
    :class:`ConvergenceWarning` if ``max_iters`` is exhausted (the last
    iterate is returned).
    """
    b = np.asarray(b, dtype=np.float64)
    res = cg_solve_batch(lambda p: np.atleast_2d(apply(p[0])), b[None], tol, max_iters)
    if res.singular[0]:
        raise SingularSystemError("conjugate gradients broke down: zero curvature direction")
    if not res.converged[0]:
        warnings.warn(f"CG stopped after {res.iterations[0]} iterations", ConvergenceWarning)
    return res.x[0]


# ---------------------------------------------------------------------------
# L-BFGS with strong Wolfe line search


@dataclass(frozen=True)
class LbfgsConfig:
    history_size: int = 10
    max_iters: int = 100
    grad_tol: float = 1e-10
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    f_tol: float = 0.0  # also stop once the objective drops to this value
    max_ls: int = 25
    step_tol: float = 1e-14  # relative step size below which progress is considered stalled

    def __post_init__(self):
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.history_size < 1 or self.max_iters < 0:
            raise ValueError("history_size must be >= 1 and max_iters >= 0")


class LbfgsResult(NamedTuple):
    x: np.ndarray
    value: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray


def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    """Minimiser of the cubic through two points with slopes, clipped to [lo, hi]."""
    with np.errstate(all="ignore"):
        d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
        d2sq = d1 * d1 - g1 * g2
        d2 = np.sqrt(np.maximum(d2sq, 0.0))
        left = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        right = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        t = np.where(x1 <= x2, left, right)
    ok = (d2sq >= 0) & np.isfinite(t)
    return np.where(ok, np.clip(t, lo, hi), 0.5 * (lo + hi))


def _dot(a, b):
    return np.einsum("ij,ij->i", a, b)


def _strong_wolfe(fun, idx, x, f0, g0, d, gtd0, t_init, cfg):
    """Vectorised strong Wolfe search along rows of ``d``.

    Returns ``(t, f, g, ok)``; ``ok`` is False where no point with sufficient
    decrease was found (``t`` is then 0).  Non-finite trial values count as
    sufficient-decrease failures, which shrinks the bracket.
    """
    c1, c2 = cfg.wolfe_c1, cfg.wolfe_c2
    k, dim = x.shape
    dmax = np.abs(d).max(axis=1)

    t = t_init.copy()
    t_prev = np.zeros(k)
    f_prev, g_prev, gtd_prev = f0.copy(), g0.copy(), gtd0.copy()
    zoom = np.zeros(k, dtype=bool)
    done = np.zeros(k, dtype=bool)
    lo_t, lo_f, lo_g, lo_gtd = np.zeros(k), f0.copy(), g0.copy(), gtd0.copy()
    hi_t, hi_f, hi_gtd = np.zeros(k), f0.copy(), gtd0.copy()
    out_t, out_f, out_g = np.zeros(k), f0.copy(), g0.copy()

    for it in range(cfg.max_ls):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        zi = act[zoom[act]]
        if zi.size:
            a, b = np.minimum(lo_t[zi], hi_t[zi]), np.maximum(lo_t[zi], hi_t[zi])
            width = b - a
            trial = _cubic_min(lo_t[zi], lo_f[zi], lo_gtd[zi], hi_t[zi], hi_f[zi], hi_gtd[zi], a, b)
            trial = np.where(np.isfinite(hi_f[zi]), trial, 0.5 * (a + b))
            t[zi] = np.clip(trial, a + 0.1 * width, b - 0.1 * width)

        ft, gt = fun(x[act] + t[act, None] * d[act], idx[act])
        ft = np.asarray(ft, dtype=np.float64)
        gtd = _dot(gt, d[act])
        bad = ~(np.isfinite(ft) & np.isfinite(gtd))
        armijo = ~bad & (ft <= f0[act] + c1 * t[act] * gtd0[act])
        curvature = np.abs(gtd) <= -c2 * gtd0[act]

        # bracketing phase
        br = ~zoom[act]
        worse = br & (~armijo | ((t_prev[act] > 0) & (ft >= f_prev[act])))
        accept = br & ~worse & curvature
        flip = br & ~worse & ~curvature & (gtd >= 0)
        extend = br & ~worse & ~curvature & ~flip

        rows = act[worse]
        lo_t[rows], lo_f[rows], lo_g[rows], lo_gtd[rows] = (
            t_prev[rows], f_prev[rows], g_prev[rows], gtd_prev[rows])
        hi_t[rows], hi_f[rows], hi_gtd[rows] = t[rows], ft[worse], gtd[worse]
        zoom[rows] = True

        rows = act[flip]
        lo_t[rows], lo_f[rows], lo_g[rows], lo_gtd[rows] = t[rows], ft[flip], gt[flip], gtd[flip]
        hi_t[rows], hi_f[rows], hi_gtd[rows] = t_prev[rows], f_prev[rows], gtd_prev[rows]
        zoom[rows] = True

        rows = act[extend]
        if rows.size:
            cur = t[rows]
            lo_b = cur + 0.01 * (cur - t_prev[rows])
            nxt = _cubic_min(t_prev[rows], f_prev[rows], gtd_prev[rows],
                             cur, ft[extend], gtd[extend], lo_b, 10.0 * cur)
            t_prev[rows], f_prev[rows], g_prev[rows], gtd_prev[rows] = cur, ft[extend], gt[extend], gtd[extend]
            t[rows] = nxt

        # zoom phase (rows that were already zooming before this evaluation)
        zm = ~br
        shrink_hi = zm & (~armijo | (ft >= lo_f[act]))
        zaccept = zm & ~shrink_hi & curvature
        move_lo = zm & ~shrink_hi & ~curvature
        rows = act[shrink_hi]
        hi_t[rows], hi_f[rows], hi_gtd[rows] = t[rows], ft[shrink_hi], gtd[shrink_hi]
        rows = act[move_lo]
        swap = move_lo[move_lo] & (gtd[move_lo] * (hi_t[rows] - lo_t[rows]) >= 0)
        sw = rows[swap]
        hi_t[sw], hi_f[sw], hi_gtd[sw] = lo_t[sw], lo_f[sw], lo_gtd[sw]
        lo_t[rows], lo_f[rows], lo_g[rows], lo_gtd[rows] = (
            t[rows], ft[move_lo], gt[move_lo], gtd[move_lo])

        acc = accept | zaccept
        rows = act[acc]
        out_t[rows], out_f[rows], out_g[rows] = t[rows], ft[acc], gt[acc]
        done[rows] = True

        # a collapsed bracket ends the search at its best end
        stalled = act[~acc & zoom[act]]
        tiny = np.abs(hi_t[stalled] - lo_t[stalled]) * dmax[stalled] < 1e-16 * (
            1.0 + np.abs(x[stalled]).max(axis=1))
        rows = stalled[tiny]
        out_t[rows], out_f[rows], out_g[rows] = lo_t[rows], lo_f[rows], lo_g[rows]
        done[rows] = True

    rest = np.flatnonzero(~done)
    if rest.size:
        z = rest[zoom[rest]]
        out_t[z], out_f[z], out_g[z] = lo_t[z], lo_f[z], lo_g[z]
        b = rest[~zoom[rest]]
        # bracketing ran out of evaluations: t_prev is the last point that passed Armijo
        out_t[b], out_f[b], out_g[b] = t_prev[b], f_prev[b], g_prev[b]
    ok = out_t > 0
    return out_t, out_f, out_g, ok


def _two_loop(g, S, Y, rho, valid):
    """L-BFGS two-loop recursion; history slot -1 is the newest."""
    q = g.copy()
    h = S.shape[1]
    alphas = np.zeros((g.shape[0], h))
    for j in range(h - 1, -1, -1):
        a = np.where(valid[:, j], rho[:, j] * _dot(S[:, j], q), 0.0)
        alphas[:, j] = a
        q -= a[:, None] * Y[:, j]
    ys = _dot(Y[:, -1], S[:, -1])
    yy = _dot(Y[:, -1], Y[:, -1])
    gamma = np.where(valid[:, -1], ys / np.where(valid[:, -1], yy, 1.0), 1.0)
    r = gamma[:, None] * q
    for j in range(h):
        beta = np.where(valid[:, j], rho[:, j] * _dot(Y[:, j], r), 0.0)
        r += (alphas[:, j] - beta)[:, None] * S[:, j]
    return r


def lbfgs_minimize_batch(fun, x0, cfg: LbfgsConfig = LbfgsConfig()) -> LbfgsResult:
    """Minimise a batch of independent objectives with L-BFGS.

    ``fun(x, idx)`` receives the current points ``x`` of shape ``(k, d)`` for
    the problems listed in ``idx`` and returns ``(values (k,), grads (k, d))``.
    """
    x = np.array(x0, dtype=np.float64, ndmin=2)
    nb, dim = x.shape
    all_idx = np.arange(nb)
    f, g = fun(x, all_idx)
    f = np.asarray(f, dtype=np.float64).copy()
    g = np.asarray(g, dtype=np.float64).copy()
    h = cfg.history_size
    S = np.zeros((nb, h, dim))
    Y = np.zeros((nb, h, dim))
    rho = np.zeros((nb, h))
    valid = np.zeros((nb, h), dtype=bool)
    iters = np.zeros(nb, dtype=int)

    def is_converged(fv, gv):
        return (np.abs(gv).max(axis=1) <= cfg.grad_tol) | (fv <= cfg.f_tol)

    finite = np.isfinite(f) & np.all(np.isfinite(g), axis=1)
    converged = finite & is_converged(f, g)
    done = converged | ~finite

    for _ in range(cfg.max_iters):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        ga = g[act]
        d = -_two_loop(ga, S[act], Y[act], rho[act], valid[act])
        gtd = _dot(ga, d)
        reset = ~(gtd < 0) | ~np.all(np.isfinite(d), axis=1)
        if reset.any():
            rr = act[reset]
            valid[rr] = False
            d[reset] = -ga[reset]
            gtd[reset] = -_dot(ga[reset], ga[reset])
        fresh = ~valid[act, -1]
        t0 = np.where(fresh, np.minimum(1.0, 1.0 / np.maximum(np.abs(ga).sum(axis=1), 1e-300)), 1.0)

        t, fn, gn, ok = _strong_wolfe(fun, all_idx[act], x[act], f[act], ga, d, gtd, t0, cfg)

        s = t[:, None] * d
        y = gn - ga
        rows = act[ok]
        x_old_scale = 1.0 + np.abs(x[rows]).max(axis=1)
        x[rows] += s[ok]
        f_old = f[rows]
        f[rows] = fn[ok]
        g[rows] = gn[ok]
        iters[rows] += 1

        ys = _dot(y, s)
        upd = ok & (ys > 1e-12 * np.linalg.norm(y, axis=1) * np.linalg.norm(s, axis=1)) & (ys > 0)
        ur = act[upd]
        if ur.size:
            S[ur, :-1] = S[ur, 1:]
            Y[ur, :-1] = Y[ur, 1:]
            rho[ur, :-1] = rho[ur, 1:]
            valid[ur, :-1] = valid[ur, 1:]
            S[ur, -1] = s[upd]
            Y[ur, -1] = y[upd]
            rho[ur, -1] = 1.0 / ys[upd]
            valid[ur, -1] = True

        now_conv = is_converged(f[act], g[act])
        converged[act] = now_conv
        stalled = np.zeros(act.size, dtype=bool)
        stalled[ok] = np.abs(s[ok]).max(axis=1) <= cfg.step_tol * x_old_scale
        stalled[ok] |= (f_old - fn[ok]) <= 1e-15 * np.maximum(np.abs(f_old), 1e-300)
        done[act] = now_conv | ~ok | stalled
    return LbfgsResult(x, f, converged, iters)


def lbfgs_minimize(objective: Callable, x0, cfg: LbfgsConfig = LbfgsConfig()):
    """Minimise ``objective(x) -> (value, gradient)`` from ``x0``.

    Returns ``(x_star, value, converged)``.
    """
    def fun(xb, idx):
        vals, grads = [], []
        for row in xb:
            v, gr = objective(row)
            vals.append(v)
            grads.append(np.asarray(gr, dtype=np.float64))
        return np.array(vals, dtype=np.float64), np.array(grads)

    res = lbfgs_minimize_batch(fun, np.asarray(x0, dtype=np.float64)[None], cfg)
    return res.x[0], float(res.value[0]), bool(res.converged[0])
