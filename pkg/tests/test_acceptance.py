"""End-to-end acceptance checks, one test per criterion.

A summary line per criterion is printed at the end of the pytest run.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy.stats import chisquare, vonmises

from conftest import central_diff, rel_err
from implicit_manifolds.analytic import SphereMap, TorusMap
from implicit_manifolds.cebm import (ConstrainedModel, EnergyModel, EnergyTrainConfig, SampleBuffer,
                                     estimate_log_z, init_chain_points, log_density, normalize, train_energy)
from implicit_manifolds.cli import main
from implicit_manifolds.clmc import ClmcConfig, run_chains
from implicit_manifolds.compose import intersect, union
from implicit_manifolds.data import GroundTruth, gen_von_mises_circle, gen_von_mises_mixture
from implicit_manifolds.mdf import (MdfModel, MdfTrainConfig, loss_and_grad, mean_direction_gain, residual,
                                    train_mdf)
from implicit_manifolds.netcore import MlpModel, param_grad
from implicit_manifolds.pushforward import (AutoencoderConfig, LatentEbmConfig, PushforwardModel, decoder_gram,
                                            estimate_latent_log_z, fit_pushforward, pushforward_log_density)
from implicit_manifolds.solvers import LbfgsConfig, cg_solve, lbfgs_minimize

pytestmark = pytest.mark.slow

VON_MISES_EPS = 0.3
# unit step size on the drift term relative to the eps^2 / 2 baseline
VON_MISES_DRIFT = 1.0 / VON_MISES_EPS**2


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def random_net(rng, widths):
    net = MlpModel.init(widths, rng)
    return net.with_params(net.params + 0.3 * rng.standard_normal(net.params.size))


def test_criterion_1_gradients():
    rng = np.random.default_rng(1)
    with Timer() as t:
        for _ in range(20):
            n = int(rng.integers(2, 5))
            k = int(rng.integers(1, n))
            net = random_net(rng, (n, int(rng.integers(2, 7)), int(rng.integers(2, 7)), k))
            x, u, v = rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(k)
            J = central_diff(net.forward, x)
            assert rel_err(net.jvp(x, u), J @ u) < 1e-3
            assert rel_err(net.vjp(x, v), J.T @ v) < 1e-3
            pg = param_grad(net, x, v).param_grad
            fd = central_diff(lambda p: v @ net.with_params(p).forward(x), net.params)[0]
            assert rel_err(pg, fd) < 1e-3
            xb = rng.standard_normal((4, n))
            dirs = rng.standard_normal((4, k))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            _, g = loss_and_grad(net, xb, dirs, 1.0, 1.0)
            fd = central_diff(lambda p: loss_and_grad(net.with_params(p), xb, dirs, 1.0, 1.0)[0], net.params)[0]
            assert rel_err(g, fd) < 1e-3
    assert t.elapsed <= 2.0


def test_criterion_2_solvers():
    rng = np.random.default_rng(2)
    for d in range(1, 9):
        a = rng.standard_normal((d, d))
        A = a @ a.T + d * np.eye(d)
        b = rng.standard_normal(d)
        x = cg_solve(lambda p: A @ p, b, tol=1e-12)
        assert np.max(np.abs(x - np.linalg.solve(A, b))) < 1e-8

    def rosen(x):
        f = (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
        g = np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])
        return f, g

    with Timer() as t:
        x, _, _ = lbfgs_minimize(rosen, np.array([-1.2, 1.0]), LbfgsConfig(max_iters=200, grad_tol=1e-12))
    assert np.max(np.abs(x - 1.0)) < 1e-5
    assert t.elapsed < 1.0


@pytest.mark.parametrize("shape", ["circle", "sphere", "torus"])
def test_criterion_3_manifold_adherence(shape):
    truth, net, n, m = {
        "circle": (GroundTruth("circle", (0.0, 0.0), 1.0), SphereMap([0.0, 0.0], 1.0), 2, 1),
        "sphere": (GroundTruth("sphere", (0.0, 0.0, 0.0), 1.0), SphereMap([0.0, 0.0, 0.0], 1.0), 3, 2),
        "torus": (GroundTruth("torus"), TorusMap(), 3, 2),
    }[shape]
    mdf = MdfModel(net, n, m)
    x0 = truth.uniform_samples(1000, np.random.default_rng(3))
    with Timer() as t:
        st = run_chains(mdf, EnergyModel.constant(n), x0, ClmcConfig(epsilon=0.1, steps=200, seed=3), trace=True)
    assert max(r for *_, r in st.trace) < 1e-4
    assert np.max(residual(mdf, st.x)) < 1e-4
    assert t.elapsed < 120


def test_criterion_4_uniform_energy():
    truth = GroundTruth("circle", (0.0, 0.0), 1.0)
    mdf = MdfModel(SphereMap([0.0, 0.0], 1.0), 2, 1)
    x0 = truth.uniform_samples(2000, np.random.default_rng(4))
    with Timer() as t:
        st = run_chains(mdf, EnergyModel.constant(2), x0, ClmcConfig(epsilon=0.1, steps=200, seed=4), trace=True)
    # every state after the start, pooled over chains; final states alone give 2000 draws,
    # for which a 20% per-bin band is only about two standard deviations
    states = np.array([x for step, _, x, _ in st.trace if step > 0])
    counts, _ = np.histogram(np.arctan2(states[:, 1], states[:, 0]), 20, (-math.pi, math.pi))
    assert np.all(np.abs(counts / len(states) - 0.05) <= 0.2 * 0.05)
    final, _ = np.histogram(np.arctan2(st.x[:, 1], st.x[:, 0]), 20, (-math.pi, math.pi))
    assert chisquare(final).pvalue > 1e-3
    assert t.elapsed < 120


def test_criterion_5_von_mises_pipeline():
    ds = gen_von_mises_circle(1000, seed=0)
    truth = ds.ground_truth
    with Timer() as t:
        mdf = train_mdf(ds.points, MdfTrainConfig(manifold_dim=1, hidden=(8, 8, 8), epochs=100, batch_size=100,
                                                  lr=0.01, eta=1.0, alpha=1.0))
        clmc = ClmcConfig(epsilon=VON_MISES_EPS, steps=10, grad_clamp=0.1, drift_scale=VON_MISES_DRIFT)
        model = train_energy(mdf, ds.points, EnergyTrainConfig(hidden=(32, 32), epochs=40, clmc=clmc))
        model = normalize(model, truth.uniform_samples(100_000, np.random.default_rng(5)), truth.volume)
    on_truth = truth.uniform_samples(1000, np.random.default_rng(6))
    assert np.mean(np.abs(residual(mdf, on_truth))) < 0.05
    edges = np.linspace(-math.pi, math.pi, 101)
    mid = 0.5 * (edges[:-1] + edges[1:])
    pts = np.stack([np.cos(mid), np.sin(mid)], axis=1)
    p = np.exp(-model.energy.value(pts) - model.log_z) * (2 * math.pi / 100)
    q = np.diff(vonmises.cdf(edges, 2.0))
    assert 0.5 * np.sum(np.abs(p - q)) < 0.15
    assert t.elapsed < 600


def test_criterion_6_ablation():
    ds = gen_von_mises_circle(1000, seed=0)
    with Timer() as t:
        gains = {a: mean_direction_gain(train_mdf(ds.points, MdfTrainConfig(manifold_dim=1, alpha=a)), ds.points,
                                        np.random.default_rng(7)) for a in (1.0, 0.0)}
    assert gains[0.0] < 0.1 * gains[1.0]
    assert t.elapsed < 600


def _constrained(center, n, m):
    return ConstrainedModel(MdfModel(SphereMap(center, 1.0), n, m), EnergyModel.constant(n))


def test_criterion_7_manifold_arithmetic():
    rng = np.random.default_rng(8)
    cfg = ClmcConfig(epsilon=0.1, steps=100, seed=8)
    with Timer() as t:
        cap = intersect(_constrained([-0.5, 0.0, 0.0], 3, 2), _constrained([0.5, 0.0, 0.0], 3, 2))
        x0 = init_chain_points(SampleBuffer([-1.5] * 3, [1.5] * 3, buffer_prob=0.0), cap.mdf, 200, rng)
        x = run_chains(cap.mdf, cap.energy, x0, cfg).x
        assert np.max(np.abs(x[:, 0])) < 1e-3
        assert np.max(np.abs(np.hypot(x[:, 1], x[:, 2]) - math.sqrt(3) / 2)) < 1e-3

        cup = union(_constrained([-2.0, 0.0], 2, 1), _constrained([2.0, 0.0], 2, 1))
        x0 = init_chain_points(SampleBuffer([-3.5, -1.5], [3.5, 1.5], buffer_prob=0.0), cup.mdf, 200, rng)
        x = run_chains(cup.mdf, cup.energy, x0, cfg).x
        d_left = np.abs(np.hypot(x[:, 0] + 2, x[:, 1]) - 1)
        d_right = np.abs(np.hypot(x[:, 0] - 2, x[:, 1]) - 1)
        assert np.max(np.minimum(d_left, d_right)) < 1e-4
        assert np.any(d_left < 1e-4) and np.any(d_right < 1e-4)
    assert t.elapsed < 300


def test_criterion_8_normalisation():
    truth = GroundTruth("circle", (0.0, 0.0), 1.0)
    mdf = MdfModel(SphereMap([0.0, 0.0], 1.0), 2, 1)
    with Timer() as t:
        lz, _ = estimate_log_z(ConstrainedModel(mdf, EnergyModel.constant(2)),
                               truth.uniform_samples(100_000, np.random.default_rng(9)), truth.volume)
        assert abs(lz - math.log(2 * math.pi)) < 0.01
        net = random_net(np.random.default_rng(10), (2, 16, 1))
        shifted = net.with_params(np.concatenate([net.params[:-1], net.params[-1:] + 3.0]))
        a = normalize(ConstrainedModel(mdf, EnergyModel(net)),
                      truth.uniform_samples(100_000, np.random.default_rng(11)), truth.volume)
        b = normalize(ConstrainedModel(mdf, EnergyModel(shifted)),
                      truth.uniform_samples(100_000, np.random.default_rng(12)), truth.volume)
        x = truth.uniform_samples(50, np.random.default_rng(13))
        gap = np.max(np.abs(log_density(a, x) - log_density(b, x)))
        assert gap <= 2 * math.hypot(a.log_z_stderr, b.log_z_stderr)
    assert t.elapsed < 60


class AngleEncoder:
    in_dim, out_dim = 2, 1

    def forward(self, x):
        x = np.atleast_2d(x)
        return np.mod(np.arctan2(x[:, 1], x[:, 0]), 2 * np.pi)[:, None]


class CircleDecoder:
    in_dim, out_dim = 1, 2

    def forward(self, z):
        z = np.atleast_2d(z)[:, 0]
        return np.stack([np.cos(z), np.sin(z)], 1)

    def jvp(self, z, u):
        z = np.atleast_2d(z)[:, 0]
        return np.stack([-np.sin(z), np.cos(z)], 1) * np.atleast_2d(u)


def test_criterion_9_pushforward_baseline():
    flat = EnergyModel.constant(1)
    box = ((0.0,), (2 * math.pi,))
    lz, se = estimate_latent_log_z(flat, box, 1000, np.random.default_rng(14))
    iso = PushforwardModel(AngleEncoder(), CircleDecoder(), flat, lz, se, box)
    t = np.linspace(0, 2 * math.pi, 33)
    assert np.max(np.abs(np.exp(pushforward_log_density(iso, np.stack([np.cos(t), np.sin(t)], 1)))
                         - 1 / (2 * math.pi))) < 1e-12

    rng = np.random.default_rng(15)
    for _ in range(5):
        dec = random_net(rng, (2, 16, 16, 3))
        z = rng.standard_normal(2)
        J = central_diff(dec.forward, z)
        assert rel_err(np.linalg.det(decoder_gram(dec, z)[0]), np.linalg.det(J.T @ J)) < 1e-3

    ds = gen_von_mises_mixture(1000, seed=0)
    with Timer() as timer:
        model = fit_pushforward(ds.points, AutoencoderConfig(epochs=100),
                                LatentEbmConfig(epochs=100, steps=60, epsilon=0.5, drift_scale=10 / 0.5**2,
                                                grad_clamp=0.03, energy_reg_coeff=0.1))
    xs, ys = np.linspace(-3.5, 3.5, 141), np.linspace(-1.5, 1.5, 61)
    grid = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1).reshape(-1, 2)
    with np.errstate(all="ignore"):
        density = pushforward_log_density(model, grid)
    bridge = grid[(np.abs(grid[:, 1]) < 1e-9) & (np.abs(grid[:, 0]) <= 1.0)]
    assert np.min(pushforward_log_density(model, bridge)) - np.max(density) > math.log(1e-6)
    assert timer.elapsed < 600


def _run_cli(tmp_path, cfg_path):
    run = tmp_path / "run"
    steps = [
        ["gen", "von-mises", "--n", "100", "--seed", "2", "--out", str(tmp_path / "gen.csv")],
        ["train-mdf", "--config", str(cfg_path)],
        ["train-energy", "--config", str(cfg_path), "--mdf", str(run / "mdf.json")],
        ["train-pushforward", "--config", str(cfg_path)],
        ["sample", str(run / "model.json"), "--chains", "10", "--steps", "10", "--seed", "5",
         "--out", str(run / "samples.csv"), "--trace", str(run / "trace.csv")],
        ["density-grid", str(run / "model.json"), "--resolution", "50", "--out", str(run / "grid.csv")],
        ["density-grid", str(run / "pushforward.json"), "--resolution", "20", "--out", str(run / "pf_grid.csv")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    files = sorted(p for p in tmp_path.rglob("*") if p.is_file() and p != cfg_path)
    return {str(p.relative_to(tmp_path)): p.read_bytes() for p in files}


def test_criterion_10_determinism(tmp_path):
    cfg = {"dataset": {"kind": "von-mises", "n": 200, "seed": 0}, "output_dir": str(tmp_path / "run"),
           "mdf": {"epochs": 3}, "energy": {"epochs": 2, "norm_samples": 2000},
           "clmc": {"epsilon": 0.3, "steps": 5, "grad_clamp": 0.1},
           "autoencoder": {"epochs": 3}, "latent_ebm": {"epochs": 2, "steps": 10, "norm_samples": 2000}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    first = _run_cli(tmp_path, path)
    for name in first:
        (tmp_path / name).unlink()
    second = _run_cli(tmp_path, path)
    assert len(first) > 10
    assert first == second
