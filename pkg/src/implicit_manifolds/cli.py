"""Command-line entry point: ``implicit-manifolds <command> ...``.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
configuration error.  Every file written gets a ``<file>.meta.json`` sidecar
holding the resolved configuration, its hash, the seed and library versions.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import platform
import sys
import warnings
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np

from . import compose, data, mesh, serialize
from .analytic import SphereMap, TorusMap
from .cebm import (ConstrainedModel, EnergyModel, EnergyTrainConfig, EnergyTrainLog, SampleBuffer,
                   init_chain_points, log_density, normalize, train_energy)
from .clmc import ClmcConfig, run_chains, write_trace
from .errors import OffManifoldError
from .mdf import MdfModel, MdfTrainConfig, TrainLog, project_to_manifold, train_mdf
from .pushforward import (AutoencoderConfig, LatentEbmConfig, PushforwardModel, fit_pushforward,
                          pushforward_log_density)

log = logging.getLogger("implicit_manifolds")


class UsageError(Exception):
    """Bad arguments or configuration; maps to exit code 2."""


_num = {"type": "number"}
_int = {"type": "integer"}
_pos_int = {"type": "integer", "minimum": 1}
_widths = {"type": "array", "items": _pos_int}
_opt_num = {"type": ["number", "null"]}


def _section(props):
    return {"type": "object", "additionalProperties": False, "properties": props}


RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "RunConfig",
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset", "output_dir"],
    "properties": {
        "output_dir": {"type": "string"},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["von-mises", "von-mises-mixture", "projected-normal-sphere",
                                  "angles", "geo", "csv"]},
                "n": _pos_int,
                "seed": _int,
                "concentration": {"type": "number", "minimum": 0},
                "center": {"type": "array", "items": _num},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "mode_angle": _num,
                "path": {"type": "string"},
                "torus_R": {"type": "number", "exclusiveMinimum": 0},
                "torus_r": {"type": "number", "exclusiveMinimum": 0},
                "sphere_radius": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "mdf": _section({
            "manifold_dim": _pos_int, "hidden": _widths, "epochs": {"type": "integer", "minimum": 0},
            "batch_size": _pos_int, "lr": {"type": "number", "exclusiveMinimum": 0},
            "eta": {"type": "number", "minimum": 0}, "alpha": {"type": "number", "minimum": 0},
            "grad_clip": _opt_num, "seed": _int,
        }),
        "energy": _section({
            "hidden": _widths, "epochs": {"type": "integer", "minimum": 0},
            "rounds": {"type": ["array", "null"],
                       "items": {"type": "array", "items": _int, "minItems": 2, "maxItems": 2}},
            "batch_size": _pos_int, "lr": {"type": "number", "exclusiveMinimum": 0},
            "grad_clip": _opt_num, "energy_reg_coeff": {"type": "number", "minimum": 0},
            "buffer_prob": {"type": "number", "minimum": 0, "maximum": 1},
            "buffer_capacity": _pos_int, "box_inflation": {"type": "number", "minimum": 0},
            "norm_samples": {"type": "integer", "minimum": 2}, "seed": _int,
        }),
        "clmc": _section({
            "epsilon": {"type": "number", "exclusiveMinimum": 0}, "steps": {"type": "integer", "minimum": 1},
            "grad_clamp": {"type": ["number", "null"], "exclusiveMinimum": 0},
            "drift_scale": {"type": "number", "minimum": 0},
            "constraint_tol": {"type": "number", "exclusiveMinimum": 0},
            "max_retries": {"type": "integer", "minimum": 0}, "seed": _int,
        }),
        "autoencoder": _section({
            "latent_dim": _pos_int, "hidden": _widths, "epochs": {"type": "integer", "minimum": 0},
            "batch_size": _pos_int, "lr": {"type": "number", "exclusiveMinimum": 0},
            "grad_clip": _opt_num, "seed": _int,
        }),
        "latent_ebm": _section({
            "hidden": _widths, "epochs": {"type": "integer", "minimum": 0}, "batch_size": _pos_int,
            "lr": {"type": "number", "exclusiveMinimum": 0}, "grad_clip": _opt_num,
            "energy_reg_coeff": {"type": "number", "minimum": 0}, "steps": _pos_int,
            "epsilon": {"type": "number", "exclusiveMinimum": 0}, "drift_scale": {"type": "number", "minimum": 0},
            "grad_clamp": {"type": "number", "exclusiveMinimum": 0},
            "buffer_prob": {"type": "number", "minimum": 0, "maximum": 1}, "buffer_capacity": _pos_int,
            "box": {"type": ["array", "null"], "items": _num, "minItems": 2, "maxItems": 2},
            "box_inflation": {"type": "number", "minimum": 0},
            "norm_samples": {"type": "integer", "minimum": 2}, "seed": _int,
        }),
    },
}


# ---------------------------------------------------------------- plumbing

def _versions():
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    import scipy

    return {"package": pkg, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def write_sidecar(path, command: str, config: dict, seed):
    """``<path>.meta.json`` with enough information to rerun the command exactly."""
    meta = {
        "command": command,
        "config": config,
        "config_hash": hashlib.sha256(_canonical(config).encode()).hexdigest(),
        "seed": seed,
        "versions": _versions(),
    }
    Path(f"{path}.meta.json").write_text(serialize.dumps(meta))
    return meta


def read_sidecar(path):
    p = Path(f"{path}.meta.json")
    return json.loads(p.read_text()) if p.exists() else None


def load_run_config(path, seed=None) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(cfg, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise UsageError(f"config {path} invalid at {where}: {exc.message}") from exc
    if seed is not None:
        for key in ("mdf", "energy", "clmc", "autoencoder", "latent_ebm"):
            cfg.setdefault(key, {})["seed"] = seed
    return cfg


def _build(cls, section: dict, **fixed):
    kw = dict(section)
    if "hidden" in kw:
        kw["hidden"] = tuple(kw["hidden"])
    kw.update(fixed)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def clmc_config(section: dict) -> ClmcConfig:
    kw = dict(section)
    if kw.get("grad_clamp", 0) is None:
        kw["grad_clamp"] = math.inf
    return _build(ClmcConfig, kw)


def load_dataset(desc: dict) -> data.Dataset:
    kind = desc["kind"]
    n, seed = desc.get("n", 1000), desc.get("seed", 0)
    if kind == "von-mises":
        return data.gen_von_mises_circle(n, tuple(desc.get("center", (0.0, 0.0))), desc.get("radius", 1.0),
                                         desc.get("mode_angle", 0.0), desc.get("concentration", 2.0), seed)
    if kind == "von-mises-mixture":
        return data.gen_von_mises_mixture(n, seed, desc.get("concentration", 2.0))
    if kind == "projected-normal-sphere":
        return data.gen_projected_normal_sphere(n, seed=seed)
    if "path" not in desc:
        raise UsageError(f"dataset kind {kind!r} needs a path")
    if kind == "angles":
        return data.load_angles_csv(desc["path"], desc.get("torus_R", 2.0), desc.get("torus_r", 1.0))
    if kind == "geo":
        return data.load_geo_csv(desc["path"], desc.get("sphere_radius", 1.0))
    meta = read_sidecar(desc["path"]) or {}
    truth = data.GroundTruth.from_dict(meta.get("ground_truth"))
    return data.Dataset(data.read_points_csv(desc["path"]), "csv", truth)


def _out_dir(cfg) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (int, str)) else repr(float(v)) for v in row])


def _load(path, expect=None):
    try:
        model = serialize.load_model(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load model {path}: {exc}") from exc
    if expect is not None and not isinstance(model, expect):
        names = expect.__name__ if isinstance(expect, type) else " or ".join(e.__name__ for e in expect)
        raise UsageError(f"{path} is not a {names}")
    return model


def _model_extra(path) -> dict:
    d = serialize.load(path)
    return {k: d[k] for k in ("ground_truth", "chain_box") if k in d}


# ---------------------------------------------------------------- commands

def cmd_gen(args):
    desc = {"kind": args.dataset, "n": args.n, "seed": args.seed}
    for key in ("concentration", "radius", "mode_angle", "path", "center"):
        val = getattr(args, key, None)
        if val is not None:
            desc[key] = val
    ds = load_dataset(desc)
    ds.to_csv(args.out)
    meta = write_sidecar(args.out, "gen", desc, args.seed)
    meta["ground_truth"] = ds.ground_truth.to_dict() if ds.ground_truth else None
    meta["rows"] = len(ds)
    meta["skipped_rows"] = ds.skipped
    Path(f"{args.out}.meta.json").write_text(serialize.dumps(meta))
    print(f"wrote {len(ds)} points to {args.out}")


def cmd_analytic(args):
    dim = 2 if args.shape == "circle" else 3
    if args.center is not None and len(args.center) != dim:
        raise UsageError(f"center must have {dim} coordinates")
    if args.shape == "circle":
        center = args.center or [0.0, 0.0]
        net, n, m = SphereMap(center, args.radius), 2, 1
        truth = data.GroundTruth("circle", tuple(center), args.radius)
    elif args.shape == "sphere":
        center = args.center or [0.0, 0.0, 0.0]
        net, n, m = SphereMap(center, args.radius), 3, 2
        truth = data.GroundTruth("sphere", tuple(center), args.radius)
    else:
        net, n, m = TorusMap(args.major, args.minor), 3, 2
        truth = data.GroundTruth("torus", major=args.major, minor=args.minor)
    # uniform energy: Z is exactly the surface volume
    model = ConstrainedModel(MdfModel(net, n, m), EnergyModel.constant(n), math.log(truth.volume), 0.0)
    serialize.save(args.out, serialize.constrained_to_dict(model, ground_truth=truth.to_dict()))
    write_sidecar(args.out, "analytic", {k: v for k, v in vars(args).items() if k not in ("func", "out")}, None)
    print(f"wrote analytic {args.shape} model to {args.out}")


def cmd_train_mdf(args):
    cfg = load_run_config(args.config, args.seed)
    ds = load_dataset(cfg["dataset"])
    n = ds.points.shape[1]
    mcfg = _build(MdfTrainConfig, cfg.get("mdf", {}))
    if mcfg.manifold_dim >= n:
        raise UsageError(f"manifold_dim must be below the ambient dimension {n}")
    init = _load(args.resume, MdfModel) if args.resume else None
    train_log = TrainLog()
    model = train_mdf(ds.points, mcfg, init=init, train_log=train_log)
    out = _out_dir(cfg)
    path = out / "mdf.json"
    serialize.save(path, serialize.mdf_to_dict(model))
    _write_rows(out / "mdf_loss.csv", ["epoch", "loss"], enumerate(train_log.epoch_loss))
    label = "ablation" if mcfg.alpha == 0 else "standard"
    for p in (path, out / "mdf_loss.csv"):
        meta = write_sidecar(p, "train-mdf", cfg, mcfg.seed)
        meta.update(label=label, resumed_from=args.resume)
        Path(f"{p}.meta.json").write_text(serialize.dumps(meta))
    print(f"{label} MDF trained for {mcfg.epochs} epochs, final loss {train_log.epoch_loss[-1] if train_log.epoch_loss else float('nan'):.6g}; wrote {path}")


def cmd_train_energy(args):
    cfg = load_run_config(args.config, args.seed)
    ds = load_dataset(cfg["dataset"])
    mdf = _load(args.mdf, MdfModel)
    esec = dict(cfg.get("energy", {}))
    norm_samples = esec.pop("norm_samples", 100_000)
    if esec.get("rounds") is not None:
        esec["rounds"] = tuple(tuple(r) for r in esec["rounds"])
    ecfg = _build(EnergyTrainConfig, esec, clmc=clmc_config(cfg.get("clmc", {"epsilon": 0.3, "steps": 10,
                                                                                "grad_clamp": 0.1})))
    init = _load(args.resume, ConstrainedModel).energy if args.resume else None
    train_log = EnergyTrainLog()
    model = train_energy(mdf, ds.points, ecfg, init=init, train_log=train_log)
    extra = {}
    box = SampleBuffer.around(ds.points, ecfg.box_inflation)
    extra["chain_box"] = [box.box_lo.tolist(), box.box_hi.tolist()]
    if ds.ground_truth is not None:
        rng = np.random.default_rng(ecfg.seed + 1)
        model = normalize(model, ds.ground_truth.uniform_samples(norm_samples, rng), ds.ground_truth.volume)
        extra["ground_truth"] = ds.ground_truth.to_dict()
    else:
        log.warning("no ground truth for this dataset; log Z not estimated")
    out = _out_dir(cfg)
    path = out / "model.json"
    serialize.save(path, serialize.constrained_to_dict(model, **extra))
    _write_rows(out / "energy_log.csv", ["epoch", "mean_data_energy", "mean_buffer_energy"],
                zip(range(len(train_log.mean_pos_energy)), train_log.mean_pos_energy, train_log.mean_neg_energy))
    for p in (path, out / "energy_log.csv"):
        meta = write_sidecar(p, "train-energy", cfg, ecfg.seed)
        meta.update(mdf=str(args.mdf), resumed_from=args.resume)
        Path(f"{p}.meta.json").write_text(serialize.dumps(meta))
    lz = "none" if model.log_z is None else f"{model.log_z:.6g} +/- {model.log_z_stderr:.2g}"
    print(f"energy trained; log Z {lz}; wrote {path}")


def cmd_train_pushforward(args):
    cfg = load_run_config(args.config, args.seed)
    ds = load_dataset(cfg["dataset"])
    lsec = dict(cfg.get("latent_ebm", {}))
    n_norm = lsec.pop("norm_samples", 100_000)
    if lsec.get("box") is not None:
        lsec["box"] = tuple(lsec["box"])
    ae = _build(AutoencoderConfig, cfg.get("autoencoder", {}))
    ebm = _build(LatentEbmConfig, lsec)
    model = fit_pushforward(ds.points, ae, ebm, n_norm)
    out = _out_dir(cfg)
    path = out / "pushforward.json"
    serialize.save(path, serialize.pushforward_to_dict(model))
    write_sidecar(path, "train-pushforward", cfg, ae.seed)
    print(f"pushforward model trained; latent log Z {model.latent_log_z:.6g}; wrote {path}")


def cmd_sample(args):
    model = _load(args.model, ConstrainedModel)
    n = model.mdf.ambient_dim
    extra = _model_extra(args.model)
    clmc = ClmcConfig(epsilon=args.epsilon, steps=args.steps,
                      grad_clamp=math.inf if args.grad_clamp is None else args.grad_clamp,
                      drift_scale=args.drift_scale, constraint_tol=args.constraint_tol, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    if args.init:
        x0 = data.read_points_csv(args.init)
        x0 = x0[rng.integers(0, len(x0), args.chains)]
        proj = project_to_manifold(model.mdf, x0)
        x0 = proj.x
    else:
        if args.bounds:
            lo, hi = _split_bounds(args.bounds, n)
        elif "chain_box" in extra:
            lo, hi = extra["chain_box"]
        else:
            lo, hi = [-3.0] * n, [3.0] * n
        buffer = SampleBuffer(lo, hi, buffer_prob=0.0, constraint_tol=args.constraint_tol)
        x0 = init_chain_points(buffer, model.mdf, args.chains, rng)
    state = run_chains(model.mdf, model.energy, x0, clmc, trace=bool(args.trace))
    failed = (state.failures > 0) | ~(state.constraint_residual < args.constraint_tol)
    header = [f"x{i}" for i in range(n)] + ["residual", "failures"]
    _write_rows(args.out, header, [(*x, r, int(f)) for x, r, f in
                                   zip(state.x, state.constraint_residual, state.failures)])
    params = {k: v for k, v in vars(args).items() if k != "func"}
    write_sidecar(args.out, "sample", params, args.seed)
    if args.trace:
        write_trace(args.trace, state)
        write_sidecar(args.trace, "sample", params, args.seed)
    n_failed = int(failed.sum())
    print(f"chains {args.chains} failed {n_failed} max residual {float(np.max(state.constraint_residual)):.3e}")
    if n_failed > 0.1 * args.chains:
        print(f"error: {n_failed} of {args.chains} chains failed", file=sys.stderr)
        return 1
    return 0


def _split_bounds(values, n):
    if len(values) != 2 * n:
        raise UsageError(f"--bounds needs {2 * n} numbers (lo then hi per axis)")
    lo, hi = np.asarray(values[:n], dtype=float), np.asarray(values[n:], dtype=float)
    if np.any(hi <= lo):
        raise UsageError("--bounds needs lo < hi on every axis")
    return lo, hi


def _truth_grid(truth: data.GroundTruth, res: int):
    """Points on the reference surface plus their parameter columns."""
    t = 2 * math.pi * np.arange(res) / res - math.pi
    if truth.kind == "circle":
        pts = np.asarray(truth.center) + truth.radius * np.stack([np.cos(t), np.sin(t)], axis=1)
        return pts, ["angle"], t[:, None]
    if truth.kind == "sphere":
        lat = np.linspace(-math.pi / 2, math.pi / 2, res + 2)[1:-1]
        la, lo = (g.ravel() for g in np.meshgrid(lat, t, indexing="ij"))
        pts = np.asarray(truth.center) + truth.radius * np.stack(
            [np.cos(la) * np.cos(lo), np.cos(la) * np.sin(lo), np.sin(la)], axis=1)
        return pts, ["lat", "lon"], np.stack([la, lo], axis=1)
    if truth.kind == "torus":
        ph, ps = (g.ravel() for g in np.meshgrid(t, t, indexing="ij"))
        return data.torus_embed(ph, ps, truth.major, truth.minor), ["phi", "psi"], np.stack([ph, ps], axis=1)
    raise UsageError(f"no parameter grid for ground truth {truth.kind!r}")


def cmd_density_grid(args):
    model = _load(args.model, (ConstrainedModel, PushforwardModel))
    header_extra, params = [], None
    if isinstance(model, PushforwardModel):
        if model.latent_log_z is None:
            raise RuntimeError("model has no latent log normaliser; rerun train-pushforward")
        n = model.encoder.in_dim
        lo, hi = _split_bounds(args.bounds, n) if args.bounds else (np.full(n, -3.0), np.full(n, 3.0))
        axes = [np.linspace(a, b, args.resolution) for a, b in zip(lo, hi)]
        pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            values = pushforward_log_density(model, pts)
    else:
        if model.log_z is None:
            raise RuntimeError("model has no log normaliser; run train-energy with a dataset "
                               "that has a ground truth so log Z can be estimated first")
        n = model.mdf.ambient_dim
        extra = _model_extra(args.model)
        if "ground_truth" in extra:
            truth = data.GroundTruth.from_dict(extra["ground_truth"])
            pts, header_extra, params = _truth_grid(truth, args.resolution)
            pts = project_to_manifold(model.mdf, pts).x
        else:
            lo, hi = _split_bounds(args.bounds, n) if args.bounds else (np.full(n, -3.0), np.full(n, 3.0))
            if n == 2:
                lines = mesh.extract_contours(model.mdf, (lo, hi), args.resolution)
                pts = np.concatenate(lines) if lines else np.zeros((0, 2))
            else:
                pts = mesh.extract_surface(model.mdf, (lo, hi), args.resolution)[0]
        try:
            values = log_density(model, pts, constraint_tol=args.constraint_tol) if len(pts) else np.zeros(0)
        except OffManifoldError as exc:
            raise RuntimeError(f"{exc}; the grid could not be projected onto the model manifold") from exc
    header = [f"x{i}" for i in range(pts.shape[1])] + header_extra + ["log_density"]
    rows = [(*p, *(params[i] if params is not None else ()), v) for i, (p, v) in enumerate(zip(pts, values))]
    _write_rows(args.out, header, rows)
    write_sidecar(args.out, "density-grid", {k: v for k, v in vars(args).items() if k != "func"}, None)
    print(f"wrote {len(rows)} grid rows to {args.out}")


def cmd_mesh(args):
    model = _load(args.model, (ConstrainedModel, MdfModel))
    mdf = model.mdf if isinstance(model, ConstrainedModel) else model
    n = mdf.ambient_dim
    if n not in (2, 3):
        raise UsageError("mesh extraction needs a 2-D or 3-D ambient space")
    lo, hi = _split_bounds(args.bounds, n)
    res = args.resolution or (256 if n == 2 else 64)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if n == 2:
            lines = mesh.extract_contours(mdf, (lo, hi), res, args.delta, refine=not args.no_refine)
            mesh.write_polylines_csv(args.out, lines)
            summary = f"{len(lines)} contours, {sum(len(c) for c in lines)} vertices"
        else:
            verts, faces = mesh.extract_surface(mdf, (lo, hi), res, args.delta, refine=not args.no_refine)
            mesh.write_obj(args.out, verts, faces)
            summary = f"{len(verts)} vertices, {len(faces)} faces"
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    params = {k: v for k, v in vars(args).items() if k != "func"}
    params.update(resolution=res, delta=args.delta, level=0.0,
                  field="signed F" if mdf.codim == 1 else "|F|^2 - delta")
    write_sidecar(args.out, "mesh", params, None)
    print(f"wrote {summary} to {args.out}")


def cmd_compose(args):
    models = [_load(p, ConstrainedModel) for p in args.models]
    try:
        if args.op == "translate":
            if len(models) != 1 or args.offset is None:
                raise UsageError("translate takes one model and --offset")
            out = compose.translate(models[0], args.offset)
        else:
            if len(models) != 2:
                raise UsageError(f"{args.op} takes exactly two models")
            out = (compose.union(*models, w=args.weight) if args.op == "union"
                   else compose.intersect(*models))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    extra = {}
    boxes = [_model_extra(p).get("chain_box") for p in args.models]
    if all(b is not None for b in boxes):
        lo = np.min([b[0] for b in boxes], axis=0)
        hi = np.max([b[1] for b in boxes], axis=0)
        if args.op == "translate":
            lo, hi = lo + np.asarray(args.offset), hi + np.asarray(args.offset)
        extra["chain_box"] = [lo.tolist(), hi.tolist()]
    serialize.save(args.out, serialize.constrained_to_dict(out, **extra))
    write_sidecar(args.out, "compose", {k: v for k, v in vars(args).items() if k != "func"}, None)
    print(f"wrote {args.op} model to {args.out}")


def cmd_schema(args):
    print(json.dumps(RUN_CONFIG_SCHEMA, indent=2))


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="implicit-manifolds", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate or import a dataset as CSV")
    g.add_argument("dataset", choices=["von-mises", "von-mises-mixture", "projected-normal-sphere", "angles", "geo"])
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--concentration", type=float)
    g.add_argument("--radius", type=float)
    g.add_argument("--mode-angle", dest="mode_angle", type=float)
    g.add_argument("--center", type=float, nargs="+")
    g.add_argument("--path", help="input CSV for angles/geo")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("analytic", help="write a closed-form circle, sphere or torus model with uniform energy")
    a.add_argument("shape", choices=["circle", "sphere", "torus"])
    a.add_argument("--center", type=float, nargs="+")
    a.add_argument("--radius", type=float, default=1.0)
    a.add_argument("--major", type=float, default=2.0)
    a.add_argument("--minor", type=float, default=1.0)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analytic)

    for name, func, helptext in (("train-mdf", cmd_train_mdf, "fit a manifold-defining function"),
                                 ("train-energy", cmd_train_energy, "fit an energy on a learned manifold"),
                                 ("train-pushforward", cmd_train_pushforward, "fit the autoencoder baseline")):
        t = sub.add_parser(name, help=helptext)
        t.add_argument("--config", required=True, help="RunConfig JSON (see the schema command)")
        t.add_argument("--seed", type=int, help="override every seed in the config")
        if name == "train-energy":
            t.add_argument("--mdf", required=True, help="MDF model JSON from train-mdf")
        if name != "train-pushforward":
            t.add_argument("--resume", help="model JSON to continue training from")
        t.set_defaults(func=func)

    s = sub.add_parser("sample", help="run constrained Langevin chains")
    s.add_argument("model")
    s.add_argument("--chains", type=int, default=100)
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--epsilon", type=float, default=0.1)
    s.add_argument("--grad-clamp", dest="grad_clamp", type=float)
    s.add_argument("--drift-scale", dest="drift_scale", type=float, default=1.0)
    s.add_argument("--constraint-tol", dest="constraint_tol", type=float, default=1e-5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--bounds", type=float, nargs="+", help="noise box for chain starts: lo... hi...")
    s.add_argument("--init", help="CSV of starting points (projected onto the manifold)")
    s.add_argument("--trace", help="write every chain state per step to this CSV")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    d = sub.add_parser("density-grid", help="tabulate log density on a grid")
    d.add_argument("model")
    d.add_argument("--resolution", type=int, default=100)
    d.add_argument("--bounds", type=float, nargs="+")
    d.add_argument("--constraint-tol", dest="constraint_tol", type=float, default=1e-5)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_density_grid)

    m = sub.add_parser("mesh", help="extract the zero set as a polyline CSV (2-D) or OBJ (3-D)")
    m.add_argument("model")
    m.add_argument("--bounds", type=float, nargs="+", required=True)
    m.add_argument("--resolution", type=int)
    m.add_argument("--delta", type=float, default=mesh.DEFAULT_DELTA)
    m.add_argument("--no-refine", dest="no_refine", action="store_true")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mesh)

    c = sub.add_parser("compose", help="union, intersect or translate constrained models")
    c.add_argument("op", choices=["union", "intersect", "translate"])
    c.add_argument("models", nargs="+")
    c.add_argument("--offset", type=float, nargs="+")
    c.add_argument("--weight", type=float, default=0.5)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compose)

    sc = sub.add_parser("schema", help="print the RunConfig JSON schema")
    sc.set_defaults(func=cmd_schema)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 1
        log.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
