"""JSON envelopes for networks, composite trees and fitted models.

Floats are written with ``repr`` precision by :mod:`json`, so finite doubles
round-trip exactly.
"""

from __future__ import annotations

import json

from .analytic import SphereMap, TorusMap
from .netcore import MlpModel

FORMAT_VERSION = 1


def node_to_dict(node) -> dict:
    from .cebm import EnergyModel

    if isinstance(node, EnergyModel):
        node = node.net
    if isinstance(node, MlpModel):
        return {"kind": "mlp", "net": node.to_dict()}
    return node.to_dict()


def node_from_dict(d: dict):
    from . import compose

    kind = d["kind"]
    if kind == "mlp":
        return MlpModel.from_dict(d["net"])
    if kind == "sphere":
        return SphereMap(d["center"], d["radius"])
    if kind == "torus":
        return TorusMap(d["major"], d["minor"])
    if kind == "translate":
        return compose.TranslateNode(node_from_dict(d["child"]), d["offset"])
    pair = node_from_dict(d["left"]), node_from_dict(d["right"])
    if kind == "product":
        return compose.ProductNode(*pair)
    if kind == "concat":
        return compose.ConcatNode(*pair)
    if kind == "sum":
        return compose.SumNode(*pair)
    if kind == "log_mixture":
        return compose.LogMixtureNode(*pair, d["weight"])
    raise ValueError(f"unknown node kind {kind!r}")


def mdf_to_dict(mdf) -> dict:
    return {
        "type": "mdf",
        "n": mdf.ambient_dim,
        "m": mdf.manifold_dim,
        "eta": mdf.eta,
        "alpha": mdf.alpha,
        "composite_tree": node_to_dict(mdf.net),
    }


def mdf_from_dict(d: dict):
    from .mdf import MdfModel

    return MdfModel(node_from_dict(d["composite_tree"]), d["n"], d["m"], d["eta"], d["alpha"])


def constrained_to_dict(model, **extra) -> dict:
    return {
        "type": "constrained",
        "format_version": FORMAT_VERSION,
        "mdf": mdf_to_dict(model.mdf),
        "energy": node_to_dict(model.energy),
        "log_z": model.log_z,
        "log_z_stderr": model.log_z_stderr,
        "log_z_absolute": model.log_z_absolute,
        **extra,
    }


def constrained_from_dict(d: dict):
    from .cebm import ConstrainedModel, EnergyModel

    return ConstrainedModel(
        mdf_from_dict(d["mdf"]),
        EnergyModel(node_from_dict(d["energy"])),
        d.get("log_z"),
        d.get("log_z_stderr"),
        d.get("log_z_absolute", True),
    )


def pushforward_to_dict(model) -> dict:
    return {
        "type": "pushforward",
        "format_version": FORMAT_VERSION,
        "encoder": model.encoder.to_dict(),
        "decoder": model.decoder.to_dict(),
        "latent_energy": node_to_dict(model.latent_energy),
        "latent_log_z": model.latent_log_z,
        "latent_log_z_stderr": model.latent_log_z_stderr,
        "latent_box": [list(model.latent_box[0]), list(model.latent_box[1])],
    }


def pushforward_from_dict(d: dict):
    from .cebm import EnergyModel
    from .pushforward import PushforwardModel

    return PushforwardModel(
        MlpModel.from_dict(d["encoder"]),
        MlpModel.from_dict(d["decoder"]),
        EnergyModel(node_from_dict(d["latent_energy"])),
        d.get("latent_log_z"),
        d.get("latent_log_z_stderr"),
        (tuple(d["latent_box"][0]), tuple(d["latent_box"][1])),
    )


def dumps(obj: dict) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def save(path, obj: dict):
    with open(path, "w") as fh:
        fh.write(dumps(obj))


def load(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def load_model(path):
    """Load any model envelope written by this package."""
    d = load(path)
    kind = d.get("type")
    if kind == "constrained":
        return constrained_from_dict(d)
    if kind == "mdf":
        return mdf_from_dict(d)
    if kind == "pushforward":
        return pushforward_from_dict(d)
    if "layer_widths" in d:
        return MlpModel.from_dict(d)
    raise ValueError(f"unrecognised model file {path}")
