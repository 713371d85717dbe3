"""Zero-set extraction for plotting: marching squares in 2-D, marching cubes in 3-D.

Scalar MDFs are contoured at ``F = 0`` directly.  Vector-valued MDFs have no
sign, so their scalarised residual ``|F|^2 - delta`` is contoured instead.
Vertices are then pulled onto the zero set by one projection pass.
"""

from __future__ import annotations

import csv
import logging
import warnings

import numpy as np
from skimage import measure

from .mdf import MdfModel, project_to_manifold

log = logging.getLogger(__name__)

DEFAULT_DELTA = 1e-6


def _grid(bounds, resolution):
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise ValueError("bounds must be (lo, hi) with lo < hi componentwise")
    axes = [np.linspace(a, b, resolution) for a, b in zip(lo, hi)]
    spacing = (hi - lo) / (resolution - 1)
    return lo, spacing, axes


def scalar_field(mdf: MdfModel, points, delta: float = DEFAULT_DELTA):
    """Signed ``F`` for codimension one, ``|F|^2 - delta`` otherwise; returns ``(values, level)``."""
    f = mdf.forward(points)
    if f.shape[-1] == 1:
        return f[..., 0], 0.0
    return np.einsum("...i,...i->...", f, f) - delta, 0.0


def _sample(mdf, axes, delta):
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    values, level = scalar_field(mdf, pts, delta)
    return values.reshape(mesh[0].shape), level


def _refine(mdf, verts):
    if len(verts) == 0:
        return verts
    proj = project_to_manifold(mdf, verts)
    if not np.all(proj.ok):
        log.warning("%d mesh vertices did not reach the zero set", int(np.sum(~proj.ok)))
    return proj.x


def extract_contours(mdf: MdfModel, bounds, resolution: int = 256, delta: float = DEFAULT_DELTA,
                     refine: bool = True):
    """Marching squares on a 2-D grid; returns a list of ``(k, 2)`` polylines."""
    if mdf.ambient_dim != 2:
        raise ValueError("contours need a 2-D ambient space")
    lo, spacing, axes = _grid(bounds, resolution)
    field, level = _sample(mdf, axes, delta)
    lines = [lo + c * spacing for c in measure.find_contours(field, level)]
    if not lines:
        warnings.warn("zero set does not cross the requested region; nothing extracted")
        return []
    if refine:
        sizes = np.cumsum([len(c) for c in lines])[:-1]
        lines = np.split(_refine(mdf, np.concatenate(lines)), sizes)
    return lines


def extract_surface(mdf: MdfModel, bounds, resolution: int = 64, delta: float = DEFAULT_DELTA,
                    refine: bool = True):
    """Marching cubes on a 3-D grid; returns ``(vertices, faces)``."""
    if mdf.ambient_dim != 3:
        raise ValueError("surfaces need a 3-D ambient space")
    lo, spacing, axes = _grid(bounds, resolution)
    field, level = _sample(mdf, axes, delta)
    if not field.min() < level < field.max():
        warnings.warn("zero set does not cross the requested region; nothing extracted")
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=int)
    verts, faces, _, _ = measure.marching_cubes(field, level, spacing=tuple(spacing))
    verts = verts + lo
    if refine:
        verts = _refine(mdf, verts)
    return verts, faces


def polyline_length(line) -> float:
    return float(np.sum(np.linalg.norm(np.diff(line, axis=0), axis=1)))


def is_closed(line, tol: float = 1e-6) -> bool:
    return len(line) > 2 and np.linalg.norm(line[0] - line[-1]) <= tol


def write_polylines_csv(path, lines):
    """One row per vertex with header ``contour,x0,x1``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["contour", "x0", "x1"])
        for k, line in enumerate(lines):
            for p in line:
                w.writerow([k, repr(float(p[0])), repr(float(p[1]))])


def read_polylines_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    if not rows:
        return []
    arr = np.array(rows, dtype=np.float64)
    ids = arr[:, 0].astype(int)
    return [arr[ids == k, 1:] for k in np.unique(ids)]


def write_obj(path, verts, faces):
    """Wavefront OBJ with 1-based face indices."""
    with open(path, "w") as fh:
        for v in verts:
            fh.write("v {!r} {!r} {!r}\n".format(*map(float, v)))
        for f in faces:
            fh.write("f {} {} {}\n".format(*(int(i) + 1 for i in f)))


def read_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(t) for t in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(t.split("/")[0]) - 1 for t in parts[1:4]])
    return np.array(verts).reshape(-1, 3), np.array(faces, dtype=int).reshape(-1, 3)
