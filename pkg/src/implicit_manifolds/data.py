"""Synthetic manifold datasets and CSV loaders."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroundTruth:
    """Reference surface: ``circle``/``sphere`` (center, radius) or ``torus`` (R, r)."""

    kind: str
    center: tuple = ()
    radius: float = 1.0
    major: float = 2.0
    minor: float = 1.0
    # union of several circles/spheres
    parts: tuple = ()

    def distance(self, x):
        """Euclidean distance from each point to the surface."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.kind in ("circle", "sphere"):
            return np.abs(np.linalg.norm(x - np.asarray(self.center), axis=1) - self.radius)
        if self.kind == "torus":
            rho = np.hypot(x[:, 0], x[:, 1])
            return np.abs(np.hypot(rho - self.major, x[:, 2]) - self.minor)
        if self.kind == "union":
            return np.min([p.distance(x) for p in self.parts], axis=0)
        raise ValueError(f"no distance for ground truth {self.kind!r}")

    @property
    def volume(self) -> float:
        """Riemannian volume (length / area) of the surface."""
        if self.kind == "circle":
            return 2 * math.pi * self.radius
        if self.kind == "sphere":
            return 4 * math.pi * self.radius**2
        if self.kind == "torus":
            return 4 * math.pi**2 * self.major * self.minor
        if self.kind == "union":
            return sum(p.volume for p in self.parts)
        raise ValueError(f"no volume for ground truth {self.kind!r}")

    def uniform_samples(self, count: int, rng: np.random.Generator):
        """Points distributed uniformly w.r.t. the surface measure."""
        if self.kind == "circle":
            t = rng.uniform(0, 2 * math.pi, count)
            return np.asarray(self.center) + self.radius * np.stack([np.cos(t), np.sin(t)], axis=1)
        if self.kind == "sphere":
            v = rng.standard_normal((count, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            return np.asarray(self.center) + self.radius * v
        if self.kind == "torus":
            # the area element is proportional to R + r cos(phi)
            phis = []
            while sum(len(p) for p in phis) < count:
                phi = rng.uniform(0, 2 * math.pi, 2 * count)
                keep = rng.uniform(0, self.major + self.minor, 2 * count) < self.major + self.minor * np.cos(phi)
                phis.append(phi[keep])
            phi = np.concatenate(phis)[:count]
            psi = rng.uniform(0, 2 * math.pi, count)
            return torus_embed(phi, psi, self.major, self.minor)
        if self.kind == "union":
            vols = np.array([p.volume for p in self.parts])
            which = rng.choice(len(self.parts), size=count, p=vols / vols.sum())
            out = np.zeros((count, len(self.parts[0].center) or 3))
            for i, p in enumerate(self.parts):
                sel = which == i
                out[sel] = p.uniform_samples(int(sel.sum()), rng)
            return out
        raise ValueError(f"cannot sample ground truth {self.kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "union":
            return {"kind": "union", "parts": [p.to_dict() for p in self.parts]}
        if self.kind == "torus":
            return {"kind": "torus", "major": self.major, "minor": self.minor}
        return {"kind": self.kind, "center": list(self.center), "radius": self.radius}

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> Optional["GroundTruth"]:
        if d is None:
            return None
        if d["kind"] == "union":
            return cls("union", parts=tuple(cls.from_dict(p) for p in d["parts"]))
        if d["kind"] == "torus":
            return cls("torus", major=d["major"], minor=d["minor"])
        return cls(d["kind"], tuple(d["center"]), d["radius"])


@dataclass
class Dataset:
    points: np.ndarray
    name: str
    ground_truth: Optional[GroundTruth] = None
    skipped: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        self.points = pts[:, None] if pts.ndim == 1 else pts

    def __len__(self):
        return len(self.points)

    def to_csv(self, path):
        n = self.points.shape[1] if self.points.size else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(n)])
            for row in self.points:
                w.writerow([repr(float(v)) for v in row])


def read_points_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)


def sample_von_mises(mu: float, kappa: float, size: int, rng: np.random.Generator):
    """Angles from von Mises(mu, kappa) by Best & Fisher rejection sampling."""
    if kappa < 0:
        raise ValueError("concentration must be non-negative")
    if size == 0:
        return np.zeros(0)
    if kappa < 1e-8:
        return np.mod(rng.uniform(-math.pi, math.pi, size) + mu + math.pi, 2 * math.pi) - math.pi
    tau = 1.0 + math.sqrt(1.0 + 4.0 * kappa * kappa)
    rho = (tau - math.sqrt(2.0 * tau)) / (2.0 * kappa)
    r = (1.0 + rho * rho) / (2.0 * rho)
    out = []
    have = 0
    while have < size:
        m = max(2 * (size - have), 16)
        u1, u2, u3 = rng.random(m), rng.random(m), rng.random(m)
        z = np.cos(math.pi * u1)
        f = (1.0 + r * z) / (r + z)
        c = kappa * (r - f)
        with np.errstate(divide="ignore"):
            accept = (c * (2.0 - c) - u2 > 0) | (np.log(c / u2) + 1.0 - c >= 0)
        theta = np.sign(u3[accept] - 0.5) * np.arccos(np.clip(f[accept], -1.0, 1.0))
        out.append(theta)
        have += theta.size
    theta = np.concatenate(out)[:size] + mu
    return np.mod(theta + math.pi, 2 * math.pi) - math.pi


def gen_von_mises_circle(n_points=1000, center=(0.0, 0.0), radius=1.0, mode_angle=0.0,
                         concentration=2.0, seed=0) -> Dataset:
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    t = sample_von_mises(mode_angle, concentration, n_points, rng)
    pts = np.asarray(center, dtype=np.float64) + radius * np.stack([np.cos(t), np.sin(t)], axis=1)
    return Dataset(pts, "von-mises", GroundTruth("circle", tuple(map(float, center)), float(radius)))


def gen_von_mises_mixture(n_points=1000, seed=0, concentration=2.0) -> Dataset:
    """Balanced mixture on unit circles centred at (-2, 0) and (2, 0), modes facing outward."""
    rng = np.random.default_rng(seed)
    right = rng.random(n_points) < 0.5
    t = np.empty(n_points)
    t[right] = sample_von_mises(0.0, concentration, int(right.sum()), rng)
    t[~right] = sample_von_mises(math.pi, concentration, int((~right).sum()), rng)
    centers = np.where(right[:, None], [[2.0, 0.0]], [[-2.0, 0.0]])
    pts = centers + np.stack([np.cos(t), np.sin(t)], axis=1)
    truth = GroundTruth("union", parts=(GroundTruth("circle", (-2.0, 0.0), 1.0),
                                        GroundTruth("circle", (2.0, 0.0), 1.0)))
    return Dataset(pts.reshape(n_points, 2), "von-mises-mixture", truth)


def gen_projected_normal_sphere(n_points=1000, means=((1.0, 0.0, 0.0), (-1.0, 0.0, 0.0)), seed=0) -> Dataset:
    """Balanced mixture of ``N(mean, I)`` draws pushed radially onto the unit sphere."""
    rng = np.random.default_rng(seed)
    means = np.asarray(means, dtype=np.float64)
    comp = rng.integers(0, len(means), n_points)
    v = means[comp] + rng.standard_normal((n_points, 3))
    norms = np.linalg.norm(v, axis=1)
    while np.any(norms == 0):
        z = norms == 0
        v[z] = means[comp[z]] + rng.standard_normal((int(z.sum()), 3))
        norms = np.linalg.norm(v, axis=1)
    pts = v / norms[:, None]
    return Dataset(pts, "projected-normal-sphere", GroundTruth("sphere", (0.0, 0.0, 0.0), 1.0))


def torus_embed(phi, psi, major=2.0, minor=1.0):
    phi, psi = np.asarray(phi, dtype=np.float64), np.asarray(psi, dtype=np.float64)
    ring = major + minor * np.cos(phi)
    return np.stack([ring * np.cos(psi), ring * np.sin(psi), minor * np.sin(phi)], axis=-1)


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path} is empty")
    return [c.strip().lower() for c in rows[0]], rows[1:]


def load_angles_csv(path, torus_R=2.0, torus_r=1.0) -> Dataset:
    """Two angle columns (phi, psi) embedded on a torus.

    Degrees are assumed when any header token contains ``deg``, radians otherwise.
    """
    header, rows = _read_rows(path)
    degrees = any("deg" in h for h in header)
    angles, skipped = [], 0
    for row in rows:
        try:
            a, b = float(row[0]), float(row[1])
        except (ValueError, IndexError):
            skipped += 1
            continue
        if not (math.isfinite(a) and math.isfinite(b)):
            skipped += 1
            continue
        angles.append((a, b))
    if skipped:
        log.warning("skipped %d malformed rows in %s", skipped, path)
    if not angles:
        raise ValueError(f"{path} contains no valid angle rows")
    ang = np.radians(angles) if degrees else np.asarray(angles)
    pts = torus_embed(ang[:, 0], ang[:, 1], torus_R, torus_r)
    return Dataset(pts, "angles", GroundTruth("torus", major=torus_R, minor=torus_r), skipped)


def load_geo_csv(path, sphere_radius=1.0) -> Dataset:
    """Latitude/longitude columns (degrees) embedded on a sphere."""
    header, rows = _read_rows(path)
    lat_col = next((i for i, h in enumerate(header) if h.startswith("lat")), 0)
    lon_col = next((i for i, h in enumerate(header) if h.startswith(("lon", "lng"))), 1)
    coords, skipped = [], 0
    for row in rows:
        try:
            lat, lon = float(row[lat_col]), float(row[lon_col])
        except (ValueError, IndexError):
            skipped += 1
            continue
        if not (-90 <= lat <= 90 and -180 <= lon <= 360):
            skipped += 1
            continue
        coords.append((lat, lon))
    if skipped:
        log.warning("skipped %d invalid rows in %s", skipped, path)
    if not coords:
        raise ValueError(f"{path} contains no valid coordinates")
    lat, lon = np.radians(np.asarray(coords)).T
    pts = sphere_radius * np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=1)
    return Dataset(pts, "geo", GroundTruth("sphere", (0.0, 0.0, 0.0), float(sphere_radius)), skipped)
