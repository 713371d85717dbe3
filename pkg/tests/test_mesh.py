import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from implicit_manifolds.analytic import SphereMap
from implicit_manifolds.compose import intersect, union
from implicit_manifolds.cebm import ConstrainedModel, EnergyModel
from implicit_manifolds.mdf import MdfModel
from implicit_manifolds.mesh import (extract_contours, extract_surface, is_closed, polyline_length,
                                     read_obj, read_polylines_csv, scalar_field, write_obj, write_polylines_csv)

CIRCLE = MdfModel(SphereMap([0.0, 0.0], 1.0), 2, 1)
SPHERE = MdfModel(SphereMap([0.0, 0.0, 0.0], 1.0), 3, 2)


def circle_model(cx):
    return ConstrainedModel(MdfModel(SphereMap([cx, 0.0], 1.0), 2, 1), EnergyModel.constant(2))


def test_circle_contour_length():
    lines = extract_contours(CIRCLE, ([-2, -2], [2, 2]), 256)
    assert len(lines) == 1 and is_closed(lines[0])
    assert abs(polyline_length(lines[0]) - 2 * math.pi) < 0.02 * 2 * math.pi
    assert_allclose(np.linalg.norm(lines[0], axis=1), 1.0, atol=1e-10)


def test_unrefined_vertices_lie_near_circle():
    lines = extract_contours(CIRCLE, ([-2, -2], [2, 2]), 128, refine=False)
    assert np.max(np.abs(np.linalg.norm(lines[0], axis=1) - 1)) < 4 / 127


def test_union_of_circles_gives_two_closed_components():
    u = union(circle_model(-2.0), circle_model(2.0))
    lines = extract_contours(u.mdf, ([-4, -2], [4, 2]), 256)
    assert len(lines) == 2 and all(is_closed(c) for c in lines)
    centers = sorted(float(np.mean(c[:, 0])) for c in lines)
    assert_allclose(centers, [-2.0, 2.0], atol=1e-2)


def test_sphere_surface_radius():
    verts, faces = extract_surface(SPHERE, ([-1.5] * 3, [1.5] * 3), 48)
    assert len(faces) > 0 and faces.max() < len(verts)
    assert np.max(np.abs(np.linalg.norm(verts, axis=1) - 1)) < 1e-3


def test_empty_region_warns():
    with pytest.warns(UserWarning):
        assert extract_contours(CIRCLE, ([3, 3], [4, 4]), 32) == []
    with pytest.warns(UserWarning):
        verts, faces = extract_surface(SPHERE, ([3] * 3, [4] * 3), 16)
    assert verts.shape == (0, 3) and faces.shape == (0, 3)


def test_bad_inputs():
    with pytest.raises(ValueError):
        extract_contours(SPHERE, ([0, 0], [1, 1]))
    with pytest.raises(ValueError):
        extract_contours(CIRCLE, ([1, 0], [0, 1]))


def test_scalar_field_kinds(rng):
    x = rng.standard_normal((5, 2))
    values, level = scalar_field(CIRCLE, x)
    assert level == 0.0
    assert_allclose(values, CIRCLE.forward(x)[:, 0])
    a = ConstrainedModel(SPHERE, EnergyModel.constant(3))
    b = ConstrainedModel(MdfModel(SphereMap([0.5, 0.0, 0.0], 1.0), 3, 2), EnergyModel.constant(3))
    mdf = intersect(a, b).mdf
    y = rng.standard_normal((5, 3))
    assert_allclose(scalar_field(mdf, y, 1e-3)[0], np.sum(mdf.forward(y) ** 2, axis=1) - 1e-3)


def test_file_round_trips(tmp_path, rng):
    lines = [rng.standard_normal((4, 2)), rng.standard_normal((3, 2))]
    write_polylines_csv(tmp_path / "c.csv", lines)
    back = read_polylines_csv(tmp_path / "c.csv")
    assert all(np.array_equal(a, b) for a, b in zip(lines, back))
    verts, faces = rng.standard_normal((5, 3)), np.array([[0, 1, 2], [2, 3, 4]])
    write_obj(tmp_path / "m.obj", verts, faces)
    v2, f2 = read_obj(tmp_path / "m.obj")
    assert_array_equal(v2, verts)
    assert_array_equal(f2, faces)
    assert (tmp_path / "m.obj").read_text().splitlines()[-1] == "f 3 4 5"
