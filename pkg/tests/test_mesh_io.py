"""OBJ/MTL parsing, normalization, and chart labeling."""

import numpy as np
import pytest

from texfit import mesh_io

QUAD_OBJ = """
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
vt 0 0
vt 1 0
vt 1 1
vt 0 1
f 1/1 2/2 3/3 4/4
"""

TWO_ISLANDS_OBJ = """
v 0 0 0
v 1 0 0
v 0 1 0
v 2 0 0
v 3 0 0
v 2 1 0
vt 0 0
vt 0.4 0
vt 0 0.4
vt 0.6 0
vt 1 0
vt 0.6 0.4
f 1/1 2/2 3/3
f 4/4 5/5 6/6
"""


def test_quad_fan_triangulation():
    result = mesh_io.parse_obj(QUAD_OBJ)
    mesh = result.mesh
    assert mesh.num_triangles == 2
    assert mesh.pos_idx.tolist() == [[0, 1, 2], [0, 2, 3]]
    assert mesh.uv_idx.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_negative_indices():
    text = QUAD_OBJ.replace("f 1/1 2/2 3/3 4/4", "f -4/-4 -3/-3 -2/-2 -1/-1")
    mesh = mesh_io.parse_obj(text).mesh
    assert mesh.pos_idx.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_missing_vt_raises():
    text = QUAD_OBJ.replace("f 1/1 2/2 3/3 4/4", "f 1 2 3")
    with pytest.raises(mesh_io.UnparameterizedFaceError):
        mesh_io.parse_obj(text)


def test_parse_error_reports_line():
    text = "v 0 0\n"
    with pytest.raises(mesh_io.ParseError) as err:
        mesh_io.parse_obj(text)
    assert "line 1" in str(err.value)


def test_out_of_range_index():
    text = QUAD_OBJ.replace("f 1/1 2/2 3/3 4/4", "f 1/1 2/2 9/3")
    with pytest.raises(mesh_io.ParseError):
        mesh_io.parse_obj(text)


def test_parse_mtl_maps():
    table = mesh_io.parse_mtl(
        "newmtl a\nmap_Kd diff.png\nmap_Bump norm.png\n"
        "newmtl b\nnorm other.png\n")
    assert table["a"].diffuse_path == "diff.png"
    assert table["a"].normal_path == "norm.png"
    assert table["b"].normal_path == "other.png"
    assert table["b"].diffuse_path is None


def test_filter_degenerate_drops_zero_area():
    text = QUAD_OBJ + "f 1/1 1/1 2/2\n"
    mesh = mesh_io.parse_obj(text).mesh
    filtered, keep = mesh_io.filter_degenerate(mesh)
    assert filtered.num_triangles == 2
    assert keep.tolist() == [True, True, False]


def test_normalize_unit_sphere():
    mesh = mesh_io.parse_obj(QUAD_OBJ).mesh
    normalized, center, scale = mesh_io.normalize_to_unit_sphere(mesh)
    radii = np.linalg.norm(
        normalized.positions - normalized.positions.mean(axis=0)
        + normalized.positions.mean(axis=0), axis=1)
    assert np.max(np.linalg.norm(normalized.positions, axis=1)) <= 1 + 1e-12
    assert np.isclose(np.max(np.linalg.norm(normalized.positions, axis=1)), 1.0)
    assert scale > 0


def test_normalize_degenerate_raises():
    mesh = mesh_io.parse_obj(
        "v 0 0 0\nv 0 0 0\nv 0 0 0\nvt 0 0\nf 1/1 2/1 3/1\n").mesh
    with pytest.raises(mesh_io.DegenerateMeshError):
        mesh_io.normalize_to_unit_sphere(mesh)


def test_chart_components_two_islands():
    mesh = mesh_io.parse_obj(TWO_ISLANDS_OBJ).mesh
    labeled = mesh_io.chart_components(mesh)
    assert labeled.chart_count == 2
    assert labeled.chart_of_triangle[0] != labeled.chart_of_triangle[1]


def test_chart_components_material_split():
    mesh = mesh_io.parse_obj(QUAD_OBJ).mesh
    labeled = mesh_io.chart_components(mesh, ["a", "b"])
    assert labeled.chart_count == 2


def test_write_parse_round_trip():
    mesh = mesh_io.parse_obj(TWO_ISLANDS_OBJ).mesh
    text = mesh_io.write_obj(mesh)
    back = mesh_io.parse_obj(text).mesh
    assert np.array_equal(back.positions, mesh.positions)
    assert np.array_equal(back.uvs, mesh.uvs)
    assert np.array_equal(back.pos_idx, mesh.pos_idx)


def test_fixture_asset(fixture_asset):
    mesh = fixture_asset.mesh
    assert mesh.num_triangles == 512
    assert mesh.chart_count == 2
    counts = np.bincount(mesh.chart_of_triangle)
    assert counts.tolist() == [256, 256]
    assert np.isclose(mesh.bounding_radius, 1.0)


def test_fixture_texture(fixture_texture):
    assert fixture_texture.width == 256
    assert fixture_texture.height == 256
