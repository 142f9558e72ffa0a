"""Surface oracle: closest points, signed distance, winding numbers."""

import numpy as np
import pytest

from texfit import surface
from texfit.fixture import icosphere
from texfit.surface import SurfaceOracle, closest_point_triangles


def brute_force_closest(mesh, p):
    corners = mesh.triangle_corners()
    bary = closest_point_triangles(
        corners[:, 0], corners[:, 1], corners[:, 2],
        np.broadcast_to(p, (len(corners), 3)))
    pts = np.sum(bary[:, :, None] * corners, axis=1)
    d2 = np.sum((pts - p) ** 2, axis=1)
    best = np.argmin(d2)  # argmin returns the lowest index among exact ties
    return best, np.sqrt(d2[best]), bary[best]


def _closest(a, b, c, p):
    bary = closest_point_triangles(a, b, c, p)
    pt = bary[..., 0, None] * a + bary[..., 1, None] * b + bary[..., 2, None] * c
    return np.sum((pt - p) ** 2, axis=-1), bary


def test_closest_point_regions():
    a = np.array([[0.0, 0.0, 0.0]])
    b = np.array([[1.0, 0.0, 0.0]])
    c = np.array([[0.0, 1.0, 0.0]])
    # interior projection
    d2, bary = _closest(a, b, c, np.array([[0.2, 0.2, 1.0]]))
    assert np.isclose(d2[0], 1.0)
    assert np.allclose(bary[0], [0.6, 0.2, 0.2])
    # vertex region
    d2, _ = _closest(a, b, c, np.array([[-1.0, -1.0, 0.0]]))
    assert np.isclose(d2[0], 2.0)
    # edge region
    d2, bary = _closest(a, b, c, np.array([[0.5, -1.0, 0.0]]))
    assert np.isclose(d2[0], 1.0)
    assert np.allclose(bary[0], [0.5, 0.5, 0.0])


def test_oracle_matches_brute_force(fixture_mesh, fixture_oracle):
    rng = np.random.default_rng(7)
    queries = rng.uniform(-1.2, 1.2, size=(200, 3))
    _, tris, barys, dists = fixture_oracle.closest_points(queries)
    for q, tri, dist, bary in zip(queries, tris, dists, barys):
        b_tri, b_dist, b_bary = brute_force_closest(fixture_mesh, q)
        assert abs(dist - b_dist) < 1e-12
        assert tri == b_tri
        corners = fixture_mesh.triangle_corners()[tri]
        point = bary @ corners
        assert abs(np.linalg.norm(point - q) - b_dist) < 1e-9


def test_sign_inside_outside(fixture_oracle):
    inside = np.array([[0.0, 0.0, 0.0], [0.1, -0.2, 0.05]])
    outside = np.array([[1.5, 0.0, 0.0], [0.0, 0.0, -2.0]])
    assert np.all(fixture_oracle.signed_distances(inside) < 0)
    assert np.all(fixture_oracle.signed_distances(outside) > 0)


def test_winding_number_values(fixture_oracle):
    assert fixture_oracle.winding_number(np.zeros(3)) == pytest.approx(1.0, abs=1e-6)
    assert fixture_oracle.winding_number(np.array([3.0, 0, 0])) == pytest.approx(
        0.0, abs=1e-6)


def test_icosphere_distance_analytic():
    mesh = icosphere(3)
    oracle = SurfaceOracle(mesh)
    rng = np.random.default_rng(0)
    q = rng.uniform(-1.5, 1.5, size=(100, 3))
    d = oracle.signed_distances(q)
    analytic = np.linalg.norm(q, axis=1) - 1.0
    # the icosphere is a faceted approximation of the unit sphere
    assert np.max(np.abs(d - analytic)) < 0.02


def test_uv_and_component_consistency(fixture_mesh, fixture_oracle):
    rng = np.random.default_rng(3)
    queries = rng.uniform(-1.1, 1.1, size=(50, 3))
    _, tris, barys, _ = fixture_oracle.closest_points(queries)
    uv = fixture_oracle.uvs_at(queries)
    comp = fixture_oracle.components_at(queries)
    uv_corners = fixture_mesh.triangle_uvs()
    for i in range(len(queries)):
        expected_uv = barys[i] @ uv_corners[tris[i]]
        assert np.allclose(uv[i], expected_uv, atol=1e-12)
        assert comp[i] == fixture_mesh.chart_of_triangle[tris[i]]


def test_scalar_wrappers(fixture_oracle):
    q = np.array([0.3, 0.4, 0.5])
    assert fixture_oracle.signed_distance(q) == pytest.approx(
        fixture_oracle.signed_distances(q[None])[0])
    assert fixture_oracle.component_at(q) == fixture_oracle.components_at(q[None])[0]


def test_solid_angle_closed_surface():
    mesh = icosphere(1)
    corners = mesh.triangle_corners()
    p = np.zeros((1, 3))
    total = sum(
        surface.triangle_solid_angles(
            corners[i, 0][None], corners[i, 1][None], corners[i, 2][None], p)[0]
        for i in range(mesh.num_triangles))
    assert total == pytest.approx(4.0 * np.pi, rel=1e-9)
