"""Ground-truth surface queries: closest point, signed distance, UV, chart.

A bounding-volume hierarchy (median split on the longest axis, leaves of at
most 4 triangles) accelerates closest-point lookups; the inside/outside sign
comes from the generalized winding number, which stays robust on imperfect
meshes.  All queries are pure and the oracle is immutable after construction,
so it can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

_QUERY_CHUNK = 65536
_TRI_SENTINEL = np.iinfo(np.int64).max


@dataclass(frozen=True)
class SurfaceHit:
    """Closest point on the mesh for one query."""

    point: np.ndarray
    triangle: int
    barycentric: np.ndarray
    distance: float


def closest_point_triangles(a, b, c, p):
    """Barycentric coordinates of the point on triangle (a,b,c) closest to p.

    Vectorized region classification over all seven Voronoi regions of the
    triangle (vertices, edges, interior).  Shapes broadcast; the last axis is
    the 3D coordinate.  Returns (..., 3) barycentrics.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.sum(ab * ap, axis=-1)
    d2 = np.sum(ac * ap, axis=-1)
    bp = p - b
    d3 = np.sum(ab * bp, axis=-1)
    d4 = np.sum(ac * bp, axis=-1)
    cp = p - c
    d5 = np.sum(ab * cp, axis=-1)
    d6 = np.sum(ac * cp, axis=-1)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = np.where(d1 != d3, d1 / (d1 - d3), 0.0)
        w_ac = np.where(d2 != d6, d2 / (d2 - d6), 0.0)
        bc_den = (d4 - d3) + (d5 - d6)
        w_bc = np.where(bc_den != 0.0, (d4 - d3) / bc_den, 0.0)
        face_den = va + vb + vc
        inv_den = np.where(face_den != 0.0, 1.0 / face_den, 0.0)
    v_f = vb * inv_den
    w_f = vc * inv_den

    conds = [
        (d1 <= 0) & (d2 <= 0),                       # vertex A
        (d3 >= 0) & (d4 <= d3),                      # vertex B
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),           # edge AB
        (d6 >= 0) & (d5 <= d6),                      # vertex C
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),           # edge AC
        (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),  # edge BC
    ]
    zero = np.zeros_like(d1)
    one = np.ones_like(d1)
    beta = np.select(conds, [zero, one, v_ab, zero, zero, 1.0 - w_bc], v_f)
    gamma = np.select(conds, [zero, zero, zero, one, w_ac, w_bc], w_f)
    alpha = 1.0 - beta - gamma
    return np.stack([alpha, beta, gamma], axis=-1)


def triangle_solid_angles(a, b, c, p):
    """Signed solid angle subtended by triangle (a,b,c) as seen from p.

    Van Oosterom & Strackee formula; shapes broadcast over the last axis.
    """
    ra = a - p
    rb = b - p
    rc = c - p
    la = np.linalg.norm(ra, axis=-1)
    lb = np.linalg.norm(rb, axis=-1)
    lc = np.linalg.norm(rc, axis=-1)
    numer = np.sum(np.cross(ra, rb) * rc, axis=-1)
    denom = (la * lb * lc
             + np.sum(ra * rb, axis=-1) * lc
             + np.sum(rb * rc, axis=-1) * la
             + np.sum(rc * ra, axis=-1) * lb)
    return 2.0 * np.arctan2(numer, denom)


class _BvhNode:
    __slots__ = ("lo", "hi", "left", "right", "start", "count")

    def __init__(self, lo, hi, left=None, right=None, start=0, count=0):
        self.lo = lo
        self.hi = hi
        self.left = left
        self.right = right
        self.start = start
        self.count = count


class SurfaceOracle:
    """Immutable evaluator of closest-point / signed-distance / UV / chart."""

    def __init__(self, mesh, leaf_size=4):
        self.mesh = mesh
        corners = mesh.triangle_corners().astype(np.float64)
        self._a = np.ascontiguousarray(corners[:, 0])
        self._b = np.ascontiguousarray(corners[:, 1])
        self._c = np.ascontiguousarray(corners[:, 2])
        self._uv = mesh.triangle_uvs().astype(np.float64)
        self._chart = mesh.chart_of_triangle
        self._leaf_size = leaf_size
        self._build_bvh(corners)

    def _build_bvh(self, corners):
        n = len(corners)
        order = np.arange(n)
        lo_all = corners.min(axis=1)
        hi_all = corners.max(axis=1)
        centroids = corners.mean(axis=1)

        def build(idx, start):
            lo = lo_all[idx].min(axis=0)
            hi = hi_all[idx].max(axis=0)
            if len(idx) <= self._leaf_size:
                order[start:start + len(idx)] = idx
                return _BvhNode(lo, hi, start=start, count=len(idx))
            axis = int(np.argmax(hi - lo))
            half = len(idx) // 2
            part = idx[np.argsort(centroids[idx, axis], kind="stable")]
            left = build(part[:half], start)
            right = build(part[half:], start + half)
            return _BvhNode(lo, hi, left=left, right=right)

        self._root = build(order.copy(), 0)
        self._order = order
        # leaf triangles reordered for contiguous access
        self._la = self._a[order]
        self._lb = self._b[order]
        self._lc = self._c[order]
        # flat leaf table for the vectorized traversal
        leaves = []

        def collect(node):
            if node.left is None:
                leaves.append(node)
            else:
                collect(node.left)
                collect(node.right)

        collect(self._root)
        self._leaf_lo = np.array([lf.lo for lf in leaves])
        self._leaf_hi = np.array([lf.hi for lf in leaves])
        self._leaf_start = np.array([lf.start for lf in leaves])
        self._leaf_count = np.array([lf.count for lf in leaves])
        referenced = np.unique(self.mesh.pos_idx)
        self._vertex_tree = cKDTree(self.mesh.positions[referenced])

    # -- batched queries ---------------------------------------------------

    def closest_points(self, queries):
        """Globally nearest surface point for each row of (N, 3) queries.

        Returns (points (N,3), triangle ids (N,), barycentrics (N,3),
        distances (N,)).  Ties broken by lowest triangle id.
        """
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        n = len(queries)
        best_d2 = np.full(n, np.inf)
        best_tri = np.full(n, _TRI_SENTINEL, dtype=np.int64)
        best_bary = np.zeros((n, 3))
        for start in range(0, n, _QUERY_CHUNK):
            sl = slice(start, min(start + _QUERY_CHUNK, n))
            self._query_chunk(queries[sl], best_d2[sl], best_tri[sl],
                              best_bary[sl])
        tris = best_tri
        points = (best_bary[:, 0:1] * self._a[tris]
                  + best_bary[:, 1:2] * self._b[tris]
                  + best_bary[:, 2:3] * self._c[tris])
        dists = np.linalg.norm(queries - points, axis=1)
        return points, tris, best_bary, dists

    def _query_chunk(self, q, best_d2, best_tri, best_bary):
        # Distance to the nearest vertex bounds the true distance from above;
        # only leaf boxes at most that far away can hold the closest triangle.
        # The `<=` keeps equidistant candidates alive for the lowest-id tie rule.
        ub, _ = self._vertex_tree.query(q)
        ub2 = ub * ub * (1.0 + 1e-9)  # rounding slack so the bound stays valid
        np.minimum(best_d2, ub2, out=best_d2)
        for lf in range(len(self._leaf_start)):
            box_d2 = _box_dist2(self._leaf_lo[lf], self._leaf_hi[lf], q)
            active = np.nonzero(box_d2 <= best_d2)[0]
            if len(active) == 0:
                continue
            qa = q[active]
            sl = slice(self._leaf_start[lf],
                       self._leaf_start[lf] + self._leaf_count[lf])
            tri_ids = self._order[sl]
            bary = closest_point_triangles(
                self._la[sl][:, None], self._lb[sl][:, None],
                self._lc[sl][:, None], qa[None, :, :])
            pts = (bary[..., 0:1] * self._la[sl][:, None]
                   + bary[..., 1:2] * self._lb[sl][:, None]
                   + bary[..., 2:3] * self._lc[sl][:, None])
            d2s = np.sum((pts - qa[None, :, :]) ** 2, axis=-1)  # (leaf, nq)
            for j in np.argsort(tri_ids)[::-1]:
                # descending id order: ties end up at the lowest id
                tid = tri_ids[j]
                better = (d2s[j] < best_d2[active]) | (
                    (d2s[j] == best_d2[active]) & (tid < best_tri[active]))
                upd = active[better]
                best_d2[upd] = d2s[j][better]
                best_tri[upd] = tid
                best_bary[upd] = bary[j][better]

    def unsigned_distances(self, queries):
        return self.closest_points(queries)[3]

    def winding_numbers(self, queries, chunk=256):
        """Generalized winding number at each query (sum of solid angles / 4pi)."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        total = np.zeros(len(queries))
        for start in range(0, len(self._a), chunk):
            sl = slice(start, start + chunk)
            omega = triangle_solid_angles(
                self._a[sl][:, None], self._b[sl][:, None],
                self._c[sl][:, None], queries[None, :, :])
            total += omega.sum(axis=0)
        return total / (4.0 * np.pi)

    def signed_distances(self, queries):
        """Distance magnitude from the closest point, negative inside."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        dists = self.unsigned_distances(queries)
        inside = self.winding_numbers(queries) > 0.5
        return np.where(inside, -dists, dists)

    def uvs_at(self, queries):
        """Barycentric interpolation of the closest triangle's UV corners."""
        _, tris, bary, _ = self.closest_points(queries)
        return np.sum(self._uv[tris] * bary[:, :, None], axis=1)

    def components_at(self, queries):
        """Chart label of the closest triangle."""
        _, tris, _, _ = self.closest_points(queries)
        return self._chart[tris]

    # -- scalar convenience ------------------------------------------------

    def closest_point(self, q):
        points, tris, bary, dists = self.closest_points(np.asarray(q)[None])
        return SurfaceHit(points[0], int(tris[0]), bary[0], float(dists[0]))

    def signed_distance(self, q):
        return float(self.signed_distances(np.asarray(q)[None])[0])

    def uv_at(self, q):
        return self.uvs_at(np.asarray(q)[None])[0]

    def component_at(self, q):
        return int(self.components_at(np.asarray(q)[None])[0])

    def winding_number(self, q):
        return float(self.winding_numbers(np.asarray(q)[None])[0])


def _box_dist2(lo, hi, q):
    d = np.maximum(np.maximum(lo - q, q - hi), 0.0)
    return np.sum(d * d, axis=-1)
