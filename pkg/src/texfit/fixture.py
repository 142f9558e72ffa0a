"""Procedurally generated test asset: a two-chart textured sphere.

The sphere is an octahedron subdivided 3 times (512 triangles) whose north
and south hemispheres form two separate UV islands, each octahedrally
projected into its own half of a 256x256 checker-and-letter texture.  The
asset is deterministic, so the committed OBJ/MTL/PNG files can be
regenerated bit-identically.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .mesh_io import TriangleMesh, TextureImage, chart_components, write_obj

# Each chart occupies a square sub-rectangle of the atlas:
# (u0, v0, extent); chart 0 is the north hemisphere.
_CHART_BOXES = ((0.02, 0.27, 0.46), (0.52, 0.27, 0.46))


def _octahedron_faces():
    faces = []
    for sx in (1, -1):
        for sy in (1, -1):
            for sz in (1, -1):
                v0 = np.array([sx, 0.0, 0.0])
                v1 = np.array([0.0, sy, 0.0])
                v2 = np.array([0.0, 0.0, float(sz)])
                if sx * sy * sz < 0:
                    v1, v2 = v2, v1
                faces.append((v0, v1, v2))
    return faces


def _subdivide_face(p0, p1, p2, n):
    """Regular n^2 subdivision of one triangle; returns list of corner triples."""
    def pt(i, j):
        return p0 + (p1 - p0) * (i / n) + (p2 - p0) * (j / n)

    tris = []
    for i in range(n):
        for j in range(n - i):
            tris.append((pt(i, j), pt(i + 1, j), pt(i, j + 1)))
            if j < n - i - 1:
                tris.append((pt(i + 1, j), pt(i + 1, j + 1), pt(i, j + 1)))
    return tris


def _octahedral_uv(p):
    """Project a unit vector to the octahedral square [0,1]^2 of its hemisphere."""
    s = np.abs(p[0]) + np.abs(p[1]) + np.abs(p[2])
    q = p[:2] / s
    return (q + 1.0) * 0.5


def two_chart_sphere(subdivisions=3):
    """Unit octasphere whose hemispheres are two disjoint UV islands.

    ``subdivisions=3`` yields 512 triangles.  Chart labels are derived from
    UV connectivity (not assigned directly), exercising the same path as
    disk-loaded assets.
    """
    n = 2 ** subdivisions
    positions = []
    uvs = []
    pos_idx = []
    uv_idx = []
    vertex_key_to_index = [{}, {}]  # separate vertex pools per hemisphere

    for face in _octahedron_faces():
        hemi = 0 if sum(c[2] for c in face) > 0 else 1
        u0, v0, ext = _CHART_BOXES[hemi]
        pool = vertex_key_to_index[hemi]
        for tri in _subdivide_face(*face, n):
            tri_pos = []
            for corner in tri:
                key = corner.tobytes()  # multiples of 1/n: exact in binary
                if key not in pool:
                    p = corner / np.linalg.norm(corner)
                    local = _octahedral_uv(p)
                    pool[key] = len(positions)
                    positions.append(p)
                    uvs.append([u0 + local[0] * ext, v0 + local[1] * ext])
                tri_pos.append(pool[key])
            pos_idx.append(tri_pos)
            uv_idx.append(tri_pos)  # one uv per vertex in this construction

    mesh = TriangleMesh(
        positions=np.asarray(positions, dtype=np.float64),
        uvs=np.asarray(uvs, dtype=np.float64),
        pos_idx=np.asarray(pos_idx, dtype=np.int32),
        uv_idx=np.asarray(uv_idx, dtype=np.int32),
        bounding_radius=1.0,
    )
    return chart_components(mesh)


def icosphere(subdivisions=3):
    """Subdivided icosahedron (20 * 4^s triangles) with lat-long corner UVs."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    raw = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts = [v / np.linalg.norm(v) for v in raw]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    cache = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = verts[i] + verts[j]
            verts.append(m / np.linalg.norm(m))
            cache[key] = len(verts) - 1
        return cache[key]

    for _ in range(subdivisions):
        next_faces = []
        for i, j, k in faces:
            a, b, c = midpoint(i, j), midpoint(j, k), midpoint(k, i)
            next_faces += [(i, a, c), (a, j, b), (c, b, k), (a, b, c)]
        faces = next_faces

    positions = np.asarray(verts)
    pos_idx = np.asarray(faces, dtype=np.int32)
    # Per-corner lat-long UVs; seams are irrelevant for distance queries.
    corner = positions[pos_idx].reshape(-1, 3)
    u = (np.arctan2(corner[:, 1], corner[:, 0]) / (2 * np.pi)) % 1.0
    v = np.arccos(np.clip(corner[:, 2], -1, 1)) / np.pi
    uvs = np.stack([u, v], axis=1)
    uv_idx = np.arange(len(corner), dtype=np.int32).reshape(-1, 3)
    return TriangleMesh(
        positions=positions, uvs=uvs, pos_idx=pos_idx, uv_idx=uv_idx,
        bounding_radius=1.0)


def checker_texture(size=256, cell=16):
    """Checker diffuse texture with letter marks inside each chart box."""
    yy, xx = np.mgrid[0:size, 0:size]
    checker = ((xx // cell + yy // cell) % 2).astype(bool)
    pixels = np.empty((size, size, 3), dtype=np.uint8)
    pixels[...] = np.where(checker[..., None],
                           np.array([225, 205, 120], dtype=np.uint8),
                           np.array([60, 90, 160], dtype=np.uint8))

    for (u0, v0, ext), letter in zip(_CHART_BOXES, ("N", "S")):
        x0 = int(u0 * size)
        y0 = int((1.0 - (v0 + ext)) * size)  # v axis points up, rows go down
        span = int(ext * size)
        _draw_letter(pixels, letter, x0 + span // 4, y0 + span // 4,
                     span // 2, np.array([20, 20, 20], dtype=np.uint8))
    return TextureImage(width=size, height=size, pixels=pixels)


def _draw_letter(pixels, letter, x, y, span, color):
    bar = max(span // 5, 2)
    if letter == "N":
        pixels[y:y + span, x:x + bar] = color
        pixels[y:y + span, x + span - bar:x + span] = color
        for i in range(span):
            xc = x + bar + (span - 2 * bar) * i // span
            pixels[y + i, xc:xc + bar] = color
    else:  # "S"
        pixels[y:y + bar, x:x + span] = color
        pixels[y + (span - bar) // 2:y + (span + bar) // 2, x:x + span] = color
        pixels[y + span - bar:y + span, x:x + span] = color
        pixels[y:y + span // 2, x:x + bar] = color
        pixels[y + span // 2:y + span, x + span - bar:x + span] = color


def write_fixture(out_dir):
    """Write the fixture asset (OBJ + MTL + PNG) into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    mesh = two_chart_sphere()
    obj_text = write_obj(
        mesh, material_of_triangle=["checker"] * mesh.num_triangles,
        mtl_libraries=["sphere.mtl"])
    with open(os.path.join(out_dir, "sphere.obj"), "w", encoding="utf-8") as f:
        f.write(obj_text)
    with open(os.path.join(out_dir, "sphere.mtl"), "w", encoding="utf-8") as f:
        f.write("newmtl checker\nmap_Kd diffuse.png\n")
    tex = checker_texture()
    Image.fromarray(tex.pixels).save(os.path.join(out_dir, "diffuse.png"))
    return os.path.join(out_dir, "sphere.obj")
