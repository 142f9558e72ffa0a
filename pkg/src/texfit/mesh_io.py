"""Wavefront OBJ/MTL ingestion into a normalized, chart-labeled triangle mesh.

Only the OBJ subset that textured assets actually use is supported:
``v``, ``vt``, ``vn``, ``f``, ``usemtl``, ``mtllib``, ``o``/``g``.  Faces are
fan-triangulated and must carry texture coordinates; assets without a UV
layout are rejected rather than auto-unwrapped.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image


class MeshError(Exception):
    """Base class for ingestion failures."""


class ParseError(MeshError):
    """Malformed OBJ/MTL directive; carries the 1-based line number."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class UnparameterizedFaceError(ParseError):
    """Face without vt indices; the mesh has no UV layout to learn."""


class DegenerateMeshError(MeshError):
    """Mesh with no usable geometry (e.g. all vertices coincident)."""


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle surface with per-corner UVs and chart labels.

    ``positions`` is (V, 3), ``uvs`` is (U, 2), ``pos_idx``/``uv_idx`` are
    (T, 3) integer corner indices.  ``chart_of_triangle`` assigns every
    triangle a label in [0, chart_count).
    """

    positions: np.ndarray
    uvs: np.ndarray
    pos_idx: np.ndarray
    uv_idx: np.ndarray
    chart_of_triangle: np.ndarray = field(default=None)
    chart_count: int = 1
    bounding_radius: float = float("nan")

    def __post_init__(self):
        if self.chart_of_triangle is None:
            object.__setattr__(
                self, "chart_of_triangle",
                np.zeros(len(self.pos_idx), dtype=np.int32))

    @property
    def num_triangles(self):
        return len(self.pos_idx)

    def triangle_corners(self):
        """(T, 3, 3) array of triangle corner positions."""
        return self.positions[self.pos_idx]

    def triangle_uvs(self):
        """(T, 3, 2) array of triangle corner UVs."""
        return self.uvs[self.uv_idx]

    def triangle_areas(self):
        p = self.triangle_corners()
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)


@dataclass(frozen=True)
class TextureImage:
    """Row-major 8-bit RGB(A) raster.  ``pixels`` is (height, width, channels)."""

    width: int
    height: int
    pixels: np.ndarray
    color_space: str = "srgb"  # "srgb" for diffuse maps, "linear" for normal maps

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("texture dimensions must be >= 1")
        expected = (self.height, self.width)
        if self.pixels.shape[:2] != expected:
            raise ValueError(
                f"pixel buffer {self.pixels.shape[:2]} does not match {expected}")


@dataclass
class Material:
    diffuse_path: str | None = None
    normal_path: str | None = None


# MaterialTable: mapping material name -> Material.
MaterialTable = dict


@dataclass
class ObjParseResult:
    mesh: TriangleMesh
    material_of_triangle: list
    mtl_libraries: list


def parse_obj(text):
    """Parse an OBJ character stream into a triangle mesh.

    Polygons are fan-triangulated; 1-based and negative indices are resolved.
    Returns the mesh (charts not yet assigned) together with the per-triangle
    material name and any ``mtllib`` references.
    """
    positions = []
    uvs = []
    pos_idx = []
    uv_idx = []
    materials = []
    mtl_libraries = []
    current_material = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag, args = parts[0], parts[1:]
        if tag == "v":
            if len(args) < 3:
                raise ParseError("vertex needs 3 coordinates", line_no)
            try:
                positions.append([float(a) for a in args[:3]])
            except ValueError as exc:
                raise ParseError(f"bad vertex coordinate: {exc}", line_no)
        elif tag == "vt":
            if len(args) < 2:
                raise ParseError("texture coordinate needs 2 values", line_no)
            try:
                uvs.append([float(a) for a in args[:2]])
            except ValueError as exc:
                raise ParseError(f"bad texture coordinate: {exc}", line_no)
        elif tag == "vn":
            continue  # normals are recomputed from the SDF, not stored
        elif tag == "f":
            if len(args) < 3:
                raise ParseError("face needs at least 3 corners", line_no)
            corners = [_parse_corner(a, len(positions), len(uvs), line_no)
                       for a in args]
            for i in range(1, len(corners) - 1):
                tri = (corners[0], corners[i], corners[i + 1])
                pos_idx.append([c[0] for c in tri])
                uv_idx.append([c[1] for c in tri])
                materials.append(current_material)
        elif tag == "usemtl":
            current_material = args[0] if args else None
        elif tag == "mtllib":
            mtl_libraries.extend(args)
        elif tag in ("o", "g", "s"):
            continue
        else:
            raise ParseError(f"unsupported directive {tag!r}", line_no)

    mesh = TriangleMesh(
        positions=np.asarray(positions, dtype=np.float64).reshape(-1, 3),
        uvs=np.asarray(uvs, dtype=np.float64).reshape(-1, 2),
        pos_idx=np.asarray(pos_idx, dtype=np.int32).reshape(-1, 3),
        uv_idx=np.asarray(uv_idx, dtype=np.int32).reshape(-1, 3),
    )
    return ObjParseResult(mesh, materials, mtl_libraries)


def _parse_corner(token, num_positions, num_uvs, line_no):
    fields = token.split("/")
    if len(fields) < 2 or not fields[1]:
        raise UnparameterizedFaceError(
            f"face corner {token!r} has no texture coordinate", line_no)
    try:
        vi = int(fields[0])
        ti = int(fields[1])
    except ValueError:
        raise ParseError(f"bad face corner {token!r}", line_no)
    vi = vi - 1 if vi > 0 else num_positions + vi
    ti = ti - 1 if ti > 0 else num_uvs + ti
    if not (0 <= vi < num_positions):
        raise ParseError(f"vertex index {fields[0]} out of range", line_no)
    if not (0 <= ti < num_uvs):
        raise ParseError(f"uv index {fields[1]} out of range", line_no)
    return vi, ti


def parse_mtl(text):
    """Parse an MTL companion stream into a MaterialTable.

    Texture paths are kept verbatim (relative paths are resolved by the
    caller against the MTL file's directory).
    """
    table = {}
    current = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        tag = parts[0]
        arg = parts[1] if len(parts) > 1 else ""
        if tag == "newmtl":
            if not arg:
                raise ParseError("newmtl needs a name", line_no)
            current = Material()
            table[arg] = current
        elif tag == "map_Kd":
            if current is None:
                raise ParseError("map_Kd before any newmtl", line_no)
            current.diffuse_path = arg
        elif tag in ("map_Bump", "map_bump", "norm", "bump"):
            if current is None:
                raise ParseError(f"{tag} before any newmtl", line_no)
            # strip "-bm <scale>" style options, keep the file argument
            current.normal_path = arg.split()[-1] if arg else None
        # Ka/Kd/Ks/Ns/d/illum etc. carry no texture information; ignore.
    return table


def filter_degenerate(mesh, area_eps=0.0):
    """Drop triangles with repeated corner indices or non-positive area."""
    distinct = (
        (mesh.pos_idx[:, 0] != mesh.pos_idx[:, 1])
        & (mesh.pos_idx[:, 1] != mesh.pos_idx[:, 2])
        & (mesh.pos_idx[:, 0] != mesh.pos_idx[:, 2])
    )
    keep = distinct & (mesh.triangle_areas() > area_eps)
    return replace(
        mesh,
        pos_idx=mesh.pos_idx[keep],
        uv_idx=mesh.uv_idx[keep],
        chart_of_triangle=mesh.chart_of_triangle[keep],
    ), keep


def normalize_to_unit_sphere(mesh):
    """Translate/scale so all positions lie in the unit sphere.

    The enclosing sphere is approximated by the vertex centroid plus the
    farthest-vertex radius, which guarantees containment.  Returns the
    normalized mesh and the (center, scale) transform for round-tripping.
    """
    if len(mesh.positions) == 0:
        raise DegenerateMeshError("mesh has no vertices")
    center = mesh.positions.mean(axis=0)
    radii = np.linalg.norm(mesh.positions - center, axis=1)
    scale = float(radii.max())
    if scale <= 0.0:
        raise DegenerateMeshError("all vertices coincide")
    normalized = replace(
        mesh,
        positions=(mesh.positions - center) / scale,
        bounding_radius=1.0,
    )
    return normalized, center, scale


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def chart_components(mesh, material_of_triangle=None):
    """Label triangles by UV-space connected component within material groups.

    Two triangles join the same chart when they share a uv index and belong
    to the same material group.  Labels are renumbered to a contiguous
    [0, k) range in order of first appearance.
    """
    n_tri = mesh.num_triangles
    if material_of_triangle is None:
        material_of_triangle = [None] * n_tri
    uf = _UnionFind(n_tri)
    first_by_key = {}
    for t in range(n_tri):
        mat = material_of_triangle[t]
        for uvi in mesh.uv_idx[t]:
            key = (mat, int(uvi))
            if key in first_by_key:
                uf.union(first_by_key[key], t)
            else:
                first_by_key[key] = t
    labels = np.empty(n_tri, dtype=np.int32)
    label_of_root = {}
    for t in range(n_tri):
        root = uf.find(t)
        if root not in label_of_root:
            label_of_root[root] = len(label_of_root)
        labels[t] = label_of_root[root]
    k = max(len(label_of_root), 1)
    return replace(mesh, chart_of_triangle=labels, chart_count=k)


def write_obj(mesh, material_of_triangle=None, mtl_libraries=()):
    """Serialize the mesh back to the same OBJ subset (cache format)."""
    lines = []
    for lib in mtl_libraries:
        lines.append(f"mtllib {lib}")
    for p in mesh.positions:
        lines.append(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}")
    for uv in mesh.uvs:
        lines.append(f"vt {uv[0]:.17g} {uv[1]:.17g}")
    current = object()
    for t in range(mesh.num_triangles):
        mat = material_of_triangle[t] if material_of_triangle else None
        if mat != current:
            if mat is not None:
                lines.append(f"usemtl {mat}")
            current = mat
        corners = " ".join(
            f"{vi + 1}/{ti + 1}"
            for vi, ti in zip(mesh.pos_idx[t], mesh.uv_idx[t]))
        lines.append(f"f {corners}")
    return "\n".join(lines) + "\n"


def load_texture(path, color_space="srgb"):
    """Load an 8-bit PNG as a TextureImage."""
    with Image.open(path) as img:
        if img.mode not in ("RGB", "RGBA"):
            img = img.convert("RGB")
        pixels = np.asarray(img, dtype=np.uint8)
    return TextureImage(
        width=pixels.shape[1], height=pixels.shape[0],
        pixels=pixels, color_space=color_space)


@dataclass
class Asset:
    """A fully ingested object: normalized mesh, charts, textures, transform."""

    mesh: TriangleMesh
    material_of_triangle: list
    materials: MaterialTable
    diffuse_textures: dict
    normal_textures: dict
    center: np.ndarray
    scale: float


def load_asset(obj_path, load_textures=True):
    """Parse, filter, normalize, and chart-label an OBJ asset from disk."""
    with open(obj_path, "r", encoding="utf-8") as f:
        parsed = parse_obj(f.read())
    mesh, keep = filter_degenerate(parsed.mesh)
    materials_of = [m for m, k in zip(parsed.material_of_triangle, keep) if k]

    table = {}
    base = os.path.dirname(os.path.abspath(obj_path))
    for lib in parsed.mtl_libraries:
        lib_path = os.path.join(base, lib)
        with open(lib_path, "r", encoding="utf-8") as f:
            table.update(parse_mtl(f.read()))
    referenced = {m for m in materials_of if m is not None}
    missing = referenced - set(table)
    if missing and parsed.mtl_libraries:
        raise MeshError(f"materials referenced but not defined: {sorted(missing)}")

    mesh, center, scale = normalize_to_unit_sphere(mesh)
    mesh = chart_components(mesh, materials_of)

    diffuse, normal = {}, {}
    if load_textures:
        for name, mat in table.items():
            if mat.diffuse_path:
                diffuse[name] = load_texture(
                    os.path.join(base, mat.diffuse_path), "srgb")
            if mat.normal_path:
                normal[name] = load_texture(
                    os.path.join(base, mat.normal_path), "linear")
    return Asset(mesh, materials_of, table, diffuse, normal, center, scale)
