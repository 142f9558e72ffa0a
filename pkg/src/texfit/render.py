"""Sphere-traced rendering of (neural) signed distance fields.

Rays march by the current distance value, scaled by a relaxation factor
because neural distance fields are not exactly unit-Lipschitz.  Hits are
shaded with a diffuse texture looked up through the surface
parameterization, optionally perturbed by a tangent-space normal map, under
a minimal Lambertian-plus-ambient model.  Pixels are independent pure
computations, so renders are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .mesh_io import TextureImage

AMBIENT = 0.1


class DegenerateNormalError(ValueError):
    """Zero distance-field gradient; no surface normal exists."""


@dataclass(frozen=True)
class Camera:
    eye: tuple
    look_at: tuple
    up: tuple = (0.0, 0.0, 1.0)
    fov_degrees: float = 45.0
    width: int = 256
    height: int = 256

    def __post_init__(self):
        if np.allclose(self.eye, self.look_at):
            raise ValueError("eye and look_at coincide")
        if not 0.0 < self.fov_degrees < 180.0:
            raise ValueError("fov must be in (0, 180)")

    def primary_rays(self):
        """Pinhole rays: origin (3,), directions (height, width, 3)."""
        eye = np.asarray(self.eye, dtype=np.float64)
        forward = np.asarray(self.look_at, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(self.up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)

        half = np.tan(np.radians(self.fov_degrees) / 2.0)
        ys = (np.arange(self.height) + 0.5) / self.height * 2.0 - 1.0
        xs = (np.arange(self.width) + 0.5) / self.width * 2.0 - 1.0
        aspect = self.width / self.height
        dirs = (forward[None, None]
                + right[None, None] * (xs[None, :, None] * half * aspect)
                + down[None, None] * (ys[:, None, None] * half))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        return eye, dirs


@dataclass(frozen=True)
class RenderConfig:
    epsilon: float = 1e-4
    max_steps: int = 256
    max_distance: float = 4.0
    step_scale: float = 0.9       # relaxation against neural SDF overshoot
    light_direction: tuple = (0.408248, -0.408248, 0.816497)
    background: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class Hit:
    position: np.ndarray
    steps: int
    t: float


def sphere_trace(origin, direction, sdf_fn, config):
    """March one ray; returns a Hit or None on miss."""
    origins = np.asarray(origin, dtype=np.float64)[None]
    dirs = np.asarray(direction, dtype=np.float64)[None]
    hit_mask, t, steps = sphere_trace_batch(origins, dirs, sdf_fn, config)
    if not hit_mask[0]:
        return None
    return Hit(position=origins[0] + t[0] * dirs[0], steps=int(steps[0]),
               t=float(t[0]))


def sphere_trace_batch(origins, directions, sdf_fn, config):
    """Vectorized sphere tracing over N rays.

    ``sdf_fn`` maps (M, 3) points to (M,) distances.  Returns
    (hit mask (N,), travel distances (N,), step counts (N,)).
    """
    n = len(directions)
    t = np.zeros(n)
    steps = np.zeros(n, dtype=np.int32)
    hit = np.zeros(n, dtype=bool)
    alive = np.arange(n)
    for _ in range(config.max_steps):
        if len(alive) == 0:
            break
        p = origins[alive] + t[alive, None] * directions[alive]
        d = np.asarray(sdf_fn(p), dtype=np.float64).reshape(-1)
        steps[alive] += 1
        newly_hit = d < config.epsilon
        hit[alive[newly_hit]] = True
        t[alive] += np.maximum(config.step_scale * d, 0.0) * ~newly_hit
        alive = alive[~newly_hit & (t[alive] <= config.max_distance)]
    return hit, t, steps


def domain_guard(sdf_fn, radius=1.0):
    """Wrap a distance field trained inside a ball of the given radius.

    Outside the ball a neural field extrapolates freely, so rays starting
    at a distant camera cannot trust it.  The surface lies inside the ball,
    hence |p| - radius is a valid lower bound on the true distance there;
    marching on max(field, |p| - radius) walks the ray into the trained
    domain, where the network takes over unchanged.
    """
    def guarded(points):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        r = np.linalg.norm(p, axis=1)
        d = np.asarray(sdf_fn(p), dtype=np.float64).reshape(-1)
        return np.where(r > radius, np.maximum(d, r - radius), d)
    return guarded


def sdf_normal(sdf_fn, points, h=1e-4):
    """Central-difference gradient of the field, normalized to unit length."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    grad = np.empty_like(points)
    for axis in range(3):
        offset = np.zeros(3)
        offset[axis] = h
        grad[:, axis] = (np.asarray(sdf_fn(points + offset))
                         - np.asarray(sdf_fn(points - offset))) / (2.0 * h)
    norms = np.linalg.norm(grad, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateNormalError("zero gradient at a shading point")
    return grad / norms[:, None]


def srgb_to_linear(c):
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, 1.0)
    return np.where(c <= 0.0031308, c * 12.92,
                    1.055 * c ** (1.0 / 2.4) - 0.055)


def sample_texture(texture, uv, decode_srgb=None):
    """Bilinear texture lookup; uv is (N, 2) in [0,1]^2, v pointing up.

    sRGB textures are decoded to linear for shading; linear textures (normal
    maps) are returned as raw [0,1] values.
    """
    if decode_srgb is None:
        decode_srgb = texture.color_space == "srgb"
    uv = np.clip(np.atleast_2d(np.asarray(uv, dtype=np.float64)), 0.0, 1.0)
    h, w = texture.height, texture.width
    x = uv[:, 0] * (w - 1)
    y = (1.0 - uv[:, 1]) * (h - 1)  # v axis points up, rows go down
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    texels = texture.pixels[..., :3].astype(np.float64) / 255.0
    if decode_srgb:
        texels = srgb_to_linear(texels)
    c00 = texels[y0, x0]
    c10 = texels[y0, x1]
    c01 = texels[y1, x0]
    c11 = texels[y1, x1]
    return ((c00 * (1 - fx) + c10 * fx) * (1 - fy)
            + (c01 * (1 - fx) + c11 * fx) * fy)


@dataclass
class Scene:
    """Everything needed to shade: fields, textures, lighting."""

    sdf_fn: object                    # (N,3) -> (N,)
    uv_fn: object | None = None       # (N,3) -> (N,2)
    diffuse: TextureImage | None = None
    normal_map: TextureImage | None = None
    config: RenderConfig = field(default_factory=RenderConfig)


def _tangent_frames(uv_fn, points, normals, h=1e-3):
    """Per-hit (T, B) from central differences of the parameterization.

    The UV Jacobian along two orthonormal tangent directions gives the 3D
    direction of increasing u; Gram-Schmidt against the geometric normal
    completes the frame.  Rank-deficient Jacobians fall back to an
    arbitrary frame (caller shades with the geometric normal there).
    """
    n = normals
    helper = np.where(np.abs(n[:, 2:3]) < 0.9,
                      np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    t1 = np.cross(helper, n)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)

    du1 = (np.asarray(uv_fn(points + h * t1))
           - np.asarray(uv_fn(points - h * t1))) / (2 * h)
    du2 = (np.asarray(uv_fn(points + h * t2))
           - np.asarray(uv_fn(points - h * t2))) / (2 * h)
    # jac[i] = [[du/dt1, du/dt2], [dv/dt1, dv/dt2]]
    jac = np.stack([du1, du2], axis=-1)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    ok = np.abs(det) > 1e-12
    inv = np.zeros((len(points), 2, 2))
    safe_det = np.where(ok, det, 1.0)
    inv[:, 0, 0] = jac[:, 1, 1] / safe_det
    inv[:, 0, 1] = -jac[:, 0, 1] / safe_det
    inv[:, 1, 0] = -jac[:, 1, 0] / safe_det
    inv[:, 1, 1] = jac[:, 0, 0] / safe_det
    # columns of [t1 t2] @ inv are d(point)/du and d(point)/dv
    tangent_u = t1 * inv[:, 0, 0:1] + t2 * inv[:, 1, 0:1]
    # project out the normal component, normalize
    tangent_u -= n * np.sum(tangent_u * n, axis=1, keepdims=True)
    lens = np.linalg.norm(tangent_u, axis=1, keepdims=True)
    ok &= (lens[:, 0] > 1e-12)
    tangent_u = np.where(ok[:, None], tangent_u / np.where(lens > 0, lens, 1.0), t1)
    bitangent = np.cross(n, tangent_u)
    return tangent_u, bitangent, ok


def shade(points, scene):
    """Linear-space RGB for hit points (N, 3)."""
    cfg = scene.config
    normals = sdf_normal(scene.sdf_fn, points)
    if scene.uv_fn is not None and scene.diffuse is not None:
        uv = np.asarray(scene.uv_fn(points))
        albedo = sample_texture(scene.diffuse, uv)
        if scene.normal_map is not None:
            tangent, bitangent, ok = _tangent_frames(
                scene.uv_fn, points, normals)
            raw = sample_texture(scene.normal_map, uv, decode_srgb=False)
            local = 2.0 * raw - 1.0
            perturbed = (tangent * local[:, 0:1]
                         + bitangent * local[:, 1:2]
                         + normals * local[:, 2:3])
            lens = np.linalg.norm(perturbed, axis=1, keepdims=True)
            good = ok & (lens[:, 0] > 1e-12)
            normals = np.where(good[:, None], perturbed / np.where(lens > 0, lens, 1.0),
                               normals)
    else:
        albedo = np.full((len(points), 3), 0.75)
    light = np.asarray(cfg.light_direction, dtype=np.float64)
    light = light / np.linalg.norm(light)
    lambert = np.maximum(np.sum(normals * light, axis=1), 0.0)
    return np.clip(albedo * (AMBIENT + lambert[:, None]), 0.0, 1.0)


def render(scene, camera):
    """Render the scene to an 8-bit sRGB TextureImage."""
    cfg = scene.config
    eye, dirs = camera.primary_rays()
    flat_dirs = dirs.reshape(-1, 3)
    origins = np.broadcast_to(eye, flat_dirs.shape)
    hit, t, _ = sphere_trace_batch(origins, flat_dirs, scene.sdf_fn, cfg)

    linear = np.empty((len(flat_dirs), 3))
    linear[:] = srgb_to_linear(np.asarray(cfg.background))
    if hit.any():
        pts = origins[hit] + t[hit, None] * flat_dirs[hit]
        linear[hit] = shade(pts, scene)
    srgb = np.round(linear_to_srgb(linear) * 255.0).astype(np.uint8)
    pixels = srgb.reshape(camera.height, camera.width, 3)
    return TextureImage(width=camera.width, height=camera.height,
                        pixels=pixels)


def save_png(image, path):
    Image.fromarray(image.pixels).save(path)


def load_png(path):
    with Image.open(path) as img:
        pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return TextureImage(width=pixels.shape[1], height=pixels.shape[0],
                        pixels=pixels)
