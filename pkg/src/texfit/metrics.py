"""Quantitative evaluation: parameterization distortion and image fidelity.

Distortion of the per-triangle affine map from the isometrically flattened
3D triangle onto its UV triangle is max(sigma_max, 1/sigma_min) of the 2x2
Jacobian's singular values; 1 means isometric.  Image fidelity is MSE on
the 0-255 scale, PSNR derived from it, and single-scale SSIM on luma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PSNR_INFINITE = float("inf")

# standard SSIM constants and window
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class DistortionStats:
    delta_mean: float
    delta_max: float
    delta_std: float
    triangle_count: int
    excluded_count: int


@dataclass(frozen=True)
class ImageMetrics:
    mse: float
    psnr: float
    ssim: float


def flatten_triangle(tri3d):
    """Isometric 2D coordinates of a 3D triangle: e1 along the first edge."""
    a, b, c = np.asarray(tri3d, dtype=np.float64)
    e1 = b - a
    l1 = np.linalg.norm(e1)
    if l1 == 0.0:
        raise MetricError("degenerate triangle: zero-length first edge")
    x_axis = e1 / l1
    ac = c - a
    x2 = float(ac @ x_axis)
    perp = ac - x2 * x_axis
    y2 = float(np.linalg.norm(perp))
    return np.array([[0.0, 0.0], [l1, 0.0], [x2, y2]])


def triangle_distortion(tri3d, tri2d):
    """delta = max(sigma_max, 1/sigma_min) of the flattened->UV Jacobian."""
    flat = flatten_triangle(tri3d)
    uv = np.asarray(tri2d, dtype=np.float64)
    src = np.column_stack([flat[1] - flat[0], flat[2] - flat[0]])
    dst = np.column_stack([uv[1] - uv[0], uv[2] - uv[0]])
    if abs(np.linalg.det(src)) < 1e-300:
        raise MetricError("degenerate 3D triangle")
    jac = dst @ np.linalg.inv(src)
    sigma = np.linalg.svd(jac, compute_uv=False)
    s_max, s_min = float(sigma[0]), float(sigma[1])
    if s_min <= 0.0:
        raise MetricError("degenerate UV triangle")
    return max(s_max, 1.0 / s_min)


def distortion_per_triangle(mesh, uvs_of_vertex=None):
    """delta for every triangle; NaN marks excluded (degenerate) triangles.

    With ``uvs_of_vertex`` (V, 2) the UV corners come from a per-vertex
    parameterization (e.g. a network evaluated at the vertices); otherwise
    the mesh's own indexed UVs are used.
    """
    corners = mesh.triangle_corners()
    if uvs_of_vertex is None:
        uv_corners = mesh.triangle_uvs()
    else:
        uv_corners = np.asarray(uvs_of_vertex)[mesh.pos_idx]
    deltas = np.full(mesh.num_triangles, np.nan)
    for i in range(mesh.num_triangles):
        try:
            deltas[i] = triangle_distortion(corners[i], uv_corners[i])
        except MetricError:
            pass
    return deltas


def distortion_stats(mesh, uvs_of_vertex=None):
    """Aggregate per-triangle delta to mean / max / population std."""
    deltas = distortion_per_triangle(mesh, uvs_of_vertex)
    valid = deltas[np.isfinite(deltas)]
    if len(valid) == 0:
        raise MetricError("all triangles are degenerate")
    return DistortionStats(
        delta_mean=float(valid.mean()),
        delta_max=float(valid.max()),
        delta_std=float(valid.std()),
        triangle_count=len(valid),
        excluded_count=int(len(deltas) - len(valid)),
    )


def psnr_from_mse(mse, peak=255.0):
    if mse < 0:
        raise MetricError("mse must be >= 0")
    if mse == 0:
        return PSNR_INFINITE
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_kernel(size, sigma):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    return g / g.sum()


def _windowed_mean(img, kernel):
    # separable valid-mode filtering
    tmp = np.apply_along_axis(
        lambda row: np.convolve(row, kernel, mode="valid"), 1, img)
    return np.apply_along_axis(
        lambda col: np.convolve(col, kernel, mode="valid"), 0, tmp)


def _luma(pixels):
    rgb = pixels[..., :3].astype(np.float64)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def ssim(a, b):
    """Single-scale SSIM on luma, 11x11 Gaussian window sigma=1.5."""
    if a.pixels.shape[:2] != b.pixels.shape[:2]:
        raise MetricError("image sizes differ")
    x = _luma(a.pixels)
    y = _luma(b.pixels)
    kernel = _gaussian_kernel(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_x = _windowed_mean(x, kernel)
    mu_y = _windowed_mean(y, kernel)
    xx = _windowed_mean(x * x, kernel) - mu_x * mu_x
    yy = _windowed_mean(y * y, kernel) - mu_y * mu_y
    xy = _windowed_mean(x * y, kernel) - mu_x * mu_y
    c1 = (_SSIM_K1 * 255.0) ** 2
    c2 = (_SSIM_K2 * 255.0) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def image_metrics(a, b):
    """MSE (0-255 scale, channel-averaged), PSNR, and SSIM between images."""
    if a.pixels.shape != b.pixels.shape:
        raise MetricError(
            f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}")
    diff = (a.pixels[..., :3].astype(np.float64)
            - b.pixels[..., :3].astype(np.float64))
    mse = float(np.mean(diff * diff))
    return ImageMetrics(mse=mse, psnr=psnr_from_mse(mse), ssim=ssim(a, b))
