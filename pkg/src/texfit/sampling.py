"""Training/test set generation with importance sampling near the surface.

Uniform ball samples are weighted by exp(-beta * |distance|) and
down-sampled with replacement using the self-normalized importance
estimator, concentrating the training set where the networks need
resolution.  All randomness flows from one 64-bit seed through named
Philox sub-streams, so sample sets are bit-reproducible across platforms.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"NISPSAMP"
DEFAULT_BATCH_SIZE = 2048


class DegenerateWeightsError(ValueError):
    """All importance weights are zero; nothing can be down-sampled."""


@dataclass(frozen=True)
class SamplerConfig:
    n: int
    beta: float = 60.0
    oversample_factor: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.oversample_factor < 1:
            raise ValueError("oversample_factor must be >= 1")


@dataclass
class SampleSet:
    """Points with their distance / UV / chart targets."""

    points: np.ndarray      # (n, 3) float32
    sdf: np.ndarray         # (n,)   float32
    uv: np.ndarray          # (n, 2) float32
    component: np.ndarray   # (n,)   uint16
    k: int = 1
    batch_size: int = DEFAULT_BATCH_SIZE

    def __len__(self):
        return len(self.points)


def derive_rng(seed, name):
    """Counter-based generator for the named sub-stream of a master seed."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def sample_uniform_ball(rng, m):
    """m i.i.d. points uniform in the closed unit ball (cube rejection)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    chunks = []
    remaining = m
    while remaining > 0:
        # acceptance rate is pi/6, draw with headroom
        draw = max(int(remaining * 2.2), 64)
        cand = rng.uniform(-1.0, 1.0, size=(draw, 3))
        keep = cand[np.sum(cand * cand, axis=1) <= 1.0]
        chunks.append(keep[:remaining])
        remaining -= len(chunks[-1])
    return np.concatenate(chunks, axis=0)


def importance_weights(points, oracle, beta):
    """w(p) = exp(-beta * |distance to surface|), in (0, 1]."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    return np.exp(-beta * np.abs(oracle.unsigned_distances(points)))


def downsample(weights, n, rng):
    """Indices of n categorical draws with replacement, p_i = w_i / sum(w)."""
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if total <= 0.0:
        raise DegenerateWeightsError("all importance weights are zero")
    return rng.choice(len(weights), size=n, replace=True, p=weights / total)


def sample_surface(mesh, rng, n):
    """n points uniform on the mesh surface (area-weighted, sqrt-warped)."""
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0.0:
        raise ValueError("mesh has zero total area")
    tri = rng.choice(mesh.num_triangles, size=n, replace=True, p=areas / total)
    r1 = rng.uniform(size=n)
    r2 = rng.uniform(size=n)
    s = np.sqrt(r1)
    alpha = 1.0 - s
    beta = s * (1.0 - r2)
    gamma = s * r2
    corners = mesh.triangle_corners()[tri]
    points = (alpha[:, None] * corners[:, 0]
              + beta[:, None] * corners[:, 1]
              + gamma[:, None] * corners[:, 2])
    return points


def label_samples(points, oracle, batch_size=DEFAULT_BATCH_SIZE):
    """Fill SDF / UV / chart targets for each point via oracle queries.

    UVs are clamped to [0,1]^2; assets occasionally interpolate slightly
    outside due to wrap modes.
    """
    points = np.asarray(points, dtype=np.float64)
    _, tris, bary, dists = oracle.closest_points(points)
    inside = oracle.winding_numbers(points) > 0.5
    sdf = np.where(inside, -dists, dists)
    uv = np.clip(np.sum(oracle._uv[tris] * bary[:, :, None], axis=1), 0.0, 1.0)
    component = oracle._chart[tris]
    return SampleSet(
        points=points.astype(np.float32),
        sdf=sdf.astype(np.float32),
        uv=uv.astype(np.float32),
        component=component.astype(np.uint16),
        k=int(oracle.mesh.chart_count),
        batch_size=batch_size,
    )


def build_training_set(oracle, config):
    """Importance-sampled training set: uniform ball, weight, down-sample, label."""
    m = config.n * config.oversample_factor
    rng_ball = derive_rng(config.seed, "uniform-ball")
    rng_pick = derive_rng(config.seed, "downsample")
    uniform = sample_uniform_ball(rng_ball, m)
    weights = importance_weights(uniform, oracle, config.beta)
    idx = downsample(weights, config.n, rng_pick)
    return label_samples(uniform[idx], oracle)


def build_surface_test_set(oracle, n, seed, name="surface-test"):
    """Plain uniform surface samples with targets (validation/test set)."""
    rng = derive_rng(seed, name)
    points = sample_surface(oracle.mesh, rng, n)
    return label_samples(points, oracle)


def save_samples(path, samples):
    """Flat binary serialization (little-endian, fixed field order)."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<QI", len(samples), samples.k))
        f.write(np.ascontiguousarray(samples.points, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(samples.sdf, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(samples.uv, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(samples.component, dtype="<u2").tobytes())


def load_samples(path):
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"not a sample file (magic {magic!r})")
        count, k = struct.unpack("<QI", f.read(12))
        points = np.frombuffer(f.read(count * 12), dtype="<f4").reshape(count, 3)
        sdf = np.frombuffer(f.read(count * 4), dtype="<f4")
        uv = np.frombuffer(f.read(count * 8), dtype="<f4").reshape(count, 2)
        component = np.frombuffer(f.read(count * 2), dtype="<u2")
        trailing = f.read(1)
        if trailing:
            raise ValueError("trailing bytes after sample payload")
    return SampleSet(points=points.copy(), sdf=sdf.copy(), uv=uv.copy(),
                     component=component.copy(), k=int(k))
