"""Procedural scene synthesis, sparse-depth simulation, and covariate shifts.

Scenes are desk-scale stand-ins for driving/indoor footage: a ground plane
and back wall plus a handful of spheres and slanted boxes, rendered with a
pinhole camera, screen-space Lambertian shading, and per-object striped
albedo. Shading normals are derived from the depth buffer, so image edges
co-occur with depth discontinuities by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Sample
from .errors import ValidationError
from .validation import check_depth_range, check_geometry, check_sample

SHIFT_KINDS = ("identity", "fog", "illumination", "noise", "sparsity")
AIRLIGHT = 0.85          # fog blends toward this constant gray
AMBIENT = 0.3            # shading floor so shadowed faces stay visible
MIN_SPARSE_DEPTH = 1e-3  # meters; keeps perturbed/shifted points positive


@dataclass(frozen=True)
class ShiftSpec:
    """A covariate shift applied to a sample: kind, severity, seed.

    ``identity`` and magnitude 0 (any kind) are exact no-ops.
    """

    kind: str
    magnitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise ValidationError(f"unknown shift kind {self.kind!r}; expected {SHIFT_KINDS}")
        if not np.isfinite(self.magnitude) or self.magnitude < 0:
            raise ValidationError(f"shift magnitude must be finite and >= 0, got {self.magnitude}")


def _pixel_rays(height, width):
    """Unnormalized camera rays ((u-cx)/f, (v-cy)/f, 1) per pixel."""
    focal = float(width)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    return (u - cx) / focal, (v - cy) / focal, focal, cx, cy


def generate_scene(seed, geometry, depth_range=(1.0, 10.0)) -> Sample:
    """Render one synthetic frame; deterministic in ``seed``.

    Returns a sample with a fully valid dense ground truth in
    ``[d_min, d_max]`` and an empty sparse channel (see
    :func:`sample_sparse` to simulate measurements).
    """
    height, width = geometry
    check_geometry(height, width, min_size=64, divisor=64)
    d_min, d_max = float(depth_range[0]), float(depth_range[1])
    check_depth_range(d_min, d_max)
    rng = np.random.default_rng(seed)
    rx, ry, focal, cx, cy = _pixel_rays(height, width)

    span = d_max - d_min
    # Slanted back wall, then ground plane where it is closer.
    uu0 = (rx * focal + cx) / width
    wall = d_min + span * (rng.uniform(0.7, 0.9) + rng.uniform(-0.25, 0.25) * (uu0 - 0.5))
    depth = np.clip(wall, d_min, d_max)
    object_id = np.zeros((height, width), dtype=np.int32)
    floor_y = rng.uniform(0.8, 1.6)
    with np.errstate(divide="ignore"):
        floor_z = np.where(ry > 1e-6, floor_y / np.maximum(ry, 1e-6), np.inf)
    closer = floor_z < depth
    depth[closer] = floor_z[closer]
    object_id[closer] = 1

    next_id = 2
    for _ in range(int(rng.integers(4, 8))):
        if rng.random() < 0.5:
            # Sphere: analytic ray intersection against the pixel grid.
            z_c = d_min + span * rng.uniform(0.15, 0.65)
            x_c = z_c * rng.uniform(-0.35, 0.35)
            y_c = z_c * rng.uniform(-0.45, 0.3) * height / width
            radius = z_c * rng.uniform(0.08, 0.22)
            dx, dy, dz = rx, ry, np.ones_like(rx)
            norm2 = dx * dx + dy * dy + 1.0
            proj = (dx * x_c + dy * y_c + dz * z_c) / norm2
            dist2 = x_c**2 + y_c**2 + z_c**2 - proj * proj * norm2
            disc = radius * radius - dist2
            hit = disc > 0
            t = np.where(hit, proj - np.sqrt(np.maximum(disc, 0) / norm2), np.inf)
            z_hit = t  # z-coordinate of the hit point (dz == 1)
        else:
            # Slanted box face: image-space rectangle with a planar depth ramp.
            z0 = d_min + span * rng.uniform(0.1, 0.6)
            u0, v0 = rng.uniform(0.05, 0.7), rng.uniform(0.05, 0.7)
            du, dv = rng.uniform(0.12, 0.3), rng.uniform(0.12, 0.3)
            su, sv = rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)
            uu = (rx * focal + cx) / width
            vv = (ry * focal + cy) / height
            hit = (uu >= u0) & (uu <= u0 + du) & (vv >= v0) & (vv <= v0 + dv)
            z_hit = z0 + su * (uu - u0) * span * 0.3 + sv * (vv - v0) * span * 0.3
        closer = hit & (z_hit > 0.05) & (z_hit < depth)
        depth[closer] = z_hit[closer]
        object_id[closer] = next_id
        next_id += 1

    depth = np.clip(depth, d_min, d_max)

    # Screen-space normals from the depth buffer drive Lambertian shading.
    gz_v, gz_u = np.gradient(depth)
    normal = np.stack([-gz_u * focal / depth, -gz_v * focal / depth, np.ones_like(depth)], axis=-1)
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    light = rng.normal(size=3) * np.array([0.4, 0.4, 0.15]) + np.array([0.0, 0.0, -1.0])
    light /= np.linalg.norm(light)
    shade = AMBIENT + (1 - AMBIENT) * np.clip((normal * -light).sum(-1), 0.0, 1.0)

    # Per-object base color plus sinusoidal stripes for in-object texture.
    n_ids = next_id
    base = rng.uniform(0.25, 0.95, size=(n_ids, 3))
    freq = rng.uniform(2.0, 10.0, size=n_ids)
    phase = rng.uniform(0.0, 2 * np.pi, size=n_ids)
    angle = rng.uniform(0.0, np.pi, size=n_ids)
    uu = (rx * focal + cx) / width
    vv = (ry * focal + cy) / height
    coord = uu * np.cos(angle[object_id]) + vv * np.sin(angle[object_id])
    stripes = 1.0 + 0.25 * np.sin(2 * np.pi * freq[object_id] * coord + phase[object_id])
    albedo = base[object_id] * stripes[..., None]
    image = np.clip(albedo * shade[..., None], 0.0, 1.0)

    sample = Sample(
        image=image.astype(np.float32),
        sparse_depth=np.zeros((height, width), dtype=np.float32),
        sparse_mask=np.zeros((height, width), dtype=bool),
        dense_gt=depth.astype(np.float32),
        gt_mask=np.ones((height, width), dtype=bool),
        frame_id=f"scene-{seed:08d}",
    )
    return check_sample(sample)


def depth_gradient_magnitude(dense) -> np.ndarray:
    """Image-plane depth-gradient magnitude; the ranking key of gradient_topk."""
    gy, gx = np.gradient(np.asarray(dense, dtype=np.float64))
    return np.sqrt(gx * gx + gy * gy)


def sample_sparse(dense, n_points, strategy="uniform", seed=0):
    """Simulate sparse measurements from a fully valid dense map.

    ``uniform`` draws pixels without replacement; ``gradient_topk`` takes
    the pixels with the largest depth-gradient magnitude (a deterministic
    proxy for feature-tracked points clustering at structure), breaking
    ties by a seeded permutation. Returns ``(sparse, mask)`` with exactly
    ``min(n_points, H*W)`` valid points copied from ``dense``.
    """
    dense = np.asarray(dense)
    if n_points < 0:
        raise ValidationError(f"n_points must be >= 0, got {n_points}")
    if not np.isfinite(dense).all() or (dense <= 0).any():
        raise ValidationError("dense map must be finite and strictly positive everywhere")
    height, width = dense.shape
    n = min(int(n_points), height * width)
    rng = np.random.default_rng(seed)
    flat_idx = np.arange(height * width)
    if n == 0:
        chosen = flat_idx[:0]
    elif strategy == "uniform":
        chosen = rng.choice(flat_idx, size=n, replace=False)
    elif strategy == "gradient_topk":
        magnitude = depth_gradient_magnitude(dense).ravel()
        tiebreak = rng.permutation(height * width)
        order = np.lexsort((tiebreak, -magnitude))
        chosen = order[:n]
    else:
        raise ValidationError(f"unknown sparse strategy {strategy!r}")
    mask = np.zeros(height * width, dtype=bool)
    mask[chosen] = True
    mask = mask.reshape(height, width)
    sparse = np.where(mask, dense, 0.0).astype(np.float32)
    return sparse, mask


def simulate_sensor_points(dense, n_points, strategy="gradient_topk", seed=0, blind_top=0.0):
    """Sparse measurements from a range sensor with a limited vertical field.

    Real range sensors cover only the lower part of the frame; ``blind_top``
    is the fraction of top rows left without measurements. 0 reduces to
    :func:`sample_sparse` over the full frame.
    """
    dense = np.asarray(dense)
    if not (0 <= blind_top < 1):
        raise ValidationError(f"blind_top must lie in [0, 1), got {blind_top}")
    height, width = dense.shape
    top = int(round(blind_top * height))
    sparse_band, mask_band = sample_sparse(dense[top:], n_points, strategy, seed)
    sparse = np.zeros((height, width), dtype=np.float32)
    mask = np.zeros((height, width), dtype=bool)
    sparse[top:], mask[top:] = sparse_band, mask_band
    return sparse, mask


def apply_shift(sample: Sample, spec: ShiftSpec) -> Sample:
    """Apply a covariate shift; the dense ground truth is never modified.

    fog     blends the image toward AIRLIGHT with weight 1 - exp(-m * depth)
    illumination  gamma/gain curve: clip(I^(1+m) / (1 + 0.5 m))
    noise   adds seeded Gaussian pixel noise (std m) and clips to [0, 1]
    sparsity  drops a seeded m-fraction of valid sparse points (severity 0
              keeps all points, 1 drops all; see the magnitude-0 no-op rule)
    """
    check_sample(sample)
    out = sample.copy()
    if spec.kind == "identity" or spec.magnitude == 0:
        return out
    m = float(spec.magnitude)
    if spec.kind == "fog":
        if sample.dense_gt is None:
            raise ValidationError("fog shift needs dense ground truth for transmittance")
        trans = np.exp(-m * sample.dense_gt.astype(np.float64))[..., None]
        foggy = sample.image * trans + AIRLIGHT * (1.0 - trans)
        out.image = np.clip(foggy, 0.0, 1.0).astype(np.float32)
    elif spec.kind == "illumination":
        curved = np.power(sample.image.astype(np.float64), 1.0 + m) / (1.0 + 0.5 * m)
        out.image = np.clip(curved, 0.0, 1.0).astype(np.float32)
    elif spec.kind == "noise":
        rng = np.random.default_rng(spec.seed)
        noisy = sample.image + m * rng.standard_normal(sample.image.shape)
        out.image = np.clip(noisy, 0.0, 1.0).astype(np.float32)
    elif spec.kind == "sparsity":
        if m > 1:
            raise ValidationError(f"sparsity magnitude must lie in [0, 1], got {m}")
        rng = np.random.default_rng(spec.seed)
        valid = np.flatnonzero(sample.sparse_mask)
        keep_count = int(round((1.0 - m) * valid.size))
        kept = rng.choice(valid, size=keep_count, replace=False)
        mask = np.zeros(sample.sparse_mask.size, dtype=bool)
        mask[kept] = True
        out.sparse_mask = mask.reshape(sample.sparse_mask.shape)
        out.sparse_depth = np.where(out.sparse_mask, sample.sparse_depth, 0.0).astype(np.float32)
    return check_sample(out)


def make_samples(
    n,
    geometry,
    depth_range,
    n_points,
    strategy="uniform",
    seed=0,
    shift: ShiftSpec | None = None,
    id_prefix="frame",
    blind_top=0.0,
):
    """Generate ``n`` complete samples (scene + sparse channel + optional shift)."""
    samples = []
    for i in range(n):
        scene = generate_scene(seed + i, geometry, depth_range)
        sparse, mask = simulate_sensor_points(
            scene.dense_gt, n_points, strategy, seed=seed + i, blind_top=blind_top
        )
        scene.sparse_depth = sparse
        scene.sparse_mask = mask
        scene.frame_id = f"{id_prefix}-{i:05d}"
        if shift is not None:
            scene = apply_shift(scene, ShiftSpec(shift.kind, shift.magnitude, shift.seed + i))
        samples.append(scene)
    return samples
