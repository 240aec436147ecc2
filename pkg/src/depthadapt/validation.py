"""Input validation helpers used by estimators and core operations.

All checks raise :class:`~depthadapt.errors.ValidationError` with a message
naming the offending field, so estimator users get sklearn-style early
failures instead of shape errors deep inside torch.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def check_geometry(height, width, min_size=1, divisor=1):
    if height < min_size or width < min_size:
        raise ValidationError(
            f"geometry {height}x{width} below minimum {min_size}x{min_size}"
        )
    if height % divisor or width % divisor:
        raise ValidationError(
            f"geometry {height}x{width} not divisible by {divisor}; "
            f"pad to {-(-height // divisor) * divisor}x{-(-width // divisor) * divisor}"
        )


def check_depth_range(d_min, d_max):
    if not (0 < d_min < d_max) or not np.isfinite(d_min) or not np.isfinite(d_max):
        raise ValidationError(f"depth range ({d_min}, {d_max}) must satisfy 0 < min < max")


def check_image(image, name="image"):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(f"{name} must be HxWx3, got shape {image.shape}")
    if not np.isfinite(image).all():
        raise ValidationError(f"{name} contains non-finite values")
    if image.min() < 0 or image.max() > 1:
        raise ValidationError(f"{name} values must lie in [0, 1]")
    return image


def check_depth_map(depth, name="depth"):
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise ValidationError(f"{name} must be HxW, got shape {depth.shape}")
    if not np.isfinite(depth).all():
        raise ValidationError(f"{name} contains non-finite values")
    return depth


def check_mask(mask, shape, name="mask"):
    mask = np.asarray(mask)
    if mask.shape != tuple(shape):
        raise ValidationError(f"{name} shape {mask.shape} != expected {tuple(shape)}")
    if mask.dtype != np.bool_:
        raise ValidationError(f"{name} must be boolean, got dtype {mask.dtype}")
    return mask


def check_sample(sample):
    """Validate a Sample's internal consistency; returns the sample."""
    image = check_image(sample.image)
    sparse = check_depth_map(sample.sparse_depth, "sparse_depth")
    if image.shape[:2] != sparse.shape:
        raise ValidationError(
            f"image geometry {image.shape[:2]} != sparse geometry {sparse.shape}"
        )
    mask = check_mask(sample.sparse_mask, sparse.shape, "sparse_mask")
    if np.any(sparse[~mask] != 0):
        raise ValidationError("sparse_depth must be exactly 0 off the validity mask")
    if np.any(sparse[mask] <= 0):
        raise ValidationError("sparse_depth must be strictly positive on the mask")
    if sample.dense_gt is not None:
        gt = check_depth_map(sample.dense_gt, "dense_gt")
        if gt.shape != sparse.shape:
            raise ValidationError("dense_gt geometry differs from sparse_depth")
        check_mask(sample.gt_mask, gt.shape, "gt_mask")
        if np.any(gt[sample.gt_mask] <= 0):
            raise ValidationError("dense_gt must be strictly positive on its mask")
    return sample


def check_samples(samples, require_gt=False):
    samples = list(samples)
    if not samples:
        raise ValidationError("expected at least one sample")
    for s in samples:
        check_sample(s)
        if require_gt and s.dense_gt is None:
            raise ValidationError(f"sample {s.frame_id!r} lacks dense ground truth")
    geoms = {s.sparse_depth.shape for s in samples}
    if len(geoms) > 1:
        raise ValidationError(f"samples mix geometries: {sorted(geoms)}")
    return samples
