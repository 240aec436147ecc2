"""Patch-based energy network and its target construction.

The network scores a (prediction, sparse depth) pair as a low-resolution
map in (0, 1): one value per non-overlapping pixel tile, low meaning the
region looks like source-domain model output. Targets come from tile-mean
squared prediction error pushed through the bounded map
``y = 1 - exp(-delta / tau)``, so errors far above the temperature saturate
toward 1 while near-zero errors stay near 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ValidationError
from .validation import check_geometry

LEAKY_SLOPE = 0.1


@dataclass(frozen=True)
class EnergyArch:
    """Conv-stack descriptor: ``stages`` stride-2 5x5 layers, then a 3x3 head.

    Channel widths double from ``base_width`` up to ``max_width``; the
    default six-stage stack reaches 512. ``global_pool`` collapses features
    to 1x1 before the head, scoring the whole frame with a single value.
    ``input_scale`` normalizes metric depth into unit range for the convs.
    """

    stages: int = 6
    base_width: int = 16
    max_width: int = 512
    global_pool: bool = False
    input_scale: float = 0.1

    def __post_init__(self):
        if not (1 <= self.stages <= 6):
            raise ValidationError(f"energy stages must lie in 1..6, got {self.stages}")
        if self.base_width < 1 or self.max_width < self.base_width:
            raise ValidationError("energy widths must satisfy 1 <= base_width <= max_width")
        if self.input_scale <= 0:
            raise ValidationError("input_scale must be positive")

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(min(self.base_width * 2**i, self.max_width) for i in range(self.stages))

    @property
    def downsample(self) -> int:
        return 2**self.stages

    def grid_shape(self, height, width):
        if self.global_pool:
            return 1, 1
        check_geometry(height, width, divisor=self.downsample)
        return height // self.downsample, width // self.downsample

    def tile_shape(self, height, width):
        if self.global_pool:
            return height, width
        return self.downsample, self.downsample


@dataclass
class EnergyGrid:
    """An energy map plus the pixel-tile geometry of each cell."""

    values: np.ndarray          # (h, w) in [0, 1]
    tile_h: int
    tile_w: int

    @property
    def shape(self):
        return self.values.shape

    def tile_of(self, i, j):
        """Pixel rectangle (y0, y1, x0, x1) covered by cell (i, j)."""
        return i * self.tile_h, (i + 1) * self.tile_h, j * self.tile_w, (j + 1) * self.tile_w


class EnergyNet(nn.Module):
    """Region-energy scorer over 2-channel (prediction, sparse) input.

    ``tau`` (target temperature) and ``bound_to`` (fingerprint of the depth
    model this scorer was trained against) ride along with the parameters
    and are persisted in checkpoints. A scorer must never be applied to
    predictions of a different depth model.
    """

    def __init__(self, arch: EnergyArch):
        super().__init__()
        self.arch = arch
        layers = []
        c_in = 2
        for c_out in arch.widths:
            layers += [nn.Conv2d(c_in, c_out, 5, stride=2, padding=2), nn.LeakyReLU(LEAKY_SLOPE)]
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.head = nn.Conv2d(c_in, 1, 3, padding=1)
        self.tau: float | None = None
        self.bound_to: str | None = None

    def forward_logits(self, pred, sparse):
        if pred.shape != sparse.shape or pred.ndim != 4 or pred.shape[1] != 1:
            raise ValidationError(
                f"energy input must be matching (B,1,H,W) pairs, got "
                f"{tuple(pred.shape)} and {tuple(sparse.shape)}"
            )
        if not self.arch.global_pool:
            check_geometry(pred.shape[2], pred.shape[3], divisor=self.arch.downsample)
        x = torch.cat([pred, sparse], dim=1) * self.arch.input_scale
        x = self.features(x)
        if self.arch.global_pool:
            x = F.adaptive_avg_pool2d(x, 1)
        return self.head(x)

    def forward(self, pred, sparse):
        return torch.sigmoid(self.forward_logits(pred, sparse))


def build_energy_model(arch: EnergyArch, seed: int = 0) -> EnergyNet:
    torch.manual_seed(seed)
    return EnergyNet(arch)


def energy_forward(energy_model: EnergyNet, pred, sparse) -> EnergyGrid:
    """Score a single (prediction, sparse) pair; read-only, deterministic."""
    pred = np.asarray(pred, dtype=np.float32)
    sparse = np.asarray(sparse, dtype=np.float32)
    if pred.shape != sparse.shape or pred.ndim != 2:
        raise ValidationError("energy_forward expects matching HxW arrays")
    with torch.no_grad():
        e = energy_model(
            torch.from_numpy(pred)[None, None], torch.from_numpy(sparse)[None, None]
        )
    tile_h, tile_w = energy_model.arch.tile_shape(*pred.shape)
    return EnergyGrid(values=e[0, 0].numpy(), tile_h=tile_h, tile_w=tile_w)


def patch_mse(pred, gt, gt_mask, tile_shape):
    """Per-tile mean squared error over valid gt pixels.

    Returns ``(delta, supervised)``: tiles with zero valid pixels get
    delta 0 and supervised False, and are excluded from training losses.
    Accepts numpy arrays or torch tensors (shape (H, W) or (B, 1, H, W)).
    """
    is_numpy = isinstance(pred, np.ndarray)
    if is_numpy:
        pred = torch.from_numpy(np.asarray(pred, dtype=np.float64))
        gt = torch.from_numpy(np.asarray(gt, dtype=np.float64))
        gt_mask = torch.from_numpy(np.asarray(gt_mask))
    squeeze = pred.ndim == 2
    if squeeze:
        pred, gt, gt_mask = pred[None, None], gt[None, None], gt_mask[None, None]
    b, _, height, width = pred.shape
    th, tw = tile_shape
    if height % th or width % tw:
        raise ValidationError(f"geometry {height}x{width} not tiled by {th}x{tw}")
    mask = gt_mask.to(pred.dtype)
    sq = (pred - gt) ** 2 * mask
    sq = sq.reshape(b, height // th, th, width // tw, tw)
    counts = mask.reshape(b, height // th, th, width // tw, tw).sum(dim=(2, 4))
    delta = sq.sum(dim=(2, 4)) / counts.clamp(min=1)
    supervised = counts > 0
    delta = torch.where(supervised, delta, torch.zeros_like(delta))
    if squeeze:
        delta, supervised = delta[0], supervised[0]
    if is_numpy:
        return delta.numpy(), supervised.numpy()
    return delta, supervised


def map_to_energy(delta, tau):
    """Bounded target energy ``1 - exp(-delta / tau)``; monotone in delta.

    The result stays strictly below 1: huge delta/tau ratios would
    otherwise round to exactly 1 and break the open-interval contract.
    """
    if tau is None or tau <= 0 or not math.isfinite(tau):
        raise ValidationError(f"temperature must be finite and > 0, got {tau}")
    if isinstance(delta, torch.Tensor):
        if (delta < 0).any():
            raise ValidationError("delta must be >= 0")
        one = torch.ones((), dtype=delta.dtype)
        return torch.clamp(1.0 - torch.exp(-delta / tau), max=torch.nextafter(one, one - 1).item())
    delta = np.asarray(delta, dtype=np.float64)
    if (delta < 0).any():
        raise ValidationError("delta must be >= 0")
    return np.minimum(1.0 - np.exp(-delta / tau), np.nextafter(1.0, 0.0))


def tau_from_deltas(deltas, percentile=90.0):
    """Temperature putting the given error percentile at energy 0.5.

    With ``y = 1 - exp(-delta/tau)``, solving y = 0.5 at the chosen
    percentile gives ``tau = delta_pct / ln 2``. The percentile is the
    order statistic (``numpy`` method "lower").
    """
    if not (0 < percentile < 100):
        raise ValidationError(f"percentile must lie in (0, 100), got {percentile}")
    deltas = np.asarray(deltas, dtype=np.float64).ravel()
    if deltas.size == 0:
        raise ValidationError("tau calibration needs at least one error value")
    if (deltas < 0).any():
        raise ValidationError("delta values must be >= 0")
    delta_pct = float(np.percentile(deltas, percentile, method="lower"))
    return max(delta_pct, 1e-12) / math.log(2.0)


def calibrate_tau(depth_model, val_samples, percentile=90.0, tile_shape=None):
    """Calibrate tau from clean-prediction tile errors on a validation set."""
    from .depth_net import predict  # local import to avoid cycle at module load

    if not (0 < percentile < 100):
        raise ValidationError(f"percentile must lie in (0, 100), got {percentile}")
    val_samples = list(val_samples)
    if not val_samples:
        raise ValidationError("tau calibration needs a non-empty validation set")
    if tile_shape is None:
        raise ValidationError("tile_shape required (energy arch tile geometry)")
    deltas = []
    for sample in val_samples:
        if sample.dense_gt is None:
            raise ValidationError(f"sample {sample.frame_id!r} lacks gt for calibration")
        pred = predict(depth_model, [sample])[0]
        delta, supervised = patch_mse(pred, sample.dense_gt, sample.gt_mask, tile_shape)
        deltas.append(delta[supervised])
    deltas = np.concatenate(deltas)
    if deltas.size == 0:
        raise ValidationError("no supervised tiles found during tau calibration")
    return tau_from_deltas(deltas, percentile)
