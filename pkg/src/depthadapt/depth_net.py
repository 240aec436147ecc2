"""Dual-branch sparse-to-dense depth completion network.

Layout (all convs 3x3 with bias unless noted, each followed by BatchNorm
and ReLU; ``w`` = base_width, ``S`` = stages):

  image encoder   stem 3->w, then stage i: w*2^(i-1) -> w*2^i, stride 2
  sparse encoder  stem 2->w (depth + validity channels), same stages
  fusion          1x1 conv 2*w*2^S -> w*2^S at the bottleneck
  decoder         stage s = S..1: nearest 2x upsample, concat image skip,
                  conv 3*w*2^(s-1) -> w*2^(s-1)
  head            1x1 conv w -> 1 (linear), then softplus * (d_max - d_min)

The softplus head keeps every prediction strictly positive without a hard
zero region. A residual bottleneck adapter can be inserted after a chosen
image-encoder stage; its restoring 1x1 conv is zero-initialized so the
network function is exactly unchanged at insertion. Backbone parameters
(everything outside the adapter) are what test-time procedures must never
touch.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ValidationError
from .validation import check_depth_range, check_geometry

NORM_POLICIES = ("frozen", "batch", "ema")
EMA_RATE = 0.1


@dataclass(frozen=True)
class DepthArch:
    """Architecture descriptor; fully determines the parameter layout."""

    base_width: int = 16
    stages: int = 3
    adapt_stage: int = 2
    adapt_reduction: int = 4
    depth_min: float = 1.0
    depth_max: float = 10.0

    def __post_init__(self):
        if self.stages < 2:
            raise ValidationError(f"stage count must be >= 2, got {self.stages}")
        if self.base_width < 1:
            raise ValidationError(f"base_width must be >= 1, got {self.base_width}")
        if not (1 <= self.adapt_stage <= self.stages):
            raise ValidationError(
                f"adapt_stage {self.adapt_stage} outside valid range 1..{self.stages}"
            )
        if self.adapt_reduction < 1:
            raise ValidationError("adapt_reduction must be >= 1")
        check_depth_range(self.depth_min, self.depth_max)

    @property
    def downsample(self) -> int:
        return 2**self.stages

    def stage_width(self, i: int) -> int:
        return self.base_width * 2**i


def _conv_bn(c_in, c_out, kernel=3, stride=1):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel, stride=stride, padding=kernel // 2),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class AdaptationModule(nn.Module):
    """Residual channel bottleneck; exact identity at initialization."""

    def __init__(self, channels, reduction):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.squeeze = nn.Conv2d(channels, hidden, 1)
        self.act = nn.ReLU(inplace=True)
        self.restore = nn.Conv2d(hidden, channels, 1)
        nn.init.zeros_(self.restore.weight)
        nn.init.zeros_(self.restore.bias)

    def forward(self, x):
        return x + self.restore(self.act(self.squeeze(x)))


class DepthNet(nn.Module):
    def __init__(self, arch: DepthArch):
        super().__init__()
        self.arch = arch
        w, s = arch.base_width, arch.stages
        self.image_stem = _conv_bn(3, w)
        self.image_stages = nn.ModuleList(
            _conv_bn(arch.stage_width(i - 1), arch.stage_width(i), stride=2)
            for i in range(1, s + 1)
        )
        self.sparse_stem = _conv_bn(2, w)
        self.sparse_stages = nn.ModuleList(
            _conv_bn(arch.stage_width(i - 1), arch.stage_width(i), stride=2)
            for i in range(1, s + 1)
        )
        bott = arch.stage_width(s)
        self.fuse = _conv_bn(2 * bott, bott, kernel=1)
        self.decoder = nn.ModuleList(
            _conv_bn(3 * arch.stage_width(i - 1), arch.stage_width(i - 1))
            for i in range(s, 0, -1)
        )
        self.head = nn.Conv2d(w, 1, 1)
        self.adapter: AdaptationModule | None = None
        self.adapter_stage: int | None = None
        self.norm_policy = "frozen"

    def _check_input(self, image, sparse, mask):
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValidationError(f"image batch must be (B,3,H,W), got {tuple(image.shape)}")
        if sparse.shape != mask.shape or sparse.shape[1] != 1:
            raise ValidationError("sparse and mask batches must both be (B,1,H,W)")
        if image.shape[0] != sparse.shape[0] or image.shape[2:] != sparse.shape[2:]:
            raise ValidationError(
                f"image {tuple(image.shape)} and sparse {tuple(sparse.shape)} disagree"
            )
        check_geometry(image.shape[2], image.shape[3], divisor=self.arch.downsample)

    def forward(self, image, sparse, mask):
        self._check_input(image, sparse, mask)
        f = self.image_stem(image)
        skips = [f]
        for i, stage in enumerate(self.image_stages, start=1):
            f = stage(f)
            if self.adapter is not None and i == self.adapter_stage:
                f = self.adapter(f)
            skips.append(f)
        g = self.sparse_stem(torch.cat([sparse, mask], dim=1))
        for stage in self.sparse_stages:
            g = stage(g)
        x = self.fuse(torch.cat([f, g], dim=1))
        for s, block in zip(range(self.arch.stages, 0, -1), self.decoder):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = block(torch.cat([x, skips[s - 1]], dim=1))
        out = self.head(x)
        return F.softplus(out) * (self.arch.depth_max - self.arch.depth_min)

    # -- parameter partitioning ------------------------------------------

    def theta_parameters(self):
        """Backbone (frozen-at-test-time) parameters, by name."""
        return [(n, p) for n, p in self.named_parameters() if not n.startswith("adapter.")]

    def psi_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if n.startswith("adapter.")]

    def norm_buffers(self):
        return [
            (n, b)
            for n, b in self.named_buffers()
            if n.endswith(("running_mean", "running_var", "num_batches_tracked"))
        ]


def build_model(arch: DepthArch, seed: int = 0) -> DepthNet:
    """Construct a depth net with seeded initialization (deterministic)."""
    torch.manual_seed(seed)
    return DepthNet(arch)


def insert_adaptation(model: DepthNet, stage: int | None = None, seed: int = 0) -> DepthNet:
    """Attach the residual adapter; a double insertion is rejected.

    The restoring conv is zero-initialized, so predictions are bitwise
    unchanged until the adapter is trained.
    """
    if model.adapter is not None:
        raise ValidationError("adaptation module already inserted")
    stage = model.arch.adapt_stage if stage is None else stage
    if not (1 <= stage <= model.arch.stages):
        raise ValidationError(
            f"adaptation stage {stage} outside valid range 1..{model.arch.stages}"
        )
    torch.manual_seed(seed)
    model.adapter = AdaptationModule(model.arch.stage_width(stage), model.arch.adapt_reduction)
    model.adapter_stage = stage
    return model


def partition_parameters(model: DepthNet, norm_policy: str = "frozen"):
    """Split named state into (adaptable, frozen) per the test-time contract.

    Adaptable: adapter parameters, plus normalization statistics when the
    policy updates them. Frozen: every backbone parameter. The two sets are
    disjoint and cover all parameters plus norm buffers.
    """
    if model.adapter is None:
        raise ValidationError("no adaptation module present; call insert_adaptation first")
    if norm_policy not in NORM_POLICIES:
        raise ValidationError(f"unknown norm policy {norm_policy!r}; expected {NORM_POLICIES}")
    adaptable = {n for n, _ in model.psi_parameters()}
    if norm_policy != "frozen":
        adaptable |= {n for n, _ in model.norm_buffers()}
    everything = {n for n, _ in model.named_parameters()} | {n for n, _ in model.norm_buffers()}
    return adaptable, everything - adaptable


def set_norm_policy(model: DepthNet, policy: str):
    """Configure BatchNorm behavior for test-time forwards.

    frozen: stored running statistics, nothing updated.
    batch:  statistics recomputed from the current batch, never committed.
    ema:    batch statistics used and folded into the stored ones (rate 0.1).
    """
    if policy not in NORM_POLICIES:
        raise ValidationError(f"unknown norm policy {policy!r}; expected {NORM_POLICIES}")
    model.eval()
    for m in model.modules():
        if isinstance(m, nn.BatchNorm2d):
            if policy == "frozen":
                m.track_running_stats = True
                m.eval()
            elif policy == "batch":
                m.track_running_stats = False
                m.train()
            else:
                m.track_running_stats = True
                m.momentum = EMA_RATE
                m.train()
    model.norm_policy = policy


@contextlib.contextmanager
def norm_policy_scope(model: DepthNet, policy: str):
    previous = model.norm_policy
    set_norm_policy(model, policy)
    try:
        yield model
    finally:
        set_norm_policy(model, previous)


def masked_l1(pred, target, mask):
    """Supervised loss: mean absolute error over valid target pixels."""
    mask = mask.to(pred.dtype)
    total = mask.sum()
    if total.item() == 0:
        raise ValidationError("masked_l1 needs at least one valid target pixel")
    return ((pred - target).abs() * mask).sum() / total


def batch_tensors(samples, dtype=torch.float32, device="cpu"):
    """Stack samples into (image, sparse, mask, gt, gt_mask) batch tensors.

    gt tensors are None when any sample lacks dense ground truth.
    """
    image = torch.from_numpy(np.stack([s.image for s in samples])).permute(0, 3, 1, 2)
    sparse = torch.from_numpy(np.stack([s.sparse_depth for s in samples]))[:, None]
    mask = torch.from_numpy(np.stack([s.sparse_mask for s in samples]))[:, None]
    out = [image.to(dtype), sparse.to(dtype), mask.to(dtype)]
    if all(s.dense_gt is not None for s in samples):
        gt = torch.from_numpy(np.stack([s.dense_gt for s in samples]))[:, None]
        gt_mask = torch.from_numpy(np.stack([s.gt_mask for s in samples]))[:, None]
        out += [gt.to(dtype), gt_mask.to(dtype)]
    else:
        out += [None, None]
    return tuple(t.to(device) if t is not None else None for t in out)


def predict(model: DepthNet, samples, use_batch_stats: bool = False) -> np.ndarray:
    """Dense predictions for a list of samples, shape (B, H, W).

    With ``use_batch_stats=False`` the forward runs with frozen norms and is
    a pure function of (parameters, inputs). With ``use_batch_stats=True``
    the batch's own statistics are used transiently (never committed),
    matching what the adaptation loop saw.
    """
    image, sparse, mask, _, _ = batch_tensors(samples)
    policy = "batch" if use_batch_stats else "frozen"
    with norm_policy_scope(model, policy), torch.no_grad():
        pred = model(image, sparse, mask)
    return pred[:, 0].numpy()


