"""Single-step sign-gradient input perturbations.

Used to synthesize out-of-distribution depth predictions from source data
alone: one forward/backward of the supervised loss, then a signed step on
the image (clipped back to [0, 1]) and on the valid sparse points (clamped
positive, at most d_max). Both perturbations stay inside an l-infinity
ball of their epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .depth_net import DepthNet, batch_tensors, masked_l1, norm_policy_scope
from .errors import ValidationError
from .synth import MIN_SPARSE_DEPTH

DEFAULT_EPS_IMAGE = 2.0 / 255.0
DEFAULT_EPS_SPARSE = 0.05


@dataclass(frozen=True)
class PerturbConfig:
    eps_image: float = DEFAULT_EPS_IMAGE
    eps_sparse: float = DEFAULT_EPS_SPARSE

    def __post_init__(self):
        for name, eps in (("eps_image", self.eps_image), ("eps_sparse", self.eps_sparse)):
            if not np.isfinite(eps) or eps < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {eps}")


def fgsm_perturb_tensors(model: DepthNet, image, sparse, mask, gt, gt_mask, cfg: PerturbConfig):
    """Tensor-level attack; returns detached (image~, sparse~).

    Inputs are the usual (B,3,H,W)/(B,1,H,W) batch tensors. The model's
    parameters receive no updates and no gradients; only input gradients
    are computed. sign(0) = 0, so a zero-gradient pixel is left alone.
    """
    if gt is None:
        raise ValidationError("perturbation needs dense ground truth for the supervised loss")
    image = image.detach().clone().requires_grad_(True)
    sparse = sparse.detach().clone().requires_grad_(True)
    with norm_policy_scope(model, "frozen"):
        pred = model(image, sparse, mask)
        loss = masked_l1(pred, gt, gt_mask)
    g_image, g_sparse = torch.autograd.grad(loss, [image, sparse])
    image_adv = torch.clamp(image.detach() + cfg.eps_image * g_image.sign(), 0.0, 1.0)
    sparse = sparse.detach()
    sparse_adv = sparse + cfg.eps_sparse * g_sparse.sign()
    # Clamp into (0, d_max]; the floor never moves a point by more than the
    # step itself, so the l-infinity bound survives clamping.
    floor = torch.clamp(sparse, max=MIN_SPARSE_DEPTH)
    sparse_adv = torch.maximum(sparse_adv, floor)
    sparse_adv = torch.minimum(sparse_adv, torch.full_like(sparse_adv, model.arch.depth_max))
    sparse_adv = torch.where(mask > 0, sparse_adv, sparse)
    return image_adv, sparse_adv


def fgsm_perturb(model: DepthNet, samples, cfg: PerturbConfig):
    """Sample-level attack; returns (images~, sparses~) as numpy arrays.

    images~: (B, H, W, 3); sparses~: (B, H, W) with off-mask points
    untouched (still exactly 0).
    """
    samples = list(samples)
    image, sparse, mask, gt, gt_mask = batch_tensors(samples)
    image_adv, sparse_adv = fgsm_perturb_tensors(model, image, sparse, mask, gt, gt_mask, cfg)
    return image_adv.permute(0, 2, 3, 1).numpy(), sparse_adv[:, 0].numpy()
