"""Discriminative training of the region-energy scorer.

Each batch contributes two halves: clean predictions of the frozen depth
model (anchoring low energy) and predictions on sign-perturbed inputs
(supplying high energy). Targets for both come from tile errors against
ground truth via the bounded Gibbs map; the scorer minimizes per-cell
binary cross entropy over all supervised cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch.nn import functional as F

from .checkpoint import model_fingerprint
from .depth_net import DepthNet, batch_tensors, norm_policy_scope
from .energy import EnergyNet, calibrate_tau, map_to_energy, patch_mse
from .errors import ModelBindingError, NumericalError, ValidationError
from .perturb import PerturbConfig, fgsm_perturb_tensors
from .validation import check_samples


@dataclass
class EnergyTrainConfig:
    epochs: int = 5
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0
    tau_percentile: float = 90.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if not (0 < self.tau_percentile < 100):
            raise ValidationError("tau_percentile must lie in (0, 100)")


@dataclass
class EnergyTrainHistory:
    loss: list[float] = field(default_factory=list)
    mean_energy_clean: list[float] = field(default_factory=list)
    mean_energy_perturbed: list[float] = field(default_factory=list)


def _cell_bce(energy_model, pred, sparse, target, supervised):
    logits = energy_model.forward_logits(pred, sparse)[:, 0]
    keep = supervised.reshape(-1)
    return (
        F.binary_cross_entropy_with_logits(
            logits.reshape(-1)[keep], target.to(logits.dtype).reshape(-1)[keep], reduction="none"
        ),
        torch.sigmoid(logits.detach()),
    )


def train_energy(
    energy_model: EnergyNet,
    depth_model: DepthNet,
    samples,
    perturb_cfg: PerturbConfig | None = None,
    config: EnergyTrainConfig | None = None,
):
    """Train the scorer against a frozen depth model; returns (model, history).

    Binds the scorer to the depth model's parameter fingerprint; training a
    scorer already bound to a different model is rejected. tau is
    calibrated on the training set if not already set.
    """
    perturb_cfg = perturb_cfg or PerturbConfig()
    config = config or EnergyTrainConfig()
    samples = check_samples(samples, require_gt=True)

    fingerprint = model_fingerprint(depth_model)
    if energy_model.bound_to is not None and energy_model.bound_to != fingerprint:
        raise ModelBindingError(
            "energy model is bound to a different depth model "
            f"({energy_model.bound_to[:12]}.. != {fingerprint[:12]}..)"
        )
    energy_model.bound_to = fingerprint

    height, width = samples[0].geometry
    tile = energy_model.arch.tile_shape(height, width)
    if energy_model.tau is None:
        energy_model.tau = calibrate_tau(
            depth_model, samples, config.tau_percentile, tile_shape=tile
        )

    theta_before = [p.detach().clone() for _, p in depth_model.named_parameters()]
    prev_grad_flags = [p.requires_grad for p in depth_model.parameters()]
    for p in depth_model.parameters():
        p.requires_grad_(False)

    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    optimizer = torch.optim.Adam(energy_model.parameters(), lr=config.learning_rate)
    history = EnergyTrainHistory()
    image, sparse, mask, gt, gt_mask = batch_tensors(samples)

    # -1 = evaluation-only pass recording the untrained starting loss
    for epoch in range(-1, config.epochs):
        order = np.arange(len(samples)) if epoch < 0 else rng.permutation(len(samples))
        epoch_loss, n_cells = 0.0, 0
        e_clean_sum, e_pert_sum, n_grids = 0.0, 0.0, 0
        for start in range(0, len(samples), config.batch_size):
            idx = torch.from_numpy(order[start : start + config.batch_size])
            b_image, b_sparse, b_mask = image[idx], sparse[idx], mask[idx]
            b_gt, b_gt_mask = gt[idx], gt_mask[idx]

            with norm_policy_scope(depth_model, "frozen"):
                with torch.no_grad():
                    pred_clean = depth_model(b_image, b_sparse, b_mask)
                image_adv, sparse_adv = fgsm_perturb_tensors(
                    depth_model, b_image, b_sparse, b_mask, b_gt, b_gt_mask, perturb_cfg
                )
                with torch.no_grad():
                    pred_pert = depth_model(image_adv, sparse_adv, b_mask)

            with torch.no_grad():
                delta_c, sup_c = patch_mse(pred_clean, b_gt, b_gt_mask, tile)
                delta_p, sup_p = patch_mse(pred_pert, b_gt, b_gt_mask, tile)
                y_clean = map_to_energy(delta_c, energy_model.tau)
                y_pert = map_to_energy(delta_p, energy_model.tau)

            bce_c, e_clean = _cell_bce(energy_model, pred_clean, b_sparse, y_clean, sup_c)
            bce_p, e_pert = _cell_bce(energy_model, pred_pert, sparse_adv, y_pert, sup_p)
            cells = torch.cat([bce_c, bce_p])
            if cells.numel() == 0:
                continue
            loss = cells.mean()
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite energy loss at epoch {epoch}")
            if epoch >= 0:
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            epoch_loss += loss.item() * cells.numel()
            n_cells += cells.numel()
            e_clean_sum += e_clean.mean().item()
            e_pert_sum += e_pert.mean().item()
            n_grids += 1
        history.loss.append(epoch_loss / max(n_cells, 1))
        history.mean_energy_clean.append(e_clean_sum / max(n_grids, 1))
        history.mean_energy_perturbed.append(e_pert_sum / max(n_grids, 1))

    for p, flag in zip(depth_model.parameters(), prev_grad_flags):
        p.requires_grad_(flag)
    for p, before in zip((p for _, p in depth_model.named_parameters()), theta_before):
        if not torch.equal(p.detach(), before):
            raise NumericalError("depth model parameters changed during energy training")
    return energy_model, history
