"""Supervised source training for the depth completion network."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .depth_net import DepthNet, batch_tensors, masked_l1, set_norm_policy
from .errors import NumericalError, ValidationError
from .validation import check_samples


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0
    validation_fraction: float = 0.15

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if not (0 < self.validation_fraction < 1):
            raise ValidationError(
                f"validation_fraction must lie in (0, 1), got {self.validation_fraction}"
            )
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1


def _epoch_batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train_supervised(model: DepthNet, samples, config: TrainConfig):
    """Minimize masked mean absolute error; returns (model, history).

    The model is trained in place and finishes loaded with its
    best-validation snapshot. Deterministic in (seed, data).
    """
    samples = check_samples(samples, require_gt=True)
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)

    n_val = max(1, int(round(config.validation_fraction * len(samples))))
    if n_val >= len(samples):
        raise ValidationError("validation split leaves no training samples")
    perm = rng.permutation(len(samples))
    val_set = [samples[i] for i in perm[:n_val]]
    train_set = [samples[i] for i in perm[n_val:]]

    image, sparse, mask, gt, gt_mask = batch_tensors(train_set)
    v_image, v_sparse, v_mask, v_gt, v_gt_mask = batch_tensors(val_set)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    history = TrainHistory()
    best_val, best_state = math.inf, None

    for epoch in range(config.epochs):
        model.train()
        epoch_loss, n_batches = 0.0, 0
        for idx in _epoch_batches(len(train_set), config.batch_size, rng):
            idx = torch.from_numpy(idx)
            pred = model(image[idx], sparse[idx], mask[idx])
            loss = masked_l1(pred, gt[idx], gt_mask[idx])
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item()
            n_batches += 1
        history.train_loss.append(epoch_loss / n_batches)

        model.eval()
        with torch.no_grad():
            val_loss = masked_l1(model(v_image, v_sparse, v_mask), v_gt, v_gt_mask).item()
        history.val_loss.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_state = copy.deepcopy(model.state_dict())
            history.best_epoch = epoch

    model.load_state_dict(best_state)
    set_norm_policy(model, "frozen")
    return model, history
