"""Finite-difference verification of reverse-mode gradients.

Central differences on a float64 copy of the computation, compared
coordinate-wise against autograd. Used by the test suite to validate every
loss in the package on micro-sized models; exposed here because it is
generally useful when extending the losses.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import ValidationError


def relative_error(analytic: float, numeric: float, floor: float = 1e-9) -> float:
    scale = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / scale


def fd_gradient_check(
    loss_fn,
    tensors: dict[str, torch.Tensor],
    wrt: str,
    n_coords: int = 10,
    step: float = 1e-4,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between autograd and central differences.

    ``loss_fn(tensors) -> scalar tensor`` is re-evaluated with the ``wrt``
    tensor perturbed in place at ``n_coords`` randomly sampled coordinates.
    All tensors should be float64 for the comparison to be meaningful.
    """
    rng = rng or np.random.default_rng(0)
    target = tensors[wrt]
    if target.dtype != torch.float64:
        raise ValidationError("finite-difference checks require float64 tensors")
    target.requires_grad_(True)
    if target.grad is not None:
        target.grad = None
    loss = loss_fn(tensors)
    (analytic,) = torch.autograd.grad(loss, [target])
    analytic = analytic.detach().reshape(-1)

    flat = target.detach().reshape(-1)
    n = flat.numel()
    coords = rng.choice(n, size=min(n_coords, n), replace=False)
    worst = 0.0
    with torch.no_grad():
        for c in coords:
            original = flat[c].item()
            flat[c] = original + step
            up = loss_fn(tensors).item()
            flat[c] = original - step
            down = loss_fn(tensors).item()
            flat[c] = original
            numeric = (up - down) / (2 * step)
            worst = max(worst, relative_error(analytic[c].item(), numeric))
    target.requires_grad_(False)
    return worst


def fd_parameter_check(
    loss_fn,
    module: torch.nn.Module,
    n_coords_per_param: int = 2,
    step: float = 1e-4,
    rng: np.random.Generator | None = None,
    param_filter=None,
) -> float:
    """Like :func:`fd_gradient_check` but over module parameters.

    ``loss_fn() -> scalar tensor`` closes over the module. All parameters
    (optionally filtered by name) get ``n_coords_per_param`` sampled
    coordinates each. The module must already be float64.
    """
    rng = rng or np.random.default_rng(0)
    named = [
        (n, p)
        for n, p in module.named_parameters()
        if param_filter is None or param_filter(n)
    ]
    if not named:
        raise ValidationError("no parameters matched the filter")
    for _, p in named:
        p.requires_grad_(True)
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for (_, p), g in zip(named, grads):
            flat = p.reshape(-1)
            gflat = (
                torch.zeros_like(flat) if g is None else g.reshape(-1)
            )
            coords = rng.choice(flat.numel(), size=min(n_coords_per_param, flat.numel()), replace=False)
            for c in coords:
                original = flat[c].item()
                flat[c] = original + step
                up = loss_fn().item()
                flat[c] = original - step
                down = loss_fn().item()
                flat[c] = original
                numeric = (up - down) / (2 * step)
                worst = max(worst, relative_error(gflat[c].item(), numeric))
    return worst
