import numpy as np
import pytest
import torch

import depthadapt as da
from depthadapt.depth_net import batch_tensors, masked_l1, norm_policy_scope
from depthadapt.errors import ValidationError
from depthadapt.perturb import fgsm_perturb_tensors

from conftest import MICRO_ARCH, make_micro_samples


def test_zero_radius_leaves_inputs_unchanged(micro_model):
    samples = make_micro_samples(3, seed=21)
    images, sparses = da.fgsm_perturb(micro_model, samples, da.PerturbConfig(0.0, 0.0))
    for i, s in enumerate(samples):
        assert np.array_equal(images[i], s.image)
        assert np.array_equal(sparses[i], s.sparse_depth)


def test_linf_bounds_hold_elementwise(micro_model):
    samples = make_micro_samples(4, seed=22)
    cfg = da.PerturbConfig(3 / 255, 0.2)
    images, sparses = da.fgsm_perturb(micro_model, samples, cfg)
    for i, s in enumerate(samples):
        assert np.max(np.abs(images[i] - s.image)) <= cfg.eps_image + 1e-5
        assert np.max(np.abs(sparses[i] - s.sparse_depth)) <= cfg.eps_sparse + 1e-5
        assert images[i].min() >= 0 and images[i].max() <= 1


def test_bounds_hold_for_random_models_and_inputs():
    for trial in range(10):
        torch.manual_seed(trial)
        model = da.build_model(MICRO_ARCH, seed=trial)
        samples = make_micro_samples(2, seed=100 + trial)
        cfg = da.PerturbConfig(trial / 300 + 0.001, trial / 50 + 0.01)
        images, sparses = da.fgsm_perturb(model, samples, cfg)
        for i, s in enumerate(samples):
            # slack covers float32 rounding of the signed step
            assert np.max(np.abs(images[i] - s.image)) <= cfg.eps_image + 1e-5
            assert np.max(np.abs(sparses[i] - s.sparse_depth)) <= cfg.eps_sparse + 1e-5


def test_sparse_perturbed_only_on_valid_points(micro_model):
    samples = make_micro_samples(2, seed=23)
    _, sparses = da.fgsm_perturb(micro_model, samples, da.PerturbConfig(2 / 255, 0.5))
    for i, s in enumerate(samples):
        off = ~s.sparse_mask
        assert not sparses[i][off].any()
        assert (sparses[i][s.sparse_mask] > 0).all()
        assert sparses[i].max() <= micro_model.arch.depth_max


def test_missing_gt_rejected(micro_model):
    sample = make_micro_samples(1, seed=24)[0]
    sample.dense_gt = None
    sample.gt_mask = None
    with pytest.raises(ValidationError):
        da.fgsm_perturb(micro_model, [sample], da.PerturbConfig())


def test_invalid_epsilons_rejected():
    with pytest.raises(ValidationError):
        da.PerturbConfig(-0.1, 0.0)
    with pytest.raises(ValidationError):
        da.PerturbConfig(0.0, float("inf"))


def test_attack_increases_supervised_loss(micro_model):
    # the defining effect on a trained model, over a 32-frame batch
    samples = make_micro_samples(32, seed=25)
    image, sparse, mask, gt, gt_mask = batch_tensors(samples)
    with norm_policy_scope(micro_model, "frozen"), torch.no_grad():
        clean = masked_l1(micro_model(image, sparse, mask), gt, gt_mask).item()
    ia, sa = fgsm_perturb_tensors(
        micro_model, image, sparse, mask, gt, gt_mask, da.PerturbConfig(6 / 255, 0.3)
    )
    with norm_policy_scope(micro_model, "frozen"), torch.no_grad():
        attacked = masked_l1(micro_model(ia, sa, mask), gt, gt_mask).item()
    assert attacked > clean


def test_model_parameters_untouched(micro_model):
    before = {n: p.detach().clone() for n, p in micro_model.named_parameters()}
    da.fgsm_perturb(micro_model, make_micro_samples(2, seed=26), da.PerturbConfig())
    for n, p in micro_model.named_parameters():
        assert torch.equal(p, before[n])
