import pytest
import torch

import depthadapt as da
from depthadapt.errors import ValidationError

from conftest import MICRO_ARCH, make_micro_samples, states_equal


def test_loss_halves_on_tiny_corpus():
    # seeded regression: 200 tiny samples, 30 epochs
    samples = make_micro_samples(200, seed=7)
    model = da.build_model(MICRO_ARCH, seed=0)
    _, history = da.train_supervised(
        model, samples, da.TrainConfig(epochs=30, batch_size=16, learning_rate=3e-3, seed=0)
    )
    assert history.train_loss[-1] < 0.5 * history.train_loss[0]


def test_zero_learning_rate_leaves_parameters_unchanged():
    samples = make_micro_samples(12, seed=2)
    model = da.build_model(MICRO_ARCH, seed=0)
    before = {n: p.detach().clone() for n, p in model.named_parameters()}
    model, _ = da.train_supervised(
        model, samples, da.TrainConfig(epochs=2, batch_size=4, learning_rate=0.0, seed=0)
    )
    for n, p in model.named_parameters():
        assert torch.equal(p, before[n]), n


def test_training_deterministic_in_seed_and_data():
    samples = make_micro_samples(16, seed=3)
    cfg = da.TrainConfig(epochs=3, batch_size=4, learning_rate=1e-3, seed=9)
    a, _ = da.train_supervised(da.build_model(MICRO_ARCH, seed=1), samples, cfg)
    b, _ = da.train_supervised(da.build_model(MICRO_ARCH, seed=1), samples, cfg)
    assert states_equal(a.state_dict(), b.state_dict())


def test_dataset_without_gt_rejected():
    samples = make_micro_samples(8, seed=4)
    for s in samples:
        s.dense_gt = None
        s.gt_mask = None
    with pytest.raises(ValidationError):
        da.train_supervised(da.build_model(MICRO_ARCH, seed=0), samples, da.TrainConfig(epochs=1))


def test_best_validation_snapshot_reported():
    samples = make_micro_samples(20, seed=5)
    model, history = da.train_supervised(
        da.build_model(MICRO_ARCH, seed=0), samples,
        da.TrainConfig(epochs=5, batch_size=4, learning_rate=1e-3, seed=0),
    )
    assert 0 <= history.best_epoch < 5
    assert history.val_loss[history.best_epoch] == min(history.val_loss)
    assert len(history.train_loss) == len(history.val_loss) == 5


def test_invalid_config_rejected():
    with pytest.raises(ValidationError):
        da.TrainConfig(epochs=0)
    with pytest.raises(ValidationError):
        da.TrainConfig(validation_fraction=1.0)
