"""Shared fixtures: micro-scale samples and quickly trained micro models.

The micro geometry (16x16, 2-stage depth net) keeps gradient checks and
optimizer tests fast; the synthetic-scene fixtures use the real generator
at its minimum 64x64 size.
"""

import numpy as np
import pytest
import torch

import depthadapt as da
from depthadapt.dataset import Sample


def make_micro_sample(rng, size=16, n_points=24, frame_id="micro"):
    """Hand-built smooth scene at sizes below the renderer's minimum."""
    v, u = np.mgrid[0:size, 0:size] / size
    depth = 2.0 + 4.0 * v + 1.5 * np.sin(2 * np.pi * (u + rng.uniform(0, 1)))
    depth += rng.uniform(-0.2, 0.2)
    depth = np.clip(depth, 0.5, 9.5)
    image = np.stack(
        [0.5 + 0.4 * np.sin(2 * np.pi * (2 * u + rng.uniform(0, 1))),
         0.3 + 0.3 * v,
         np.clip(depth / 10.0, 0, 1)],
        axis=-1,
    )
    idx = rng.choice(size * size, size=n_points, replace=False)
    mask = np.zeros(size * size, dtype=bool)
    mask[idx] = True
    mask = mask.reshape(size, size)
    return Sample(
        image=np.clip(image, 0, 1).astype(np.float32),
        sparse_depth=np.where(mask, depth, 0.0).astype(np.float32),
        sparse_mask=mask,
        dense_gt=depth.astype(np.float32),
        gt_mask=np.ones((size, size), dtype=bool),
        frame_id=frame_id,
    )


def make_micro_samples(n, seed=0, size=16, n_points=24, prefix="micro"):
    rng = np.random.default_rng(seed)
    return [make_micro_sample(rng, size, n_points, f"{prefix}-{i:04d}") for i in range(n)]


MICRO_ARCH = da.DepthArch(base_width=4, stages=2, adapt_stage=1, adapt_reduction=2)
MICRO_ENERGY = da.EnergyArch(stages=2, base_width=4, max_width=16)


@pytest.fixture(scope="session")
def micro_samples():
    return make_micro_samples(48, seed=1)


@pytest.fixture(scope="session")
def micro_model(micro_samples):
    """A briefly trained 2-stage model; enough fit for attack/adapt tests."""
    model = da.build_model(MICRO_ARCH, seed=0)
    model, _ = da.train_supervised(
        model,
        micro_samples,
        da.TrainConfig(epochs=25, batch_size=8, learning_rate=3e-3, seed=0),
    )
    return model


@pytest.fixture(scope="session")
def micro_energy(micro_model, micro_samples):
    energy = da.build_energy_model(MICRO_ENERGY, seed=0)
    energy, _ = da.train_energy(
        energy,
        micro_model,
        micro_samples,
        da.PerturbConfig(8 / 255, 0.4),
        da.EnergyTrainConfig(epochs=8, batch_size=8, learning_rate=3e-3, seed=0),
    )
    return energy


@pytest.fixture()
def scene64():
    return da.generate_scene(7, (64, 64), (1.0, 10.0))


def clone_state(model):
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def states_equal(a, b):
    return set(a) == set(b) and all(torch.equal(a[k], b[k]) for k in a)
