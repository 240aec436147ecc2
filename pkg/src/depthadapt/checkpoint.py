"""Versioned checkpoints and parameter fingerprints.

A depth fingerprint is a sha256 over the architecture descriptor and the
backbone parameter bytes, in named order. Adapter weights and norm buffers
are excluded on purpose: inserting the adapter or updating statistics at
test time must not break the energy model's binding, while any change to
the backbone must.
"""

from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path

import torch

from .depth_net import DepthArch, DepthNet, build_model, insert_adaptation
from .energy import EnergyArch, EnergyNet, build_energy_model
from .errors import CheckpointError, ModelBindingError

DEPTH_FORMAT = "depthadapt-depth-v1"
ENERGY_FORMAT = "depthadapt-energy-v1"


def model_fingerprint(model: DepthNet) -> str:
    digest = hashlib.sha256()
    digest.update(repr(model.arch).encode())
    for name, param in model.theta_parameters():
        digest.update(name.encode())
        digest.update(param.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def save_depth_checkpoint(path, model: DepthNet, train_seed: int | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": DEPTH_FORMAT,
        "arch": dataclasses.asdict(model.arch),
        "state": model.state_dict(),
        "adapter_stage": model.adapter_stage,
        "train_seed": train_seed,
        "fingerprint": model_fingerprint(model),
    }
    torch.save(payload, path)
    return path


def load_depth_checkpoint(path, expect_arch: DepthArch | None = None) -> DepthNet:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"depth checkpoint not found: {path}")
    payload = torch.load(path, weights_only=False)
    if payload.get("format") != DEPTH_FORMAT:
        raise CheckpointError(f"{path} is not a depth checkpoint (format={payload.get('format')!r})")
    arch = DepthArch(**payload["arch"])
    if expect_arch is not None and arch != expect_arch:
        raise CheckpointError(
            f"arch mismatch loading {path}: checkpoint {arch} != expected {expect_arch}"
        )
    model = build_model(arch)
    if payload.get("adapter_stage") is not None:
        insert_adaptation(model, stage=payload["adapter_stage"])
    try:
        model.load_state_dict(payload["state"])
    except RuntimeError as exc:
        raise CheckpointError(f"state does not fit arch {arch} from {path}: {exc}") from exc
    actual = model_fingerprint(model)
    if actual != payload["fingerprint"]:
        raise CheckpointError(
            f"fingerprint mismatch in {path}: stored {payload['fingerprint'][:12]}.., "
            f"recomputed {actual[:12]}.. (file tampered or incompatible)"
        )
    return model


def save_energy_checkpoint(path, energy_model: EnergyNet) -> Path:
    if energy_model.tau is None or energy_model.bound_to is None:
        raise CheckpointError("energy model must be calibrated and bound before saving")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": ENERGY_FORMAT,
        "arch": dataclasses.asdict(energy_model.arch),
        "state": energy_model.state_dict(),
        "tau": energy_model.tau,
        "bound_to": energy_model.bound_to,
    }
    torch.save(payload, path)
    return path


def load_energy_checkpoint(path, depth_model: DepthNet | None = None) -> EnergyNet:
    """Load a scorer; refuses to pair with a depth model it was not trained on."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"energy checkpoint not found: {path}")
    payload = torch.load(path, weights_only=False)
    if payload.get("format") != ENERGY_FORMAT:
        raise CheckpointError(f"{path} is not an energy checkpoint (format={payload.get('format')!r})")
    energy_model = build_energy_model(EnergyArch(**payload["arch"]))
    energy_model.load_state_dict(payload["state"])
    energy_model.tau = payload["tau"]
    energy_model.bound_to = payload["bound_to"]
    if depth_model is not None:
        check_binding(energy_model, depth_model)
    return energy_model


def check_binding(energy_model: EnergyNet, depth_model: DepthNet):
    if energy_model.bound_to is None:
        raise ModelBindingError("energy model is untrained (no bound depth model)")
    fingerprint = model_fingerprint(depth_model)
    if energy_model.bound_to != fingerprint:
        raise ModelBindingError(
            "energy model was trained against a different depth model "
            f"({energy_model.bound_to[:12]}.. != {fingerprint[:12]}..); "
            "a scorer is only valid for the model it was trained on"
        )
