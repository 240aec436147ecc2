"""Sample container and on-disk dataset format.

A dataset directory holds a plain-text ``manifest`` plus one ``.npz`` array
container per sample under ``samples/``::

    <root>/
      manifest            # text: format tag, split, geometry, depth range,
                          # then one "<id> <sha256>" line per sample, in order
      samples/<id>.npz    # named arrays: image, sparse, sparse_mask, gt, gt_mask

The manifest order of ``target_stream`` splits is the adaptation order;
:func:`load_dataset` yields samples strictly in that order. Checksums are
sha256 over the container file bytes, so any corruption is caught on load.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import ChecksumError, DatasetError, GeometryError, MissingSampleError
from .validation import check_depth_range, check_sample

FORMAT_TAG = "depthadapt-dataset-v1"
SPLITS = ("source_train", "source_val", "target_stream")


@dataclass
class Sample:
    """One frame: image, sparse depth with validity mask, optional dense gt.

    Invariants (enforced by :func:`~depthadapt.validation.check_sample`):
    sparse_depth is 0 exactly off the mask and strictly positive on it;
    image values lie in [0, 1]; dense_gt is strictly positive on gt_mask.
    """

    image: np.ndarray            # (H, W, 3) float32 in [0, 1]
    sparse_depth: np.ndarray     # (H, W) float32, meters, 0 off-mask
    sparse_mask: np.ndarray      # (H, W) bool
    dense_gt: Optional[np.ndarray] = None   # (H, W) float32, meters
    gt_mask: Optional[np.ndarray] = None    # (H, W) bool
    frame_id: str = ""

    @property
    def geometry(self):
        return self.sparse_depth.shape

    def copy(self) -> "Sample":
        return Sample(
            image=self.image.copy(),
            sparse_depth=self.sparse_depth.copy(),
            sparse_mask=self.sparse_mask.copy(),
            dense_gt=None if self.dense_gt is None else self.dense_gt.copy(),
            gt_mask=None if self.gt_mask is None else self.gt_mask.copy(),
            frame_id=self.frame_id,
        )


@dataclass
class DatasetManifest:
    root_path: str
    sample_ids: list[str]
    split: str
    geometry: tuple[int, int]
    depth_range: tuple[float, float]
    checksums: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DatasetError(f"unknown split {self.split!r}; expected one of {SPLITS}")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise DatasetError("manifest sample ids must be unique")
        check_depth_range(*self.depth_range)


def _sample_bytes(sample: Sample) -> bytes:
    arrays = {
        "image": sample.image.astype(np.float32),
        "sparse": sample.sparse_depth.astype(np.float32),
        "sparse_mask": sample.sparse_mask,
    }
    if sample.dense_gt is not None:
        arrays["gt"] = sample.dense_gt.astype(np.float32)
        arrays["gt_mask"] = sample.gt_mask
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def save_dataset(samples, manifest: DatasetManifest) -> Path:
    """Write samples and manifest under ``manifest.root_path``.

    The manifest's id order is preserved verbatim; checksums are computed
    here and stored both in the returned manifest object and on disk.
    """
    samples = {s.frame_id: s for s in samples}
    missing = [i for i in manifest.sample_ids if i not in samples]
    if missing:
        raise DatasetError(f"manifest lists ids with no matching sample: {missing}")
    root = Path(manifest.root_path)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    manifest.checksums = {}
    for sid in manifest.sample_ids:
        sample = check_sample(samples[sid])
        if sample.geometry != tuple(manifest.geometry):
            raise GeometryError(
                f"sample {sid!r} geometry {sample.geometry} != manifest {manifest.geometry}"
            )
        payload = _sample_bytes(sample)
        (root / "samples" / f"{sid}.npz").write_bytes(payload)
        manifest.checksums[sid] = hashlib.sha256(payload).hexdigest()
    lines = [
        f"format: {FORMAT_TAG}",
        f"split: {manifest.split}",
        f"height: {manifest.geometry[0]}",
        f"width: {manifest.geometry[1]}",
        f"depth_min: {manifest.depth_range[0]!r}",
        f"depth_max: {manifest.depth_range[1]!r}",
        "samples:",
    ]
    lines += [f"{sid} {manifest.checksums[sid]}" for sid in manifest.sample_ids]
    (root / "manifest").write_text("\n".join(lines) + "\n")
    return root / "manifest"


def read_manifest(manifest_path) -> DatasetManifest:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest"
    if not path.exists():
        raise DatasetError(f"manifest not found: {path}")
    header, ids, checksums = {}, [], {}
    in_samples = False
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line == "samples:":
            in_samples = True
        elif in_samples:
            sid, _, digest = line.partition(" ")
            ids.append(sid)
            checksums[sid] = digest
        else:
            key, _, value = line.partition(":")
            header[key.strip()] = value.strip()
    if header.get("format") != FORMAT_TAG:
        raise DatasetError(f"unrecognized dataset format in {path}: {header.get('format')!r}")
    return DatasetManifest(
        root_path=str(path.parent),
        sample_ids=ids,
        split=header["split"],
        geometry=(int(header["height"]), int(header["width"])),
        depth_range=(float(header["depth_min"]), float(header["depth_max"])),
        checksums=checksums,
    )


def load_sample(root, sid, geometry, checksum=None) -> Sample:
    path = Path(root) / "samples" / f"{sid}.npz"
    if not path.exists():
        raise MissingSampleError(sid, path)
    payload = path.read_bytes()
    if checksum:
        actual = hashlib.sha256(payload).hexdigest()
        if actual != checksum:
            raise ChecksumError(sid, checksum, actual)
    with np.load(io.BytesIO(payload)) as arrays:
        sample = Sample(
            image=arrays["image"],
            sparse_depth=arrays["sparse"],
            sparse_mask=arrays["sparse_mask"],
            dense_gt=arrays["gt"] if "gt" in arrays else None,
            gt_mask=arrays["gt_mask"] if "gt_mask" in arrays else None,
            frame_id=sid,
        )
    if sample.geometry != tuple(geometry):
        raise GeometryError(
            f"sample {sid!r} geometry {sample.geometry} != manifest {tuple(geometry)}"
        )
    return sample


def load_dataset(manifest_path) -> tuple[Iterator[Sample], DatasetManifest]:
    """Open a dataset; returns (ordered sample iterator, manifest).

    Iteration order equals manifest order. Each sample is checksum-verified
    as it is read, so failures surface at the offending frame.
    """
    manifest = read_manifest(manifest_path)

    def iterate():
        for sid in manifest.sample_ids:
            yield load_sample(
                manifest.root_path, sid, manifest.geometry, manifest.checksums.get(sid)
            )

    return iterate(), manifest


def load_all(manifest_path) -> tuple[list[Sample], DatasetManifest]:
    it, manifest = load_dataset(manifest_path)
    return list(it), manifest
