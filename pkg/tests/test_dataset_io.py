import numpy as np
import pytest

import depthadapt as da
from depthadapt.dataset import DatasetManifest, load_sample, read_manifest
from depthadapt.errors import ChecksumError, DatasetError, GeometryError, MissingSampleError

from conftest import make_micro_samples


def _write(tmp_path, n=4, split="target_stream"):
    samples = make_micro_samples(n, seed=3, size=16)
    manifest = DatasetManifest(
        root_path=str(tmp_path / "ds"),
        sample_ids=[s.frame_id for s in samples],
        split=split,
        geometry=(16, 16),
        depth_range=(0.5, 9.5),
    )
    path = da.save_dataset(samples, manifest)
    return samples, manifest, path


def test_round_trip_bitwise(tmp_path):
    samples, _, path = _write(tmp_path)
    loaded, manifest = da.load_all(path)
    assert [s.frame_id for s in loaded] == [s.frame_id for s in samples]
    for a, b in zip(samples, loaded):
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.sparse_depth, b.sparse_depth)
        assert np.array_equal(a.sparse_mask, b.sparse_mask)
        assert np.array_equal(a.dense_gt, b.dense_gt)
        assert np.array_equal(a.gt_mask, b.gt_mask)


def test_optional_gt_round_trip(tmp_path):
    samples = make_micro_samples(2, seed=5)
    for s in samples:
        s.dense_gt = None
        s.gt_mask = None
    manifest = DatasetManifest(
        root_path=str(tmp_path / "nogt"), sample_ids=[s.frame_id for s in samples],
        split="target_stream", geometry=(16, 16), depth_range=(0.5, 9.5),
    )
    path = da.save_dataset(samples, manifest)
    loaded, _ = da.load_all(path)
    assert all(s.dense_gt is None and s.gt_mask is None for s in loaded)


def test_missing_sample_names_id(tmp_path):
    samples, manifest, path = _write(tmp_path)
    victim = samples[2].frame_id
    (tmp_path / "ds" / "samples" / f"{victim}.npz").unlink()
    with pytest.raises(MissingSampleError, match=victim):
        da.load_all(path)


def test_checksum_mismatch_detected(tmp_path):
    samples, manifest, path = _write(tmp_path)
    victim = tmp_path / "ds" / "samples" / f"{samples[1].frame_id}.npz"
    blob = bytearray(victim.read_bytes())
    blob[-1] ^= 0xFF
    victim.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError, match=samples[1].frame_id):
        da.load_all(path)


def test_geometry_mismatch_detected(tmp_path):
    samples, manifest, path = _write(tmp_path)
    text = path.read_text().replace("height: 16", "height: 32")
    path.write_text(text)
    loaded_manifest = read_manifest(path)
    with pytest.raises(GeometryError):
        load_sample(
            loaded_manifest.root_path, samples[0].frame_id, loaded_manifest.geometry,
            loaded_manifest.checksums[samples[0].frame_id],
        )


def test_stream_order_stable_across_loads(tmp_path):
    _, _, path = _write(tmp_path, n=6)
    first, m1 = da.load_all(path)
    second, m2 = da.load_all(path)
    assert [s.frame_id for s in first] == [s.frame_id for s in second] == m1.sample_ids


def test_duplicate_ids_rejected():
    with pytest.raises(DatasetError):
        DatasetManifest("x", ["a", "a"], "source_train", (16, 16), (1.0, 2.0))


def test_unknown_split_rejected():
    with pytest.raises(DatasetError):
        DatasetManifest("x", ["a"], "test_stream", (16, 16), (1.0, 2.0))


def test_manifest_lists_absent_sample_rejected(tmp_path):
    samples = make_micro_samples(2, seed=1)
    manifest = DatasetManifest(
        root_path=str(tmp_path / "bad"), sample_ids=["micro-0000", "ghost"],
        split="source_train", geometry=(16, 16), depth_range=(0.5, 9.5),
    )
    with pytest.raises(DatasetError, match="ghost"):
        da.save_dataset(samples, manifest)


def test_manifest_not_found(tmp_path):
    with pytest.raises(DatasetError):
        da.load_all(tmp_path / "nowhere")
