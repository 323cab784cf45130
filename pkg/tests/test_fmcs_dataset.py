import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmce import fmcs_dataset
from fmce.errors import FormatError, MissingCheckpointError
from fmce.fmcs_dataset import FmcsDataset, dumps, loads, split

from .conftest import SMALL_MARKERS


def random_dataset(seed, k=3, n=8, shape=(2, 3, 3)):
    rng = np.random.default_rng(seed)
    return FmcsDataset(
        features=rng.standard_normal((k * n,) + shape).astype(np.float32),
        labels=np.repeat(np.arange(1, k + 1), n).astype(np.uint8),
        source_index=np.tile(np.arange(n), k).astype(np.uint32),
        marker_epoch=np.repeat(np.arange(1, k + 1) * 5, n).astype(np.uint32),
        k=k,
    )


def test_build_layout(small_run, small_fmcs):
    data, _ = small_run
    ds = small_fmcs
    n = data.n_train
    assert len(ds) == len(SMALL_MARKERS) * n
    assert ds.feature_shape == (16, 4, 4)
    assert ds.label_counts() == {1: n, 2: n, 3: n}
    assert ds.marker_epoch[:n].tolist() == [2] * n
    assert ds.marker_epoch[-1] == 6
    assert ds.source_index[:n].tolist() == list(range(n))
    assert ds.provenance["markers"] == list(SMALL_MARKERS)


def test_features_follow_checkpoints(small_run, small_fmcs):
    data, trace = small_run
    from fmce.original_task import extract_feature_maps

    fm = extract_feature_maps(trace.checkpoint_for(4), data.train_images[:5])
    idx = np.flatnonzero(small_fmcs.labels == 2)[:5]
    assert small_fmcs.features[idx].tobytes() == fm.tobytes()


def test_missing_marker_checkpoint(small_run):
    data, trace = small_run
    with pytest.raises(MissingCheckpointError, match="marker epoch 40") as info:
        fmcs_dataset.build_fmcs_dataset(trace, [2, 40], data)
    assert info.value.epoch == 40


def test_split_is_balanced_and_disjoint(small_fmcs):
    ds = small_fmcs
    n_test = min(ds.label_counts().values()) // 4
    assert set(ds.label_counts(ds.test_idx).values()) == {n_test}
    train_counts = ds.label_counts(ds.train_idx)
    assert len(set(train_counts.values())) == 1
    assert not set(ds.train_idx) & set(ds.test_idx)
    assert len(ds.train_idx) + len(ds.test_idx) == len(ds)


def test_split_depends_on_seed_only(small_fmcs):
    a = split(random_dataset(0), seed=4)
    b = split(random_dataset(0), seed=4)
    c = split(random_dataset(0), seed=5)
    assert a.test_idx.tolist() == b.test_idx.tolist()
    assert a.test_idx.tolist() != c.test_idx.tolist()


def test_split_too_small():
    with pytest.raises(ValueError):
        split(random_dataset(0, k=3, n=3))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(2, 6), n=st.integers(4, 20))
def test_round_trip_is_bit_exact(seed, k, n):
    ds = random_dataset(seed, k, n)
    data = dumps(ds)
    back = loads(data)
    assert back.features.tobytes() == ds.features.tobytes()
    assert back.labels.tolist() == ds.labels.tolist()
    assert back.source_index.tolist() == ds.source_index.tolist()
    assert back.marker_epoch.tolist() == ds.marker_epoch.tolist()
    assert back.k == k
    assert dumps(back) == data


def test_header_layout():
    data = dumps(random_dataset(0, k=2, n=4))
    magic, version, k, count, c, h, w = struct.unpack_from("<4sIIQIII", data)
    assert (magic, version, k, count, (c, h, w)) == (b"FMCS", 1, 2, 8, (2, 3, 3))
    assert len(data) == 32 + 8 * (9 + 4 * 18) + 8


@pytest.mark.parametrize("mutate, message", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], "version 9"),
    (lambda b: b[:-20], "truncated"),
    (lambda b: b[:50] + bytes([b[50] ^ 1]) + b[51:], "checksum"),
    (lambda b: b[:10], "truncated"),
])
def test_corrupt_files_are_rejected(mutate, message):
    with pytest.raises(FormatError, match=message):
        loads(mutate(dumps(random_dataset(1))))


def test_empty_dataset_refused():
    ds = random_dataset(0)
    empty = FmcsDataset(ds.features[:0], ds.labels[:0], ds.source_index[:0], ds.marker_epoch[:0], ds.k)
    with pytest.raises(ValueError, match="empty"):
        dumps(empty)


def test_save_load_restores_split_and_provenance(tmp_path, small_fmcs):
    path = tmp_path / "sub" / "ds.fmcs"
    man = fmcs_dataset.save(small_fmcs, path)
    assert (tmp_path / "sub" / "manifest.json").exists()
    assert man["content_hash"] == fmcs_dataset.content_hash(path.read_bytes())
    assert man["per_label_counts"] == {str(k): v for k, v in small_fmcs.label_counts().items()}
    back = fmcs_dataset.load(path)
    assert back.test_idx.tolist() == small_fmcs.test_idx.tolist()
    assert back.provenance["markers"] == list(SMALL_MARKERS)


def test_stale_manifest_is_ignored(tmp_path, small_fmcs):
    path = tmp_path / "ds.fmcs"
    fmcs_dataset.save(small_fmcs, path)
    man = json.loads(fmcs_dataset.manifest_path(path).read_text())
    man["content_hash"] = "0" * 64
    fmcs_dataset.manifest_path(path).write_text(json.dumps(man))
    assert not fmcs_dataset.load(path).has_split


def test_rebuild_is_stable(small_run, small_fmcs_bytes):
    data, trace = small_run
    ds = fmcs_dataset.build_fmcs_dataset(trace, SMALL_MARKERS, data)
    assert dumps(ds) == small_fmcs_bytes[0]
