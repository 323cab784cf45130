"""FMCS dataset: backbone feature maps at each epoch marker, labelled 1..K.

Binary ``.fmcs`` layout (little-endian)::

    b"FMCS"  u32 version  u32 K  u64 count  u32 C  u32 H  u32 W
    count x { u8 label  u32 source_index  u32 marker_epoch  f32[C*H*W] }
    u64 checksum

The checksum is the 8-byte BLAKE2b digest of every preceding byte, read as a
little-endian integer.  Samples are ordered by label, then source index.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .errors import FormatError, MissingCheckpointError, ShapeError
from .original_task import SyntheticDataset, TrainingTrace, extract_feature_maps

MAGIC = b"FMCS"
VERSION = 1
HEADER = struct.Struct("<4sIIQIII")
TEST_FRACTION_DENOM = 4  # 3:1 train/test


def _record_dtype(size):
    return np.dtype([("label", "u1"), ("source_index", "<u4"), ("marker_epoch", "<u4"), ("x", "<f4", (size,))])


@dataclass
class FmcsDataset:
    features: np.ndarray  # (K*N, C, H, W) float32
    labels: np.ndarray  # 1..K
    source_index: np.ndarray
    marker_epoch: np.ndarray
    k: int
    provenance: dict = field(default_factory=dict)
    train_idx: Optional[np.ndarray] = None
    test_idx: Optional[np.ndarray] = None

    def __len__(self):
        return int(self.labels.size)

    @property
    def feature_shape(self) -> Tuple[int, int, int]:
        return tuple(int(s) for s in self.features.shape[1:])

    def label_counts(self, idx=None) -> dict:
        labels = self.labels if idx is None else self.labels[idx]
        counts = np.bincount(labels, minlength=self.k + 1)[1:]
        return {int(k): int(c) for k, c in enumerate(counts, 1)}

    @property
    def has_split(self) -> bool:
        return self.train_idx is not None

    def subset(self, idx):
        return self.features[idx], self.labels[idx]


def build_fmcs_dataset(trace: TrainingTrace, markers, dataset: SyntheticDataset, plan_info=None) -> FmcsDataset:
    """Extract train-split feature maps at every marker epoch and label them 1..K."""
    markers = [int(m) for m in markers]
    paths = []
    for m in markers:
        try:
            paths.append(trace.checkpoint_for(m))
        except MissingCheckpointError:
            raise MissingCheckpointError(f"missing checkpoint for marker epoch {m}", epoch=m) from None
    feats, labels, src, epochs = [], [], [], []
    shape = None
    n = dataset.n_train
    for k, (m, path) in enumerate(zip(markers, paths), 1):
        fm = extract_feature_maps(path, dataset.train_images)
        if shape is None:
            shape = fm.shape[1:]
        elif fm.shape[1:] != shape:
            raise ShapeError(f"feature shape drift at marker epoch {m}: {fm.shape[1:]} != {shape}")
        feats.append(fm)
        labels.append(np.full(n, k, dtype=np.uint8))
        src.append(np.arange(n, dtype=np.uint32))
        epochs.append(np.full(n, m, dtype=np.uint32))
    provenance = {
        "markers": markers,
        "config_digest": config_digest(trace.config),
    }
    if plan_info:
        provenance["plan"] = plan_info
    return FmcsDataset(
        features=np.concatenate(feats),
        labels=np.concatenate(labels),
        source_index=np.concatenate(src),
        marker_epoch=np.concatenate(epochs),
        k=len(markers),
        provenance=provenance,
    )


def config_digest(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def split(ds: FmcsDataset, seed: int = 0) -> FmcsDataset:
    """Label-balanced 3:1 partition, drawn per label; remainders go to train."""
    if len(ds) < ds.k * TEST_FRACTION_DENOM:
        raise ValueError(f"need at least {ds.k * TEST_FRACTION_DENOM} samples to split, got {len(ds)}")
    counts = ds.label_counts()
    n_test = min(counts.values()) // TEST_FRACTION_DENOM
    if n_test < 1:
        raise ValueError("every label needs at least 4 samples to split")
    rng = np.random.default_rng([seed, 2])
    train, test = [], []
    for k in range(1, ds.k + 1):
        idx = rng.permutation(np.flatnonzero(ds.labels == k))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    ds.train_idx = np.sort(np.concatenate(train))
    ds.test_idx = np.sort(np.concatenate(test))
    ds.provenance["split_seed"] = int(seed)
    return ds


# -- serialisation ---------------------------------------------------------------

def dumps(ds: FmcsDataset) -> bytes:
    if len(ds) == 0:
        raise ValueError("refusing to save an empty FMCS dataset")
    c, h, w = ds.feature_shape
    if ds.labels.min() < 1 or ds.labels.max() > ds.k:
        raise ValueError(f"labels must lie in 1..{ds.k}")
    rec = np.empty(len(ds), dtype=_record_dtype(c * h * w))
    rec["label"] = ds.labels
    rec["source_index"] = ds.source_index
    rec["marker_epoch"] = ds.marker_epoch
    rec["x"] = ds.features.reshape(len(ds), -1)
    body = HEADER.pack(MAGIC, VERSION, ds.k, len(ds), c, h, w) + rec.tobytes()
    return body + struct.pack("<Q", checksum(body))


def checksum(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def loads(data: bytes) -> FmcsDataset:
    if len(data) < HEADER.size + 8:
        raise FormatError("truncated FMCS file")
    magic, version, k, count, c, h, w = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError("not an FMCS dataset (bad magic)")
    if version != VERSION:
        raise FormatError(f"unsupported FMCS version {version}")
    dtype = _record_dtype(c * h * w)
    expected = HEADER.size + count * dtype.itemsize + 8
    if len(data) != expected:
        raise FormatError(f"truncated FMCS file: {len(data)} bytes, expected {expected}")
    (stored,) = struct.unpack_from("<Q", data, len(data) - 8)
    if checksum(data[:-8]) != stored:
        raise FormatError("FMCS checksum mismatch")
    rec = np.frombuffer(data, dtype=dtype, count=count, offset=HEADER.size)
    return FmcsDataset(
        features=rec["x"].astype(np.float32).reshape(count, c, h, w),
        labels=rec["label"].copy(),
        source_index=rec["source_index"].astype(np.uint32),
        marker_epoch=rec["marker_epoch"].astype(np.uint32),
        k=k,
    )


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def manifest_for(ds: FmcsDataset, data: bytes) -> dict:
    man = {
        "format": "fmcs",
        "version": VERSION,
        "k": ds.k,
        "count": len(ds),
        "feature_shape": list(ds.feature_shape),
        "per_label_counts": {str(k): v for k, v in ds.label_counts().items()},
        "content_hash": content_hash(data),
        "provenance": ds.provenance,
    }
    if ds.has_split:
        man["split"] = {
            "seed": ds.provenance.get("split_seed"),
            "ratio": "3:1",
            "train_per_label": {str(k): v for k, v in ds.label_counts(ds.train_idx).items()},
            "test_per_label": {str(k): v for k, v in ds.label_counts(ds.test_idx).items()},
        }
    return man


def save(ds: FmcsDataset, path: Union[str, Path]) -> dict:
    """Write ``path`` and ``manifest.json`` beside it; returns the manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = dumps(ds)
    path.write_bytes(data)
    man = manifest_for(ds, data)
    manifest_path(path).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man


def manifest_path(path: Union[str, Path]) -> Path:
    return Path(path).with_name("manifest.json")


def load(path: Union[str, Path]) -> FmcsDataset:
    """Read a dataset; a sibling manifest restores provenance and the split."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from None
    ds = loads(data)
    mp = manifest_path(path)
    if mp.exists():
        man = json.loads(mp.read_text())
        if man.get("content_hash") == content_hash(data):
            ds.provenance = man.get("provenance", {})
            if "split" in man and man["split"].get("seed") is not None:
                split(ds, man["split"]["seed"])
    return ds
