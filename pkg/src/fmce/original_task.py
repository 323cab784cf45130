"""Desk-scale image-classification run that feeds the convergence analysis.

Four procedurally generated 16x16 pattern classes, a two-block convolutional
backbone producing (16, 4, 4) feature maps, and a GAP + FC + softmax head.
Training writes one checkpoint per epoch next to the loss log.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .errors import MissingCheckpointError, ShapeError
from .loss_analysis import LossSeries, write_loss_csv
from .nn import (
    GAP,
    MAXPOOL,
    RELU,
    SOFTMAX,
    ModelGraph,
    OptimizerConfig,
    conv3x3,
    fully_connected,
)
from .nn import checkpoint
from .nn.train import run_epochs
from .parallel import ordered_map

log = logging.getLogger(__name__)

IMAGE_SIZE = 16
N_CLASSES = 4
CLASS_NAMES = ("horizontal_stripes", "vertical_stripes", "checkerboard", "blob")
NOISE_SIGMA = 0.1

BACKBONE = [conv3x3(1, 8), RELU, MAXPOOL, conv3x3(8, 16), RELU, MAXPOOL]
HEAD = [GAP, fully_connected(16, N_CLASSES), SOFTMAX]
FEATURE_SHAPE = (16, 4, 4)
EXTRACT_CHUNK = 256


# -- data -------------------------------------------------------------------

def _pattern(cls, rng, size=IMAGE_SIZE, canonical=False):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if cls in (0, 1):
        period = 4.0 if canonical else rng.uniform(3.0, 6.0)
        phase = 0.0 if canonical else rng.uniform(0.0, 2 * math.pi)
        axis = yy if cls == 0 else xx
        return 0.5 + 0.5 * np.sin(2 * math.pi * axis / period + phase)
    if cls == 2:
        cell = 2 if canonical else int(rng.integers(2, 5))
        oy, ox = (0, 0) if canonical else rng.integers(0, cell, size=2)
        return (((yy + oy) // cell + (xx + ox) // cell) % 2).astype(np.float64)
    sigma = 3.0 if canonical else rng.uniform(2.0, 4.0)
    cy, cx = (0.0, 0.0) if canonical else rng.uniform(-1.0, 1.0, size=2)
    centre = (size - 1) / 2
    r2 = (yy - centre - cy) ** 2 + (xx - centre - cx) ** 2
    return np.exp(-r2 / (2 * sigma ** 2))


def canonical_pattern(cls: int, size: int = IMAGE_SIZE) -> np.ndarray:
    """Noise-free class prototype with fixed phase and scale."""
    return _pattern(cls, None, size, canonical=True).astype(np.float32)


@dataclass
class SyntheticDataset:
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray
    generator_seed: int
    n_per_class: int
    noise: float = NOISE_SIGMA

    @property
    def n_train(self):
        return self.train_images.shape[0]

    def config(self):
        return {"seed": self.generator_seed, "n_per_class": self.n_per_class, "noise": self.noise}


def generate_dataset(seed: int, n_per_class: int = 500, noise: float = NOISE_SIGMA) -> SyntheticDataset:
    """Balanced 4-class pattern images split 3:1 per class into train/test."""
    if n_per_class < 50:
        raise ValueError(f"n_per_class must be >= 50, got {n_per_class}")
    rng = np.random.default_rng([seed, 0])
    n_test = n_per_class // 4
    tr_x, tr_y, te_x, te_y = [], [], [], []
    for cls in range(N_CLASSES):
        imgs = np.stack([_pattern(cls, rng) for _ in range(n_per_class)])
        imgs = np.clip(imgs + noise * rng.standard_normal(imgs.shape), 0.0, 1.0)
        imgs = imgs.astype(np.float32)[:, None]
        tr_x.append(imgs[n_test:])
        te_x.append(imgs[:n_test])
        tr_y.append(np.full(n_per_class - n_test, cls))
        te_y.append(np.full(n_test, cls))
    tr_x, tr_y = np.concatenate(tr_x), np.concatenate(tr_y)
    te_x, te_y = np.concatenate(te_x), np.concatenate(te_y)
    order = rng.permutation(tr_x.shape[0])
    test_order = rng.permutation(te_x.shape[0])
    return SyntheticDataset(
        train_images=tr_x[order],
        train_labels=tr_y[order].astype(np.int64),
        test_images=te_x[test_order],
        test_labels=te_y[test_order].astype(np.int64),
        generator_seed=seed,
        n_per_class=n_per_class,
        noise=noise,
    )


# -- model and training ------------------------------------------------------

def build_original_model(seed: int) -> ModelGraph:
    return ModelGraph(BACKBONE + HEAD, (1, IMAGE_SIZE, IMAGE_SIZE), seed=seed)


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    seed: int = 7
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")

    def to_dict(self):
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "optimizer": self.optimizer.to_dict(),
        }


@dataclass
class TrainingTrace:
    losses: List[float]
    checkpoints: List[Path]
    config: dict
    root: Optional[Path] = None

    @property
    def loss_series(self) -> LossSeries:
        return LossSeries(np.array(self.losses), run_id=self.config.get("run_id", "original"))

    def checkpoint_for(self, epoch: int) -> Path:
        if not 1 <= epoch <= len(self.checkpoints) or not self.checkpoints[epoch - 1].exists():
            raise MissingCheckpointError(f"no checkpoint for marker epoch {epoch}", epoch=epoch)
        return self.checkpoints[epoch - 1]


def checkpoint_path(root: Path, epoch: int) -> Path:
    return Path(root) / "checkpoints" / f"epoch_{epoch:04d}.fmck"


def train_original(
    dataset: SyntheticDataset,
    out_dir: Union[str, Path],
    cfg: TrainConfig = TrainConfig(),
) -> TrainingTrace:
    """Train the classifier, writing ``loss.csv``, ``config.json`` and checkpoints."""
    root = Path(out_dir)
    (root / "checkpoints").mkdir(parents=True, exist_ok=True)
    model = build_original_model(cfg.seed)
    paths: List[Path] = []

    def save(epoch, loss):
        path = checkpoint_path(root, epoch)
        checkpoint.save(model, path)
        paths.append(path)
        log.info("original task epoch %d loss %.6f", epoch, loss)

    losses = run_epochs(
        model,
        dataset.train_images,
        dataset.train_labels,
        cfg,
        np.random.default_rng([cfg.seed, 1]),
        on_epoch=save,
    )
    config = {"run_id": "original", "dataset": dataset.config(), "training": cfg.to_dict()}
    write_loss_csv(root / "loss.csv", losses)
    (root / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return TrainingTrace(losses=losses, checkpoints=paths, config=config, root=root)


def load_trace(root: Union[str, Path]) -> TrainingTrace:
    root = Path(root)
    config = json.loads((root / "config.json").read_text())
    text_losses = (root / "loss.csv").read_text().strip().splitlines()[1:]
    losses = [float(r.split(",")[1]) for r in text_losses]
    paths = [checkpoint_path(root, m) for m in range(1, len(losses) + 1)]
    return TrainingTrace(losses=losses, checkpoints=paths, config=config, root=root)


def dataset_for_trace(trace: TrainingTrace) -> SyntheticDataset:
    d = trace.config["dataset"]
    return generate_dataset(d["seed"], d["n_per_class"], d.get("noise", NOISE_SIGMA))


# -- feature maps -------------------------------------------------------------

def load_backbone(source: Union[str, Path, ModelGraph]) -> ModelGraph:
    model = source if isinstance(source, ModelGraph) else checkpoint.load(source)
    n = len(BACKBONE)
    if model.input_shape != (1, IMAGE_SIZE, IMAGE_SIZE) or model.specs[:n] != BACKBONE:
        raise ShapeError(
            f"checkpoint/architecture mismatch: expected backbone {[s.kind.name for s in BACKBONE]} "
            f"on (1, {IMAGE_SIZE}, {IMAGE_SIZE}) inputs"
        )
    return model


def extract_feature_maps(source, images: np.ndarray) -> np.ndarray:
    """Backbone-only forward over ``images`` in order; returns (N, 16, 4, 4)."""
    model = load_backbone(source)
    stop = len(BACKBONE)
    chunks = [images[i:i + EXTRACT_CHUNK] for i in range(0, images.shape[0], EXTRACT_CHUNK)]
    outs = ordered_map(lambda x: model.forward(x, stop=stop)[0], chunks)
    if not outs:
        return np.zeros((0,) + FEATURE_SHAPE, dtype=np.float32)
    return np.concatenate(outs).astype(np.float32, copy=False)
