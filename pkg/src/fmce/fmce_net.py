"""Convergence-score classifier over backbone feature maps.

The network is sized from the feature-map shape: an optional channel reducer
when the input is wider than ``channel_budget``, then stages of
(conv3x3 halving channels, maxpool2x2, relu) until the spatial size is 1 or 2
(at least two stages), then a fully connected layer to K logits.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .errors import ShapeError
from .fmcs_dataset import FmcsDataset
from .metrics import EvalMetrics, evaluate_predictions
from .nn import MAXPOOL, RELU, SOFTMAX, LayerKind, LayerSpec, ModelGraph, OptimizerConfig, conv3x3, fully_connected
from .nn import checkpoint
from .nn.train import run_epochs

log = logging.getLogger(__name__)

DEFAULT_CHANNEL_BUDGET = 1024


@dataclass(frozen=True)
class FmceArchitecture:
    input_shape: Tuple[int, int, int]
    k: int
    specs: Tuple[LayerSpec, ...]
    bottleneck: Tuple[int, int, int]
    n_stages: int
    reducer: bool

    def describe(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "k": self.k,
            "stages": self.n_stages,
            "reducer": self.reducer,
            "bottleneck": list(self.bottleneck),
            "layers": [s.kind.name.lower() for s in self.specs],
        }


def build_fmce(
    input_shape,
    k: int,
    channel_budget: int = DEFAULT_CHANNEL_BUDGET,
    allow_single_stage: bool = False,
) -> FmceArchitecture:
    c, h, w = (int(v) for v in input_shape)
    if k < 2:
        raise ValueError(f"need at least 2 convergence scores, got {k}")
    if c < 2:
        raise ShapeError(f"FMCE input needs at least 2 channels, got {c}")
    side = min(h, w)
    stages, s = 0, side
    while s > 2:
        s //= 2
        stages += 1
    stages = max(stages, 2)
    if side >> stages < 1:
        if not allow_single_stage or side < 2:
            raise ShapeError(f"input {h}x{w} is too small to halve twice")
        stages = 1

    specs: List[LayerSpec] = []
    reducer = c > channel_budget
    if reducer:
        specs += [conv3x3(c, channel_budget), RELU]
        c = channel_budget
    for _ in range(stages):
        nxt = max(1, c // 2)
        specs += [conv3x3(c, nxt), MAXPOOL, RELU]
        c, h, w = nxt, h // 2, w // 2
    specs += [fully_connected(c * h * w, k), SOFTMAX]
    return FmceArchitecture((int(input_shape[0]), int(input_shape[1]), int(input_shape[2])),
                            k, tuple(specs), (c, h, w), stages, reducer)


class FmceModel:
    """Model graph plus the per-channel standardisation applied to its input."""

    def __init__(self, graph: ModelGraph, mean: np.ndarray, std: np.ndarray):
        self.graph = graph
        self.mean = np.asarray(mean, dtype=np.float32).reshape(-1)
        self.std = np.asarray(std, dtype=np.float32).reshape(-1)
        if self.mean.size != graph.input_shape[0] or self.std.size != graph.input_shape[0]:
            raise ShapeError("normalisation statistics do not match input channels")

    @property
    def k(self) -> int:
        return self.graph.output_shape[0]

    def normalise(self, x):
        return ((x - self.mean[:, None, None]) / self.std[:, None, None]).astype(np.float32)

    def logits(self, features, batch_size=512) -> np.ndarray:
        return self.graph.predict_logits(self.normalise(features), batch_size)

    def predict(self, features) -> np.ndarray:
        """Predicted scores in 1..K."""
        if features.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return self.logits(features).argmax(axis=1) + 1

    def save(self, path: Union[str, Path], extra: Optional[dict] = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        checkpoint.save(self.graph, path)
        meta = {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std], "k": self.k}
        meta.update(extra or {})
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FmceModel":
        path = Path(path)
        graph = checkpoint.load(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        return cls(graph, meta["mean"], meta["std"])


def channel_stats(features: np.ndarray, eps: float = 1e-6):
    f = features.astype(np.float64)
    mean = f.mean(axis=(0, 2, 3))
    std = f.std(axis=(0, 2, 3))
    return mean.astype(np.float32), np.maximum(std, eps).astype(np.float32)


@dataclass
class FmceTrainConfig:
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    normalise: bool = True
    channel_budget: int = DEFAULT_CHANNEL_BUDGET

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")

    def to_dict(self):
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "optimizer": self.optimizer.to_dict(),
            "normalise": self.normalise,
            "channel_budget": self.channel_budget,
        }


def train_fmce(ds: FmcsDataset, cfg: FmceTrainConfig = FmceTrainConfig()):
    """Train on the dataset's train split; returns ``(model, epoch_losses)``."""
    if not ds.has_split:
        raise ValueError("dataset has no train/test split")
    arch = build_fmce(ds.feature_shape, ds.k, cfg.channel_budget)
    graph = ModelGraph(arch.specs, arch.input_shape, seed=cfg.seed)
    x, y = ds.subset(ds.train_idx)
    if cfg.normalise:
        mean, std = channel_stats(x)
    else:
        mean = np.zeros(arch.input_shape[0], dtype=np.float32)
        std = np.ones(arch.input_shape[0], dtype=np.float32)
    model = FmceModel(graph, mean, std)
    losses: List[float] = []
    if cfg.epochs:
        losses = run_epochs(
            graph,
            model.normalise(x),
            y.astype(np.int64) - 1,
            cfg,
            np.random.default_rng([cfg.seed, 3]),
            on_epoch=lambda e, l: log.info("fmce epoch %d loss %.6f", e, l),
        )
    return model, losses


def evaluate(model: FmceModel, ds: FmcsDataset, idx=None) -> EvalMetrics:
    """Macro metrics over ``idx`` (the test split by default)."""
    if idx is None:
        if not ds.has_split:
            raise ValueError("dataset has no train/test split")
        idx = ds.test_idx
    if len(idx) == 0:
        raise ValueError("cannot evaluate an empty test split")
    x, y = ds.subset(idx)
    return evaluate_predictions(y, model.predict(x), ds.k)


def last_conv_index(graph: ModelGraph) -> int:
    for i in range(len(graph.layers) - 1, -1, -1):
        if graph.layers[i].kind is LayerKind.CONV3X3:
            return i
    raise ShapeError("model has no convolutional layer")


def target_activation_grad(model: FmceModel, features: np.ndarray, target: int):
    """Last-conv activation and d(logit[target]) / d(activation) for one sample."""
    if not 1 <= target <= model.k:
        raise ValueError(f"target score must lie in 1..{model.k}, got {target}")
    x = model.normalise(np.asarray(features, dtype=np.float32)[None])
    graph = model.graph
    out, cache = graph.forward(x, stop=graph.logits_stop())
    upstream = np.zeros_like(out)
    upstream.reshape(1, -1)[0, target - 1] = 1
    _, _, act_grads = graph.backward(cache, upstream, keep_activation_grads=True)
    li = last_conv_index(graph)
    return cache.activations[li][0], act_grads[li][0]


def grad_cam(model: FmceModel, features: np.ndarray, target: int) -> np.ndarray:
    """Heatmap over the last conv layer's spatial grid, scaled to [0, 1]."""
    act, grad = target_activation_grad(model, features, target)
    weights = grad.astype(np.float64).mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, act.astype(np.float64), axes=1), 0.0)
    top = cam.max()
    if top > 0:
        cam = cam / top
    return cam
