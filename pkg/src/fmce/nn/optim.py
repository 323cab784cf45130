"""Plain SGD and bias-corrected Adam acting in place on model parameters."""
from dataclasses import dataclass, field
from typing import List

import numpy as np

from ..errors import ShapeError


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("adam epsilon must be positive")

    def to_dict(self):
        return {
            "kind": self.kind,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
        }


@dataclass
class OptimizerState:
    config: OptimizerConfig
    t: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def make_optimizer(config: OptimizerConfig, params) -> OptimizerState:
    state = OptimizerState(config)
    if config.kind == "adam":
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    return state


def step(state: OptimizerState, params, grads) -> None:
    """Apply one update to ``params`` in place."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(grads)} gradients for {len(params)} parameters")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != np.shape(g):
            raise ShapeError(f"gradient {i} has shape {np.shape(g)}, parameter has {p.shape}")
    cfg = state.config
    lr = np.asarray(cfg.learning_rate, dtype=params[0].dtype) if params else cfg.learning_rate
    if cfg.kind == "sgd":
        for p, g in zip(params, grads):
            p -= lr * g
        return
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)).astype(p.dtype, copy=False)
