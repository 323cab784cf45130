"""Sequential model graph with seeded initialisation and explicit caches."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ShapeError
from .layers import Layer, LayerKind, LayerSpec, Shape, make_layer


@dataclass
class ForwardCache:
    input_shape: tuple
    layer_caches: list
    activations: list  # output of every layer, activations[i] = layer i output


class ModelGraph:
    """An ordered stack of layers over a fixed (C, H, W) input shape.

    Parameters are drawn from ``numpy.random.default_rng(seed)`` layer by
    layer, weight before bias, uniform in +-sqrt(1 / fan_in).
    """

    def __init__(self, specs: Sequence[LayerSpec], input_shape: Shape, seed: int = 0):
        self.specs = list(specs)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.seed = int(seed)
        self.layers: List[Layer] = [make_layer(s) for s in self.specs]
        self.shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                self.shapes.append(layer.output_shape(self.shapes[-1]))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.name}): {exc}") from None
        self.reset_parameters(self.seed)

    def reset_parameters(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            if not layer.params:
                continue
            bound = np.sqrt(1.0 / layer.fan_in)
            for p in layer.params:
                p[...] = rng.uniform(-bound, bound, size=p.shape).astype(p.dtype)

    @property
    def output_shape(self) -> Shape:
        return self.shapes[-1]

    def parameters(self) -> List[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def astype(self, dtype) -> "ModelGraph":
        """Copy of the model with parameters cast to ``dtype``."""
        other = ModelGraph(self.specs, self.input_shape, self.seed)
        for dst, src in zip(other.layers, self.layers):
            dst.params = [p.astype(dtype) for p in src.params]
        return other

    def copy(self) -> "ModelGraph":
        return self.astype(self.dtype)

    @property
    def dtype(self):
        params = self.parameters()
        return params[0].dtype if params else np.dtype(np.float32)

    def load_parameters(self, tensors: Sequence[np.ndarray]) -> None:
        own = self.parameters()
        if len(tensors) != len(own):
            raise ShapeError(f"expected {len(own)} parameter tensors, got {len(tensors)}")
        for i, (dst, src) in enumerate(zip(own, tensors)):
            if dst.shape != tuple(src.shape):
                raise ShapeError(f"parameter {i}: shape {tuple(src.shape)} != {dst.shape}")
            dst[...] = src

    def forward(self, x: np.ndarray, stop: Optional[int] = None) -> Tuple[np.ndarray, ForwardCache]:
        """Run layers ``[0, stop)`` (all by default) and keep every cache."""
        x = np.asarray(x)
        if x.ndim != 4 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(
                f"layer 0 ({self.layers[0].name}): input shape {tuple(x.shape[1:])} "
                f"!= expected {self.input_shape}"
            )
        x = x.astype(self.dtype, copy=False)
        x_shape = x.shape
        caches, acts = [], []
        for layer in self.layers[:stop]:
            x, cache = layer.forward(x)
            caches.append(cache)
            acts.append(x)
        return x, ForwardCache(x_shape, caches, acts)

    def backward(self, cache: ForwardCache, dout: np.ndarray, keep_activation_grads=False):
        """Backpropagate ``dout`` through the layers that produced ``cache``.

        Returns ``(param_grads, dinput)`` or, with ``keep_activation_grads``,
        ``(param_grads, dinput, act_grads)`` where ``act_grads[i]`` is the
        gradient w.r.t. the output of layer ``i``.
        """
        n_layers = len(cache.layer_caches)
        expected = np.shape(cache.activations[-1]) if n_layers else cache.input_shape
        if np.shape(dout) != expected:
            raise ShapeError(
                f"stale cache: upstream gradient {np.shape(dout)} does not match "
                f"layer {n_layers - 1} output {expected}"
            )
        grads: List[List[np.ndarray]] = [[] for _ in range(n_layers)]
        act_grads = [None] * n_layers
        d = np.asarray(dout, dtype=self.dtype)
        for i in range(n_layers - 1, -1, -1):
            act_grads[i] = d
            d, grads[i] = self.layers[i].backward(d, cache.layer_caches[i])
        flat = []
        for i, layer in enumerate(self.layers):
            if layer.params:
                flat.extend(grads[i] if i < n_layers else [np.zeros_like(p) for p in layer.params])
        if keep_activation_grads:
            return flat, d, act_grads
        return flat, d

    def logits_stop(self) -> int:
        """Index that stops the forward pass before a trailing softmax."""
        if self.layers and self.layers[-1].kind is LayerKind.SOFTMAX:
            return len(self.layers) - 1
        return len(self.layers)

    def predict_logits(self, x, batch_size=512) -> np.ndarray:
        stop = self.logits_stop()
        outs = []
        for i in range(0, x.shape[0], batch_size):
            out, _ = self.forward(x[i:i + batch_size], stop=stop)
            outs.append(out.reshape(out.shape[0], -1))
        return np.concatenate(outs, axis=0)
