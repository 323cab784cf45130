"""Layer kinds with explicit forward/backward on (N, C, H, W) arrays.

Every ``forward`` returns ``(output, cache)``; ``backward(dout, cache)``
returns ``(dinput, [dparam, ...])`` with parameter gradients in the same
order as ``params``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError

Shape = Tuple[int, int, int]


class LayerKind(IntEnum):
    """Kind tags; the integer values are the on-disk checkpoint tags."""

    CONV3X3 = 1
    MAXPOOL2X2 = 2
    RELU = 3
    GLOBAL_AVG_POOL = 4
    FULLY_CONNECTED = 5
    SOFTMAX = 6


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_channels: Optional[int] = None
    out_channels: Optional[int] = None
    padding: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.kind in (LayerKind.CONV3X3, LayerKind.FULLY_CONNECTED):
            if not self.in_channels or not self.out_channels:
                raise ValueError(f"{self.kind.name} needs input and output sizes")
            if self.in_channels < 1 or self.out_channels < 1:
                raise ValueError(f"{self.kind.name} sizes must be >= 1")
        if self.kind is LayerKind.CONV3X3 and self.padding != 1:
            raise ValueError("conv3x3 supports padding 1 only")


def conv3x3(cin, cout):
    return LayerSpec(LayerKind.CONV3X3, cin, cout)


def fully_connected(fin, fout):
    return LayerSpec(LayerKind.FULLY_CONNECTED, fin, fout)


MAXPOOL = LayerSpec(LayerKind.MAXPOOL2X2)
RELU = LayerSpec(LayerKind.RELU)
GAP = LayerSpec(LayerKind.GLOBAL_AVG_POOL)
SOFTMAX = LayerSpec(LayerKind.SOFTMAX)


class Layer:
    kind: LayerKind
    params: List[np.ndarray]

    def __init__(self):
        self.params = []

    @property
    def name(self) -> str:
        return self.kind.name.lower()

    def output_shape(self, shape: Shape) -> Shape:
        return shape

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout, cache):
        raise NotImplementedError


def _edge_pad(x):
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")


def _edge_pad_backward(dxp):
    # padded row/col 0 and -1 replicate the first/last real row/col
    rows = dxp[:, :, 1:-1, :].copy()
    rows[:, :, 0, :] += dxp[:, :, 0, :]
    rows[:, :, -1, :] += dxp[:, :, -1, :]
    dx = rows[:, :, :, 1:-1].copy()
    dx[:, :, :, 0] += rows[:, :, :, 0]
    dx[:, :, :, -1] += rows[:, :, :, -1]
    return dx


class Conv3x3(Layer):
    """3x3 convolution, stride 1, one pixel of replicated-edge padding.

    Edge padding keeps per-channel constant maps constant, so a constant
    input propagates through the whole network as per-channel constants.
    """

    kind = LayerKind.CONV3X3

    def __init__(self, cin, cout):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.params = [
            np.zeros((cout, cin, 3, 3), dtype=np.float32),
            np.zeros(cout, dtype=np.float32),
        ]

    @property
    def fan_in(self):
        return self.cin * 9

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.cin:
            raise ShapeError(f"conv3x3 expects {self.cin} input channels, got {c}")
        return (self.cout, h, w)

    def forward(self, x):
        n, c, h, w = x.shape
        weight, bias = self.params
        xp = _edge_pad(x)
        # (N, C, H, W, 3, 3) -> rows of C*9 receptive fields
        win = sliding_window_view(xp, (3, 3), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)
        out = cols @ weight.reshape(self.cout, -1).T + bias
        out = out.reshape(n, h, w, self.cout).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), (x.shape, cols)

    def backward(self, dout, cache):
        (n, c, h, w), cols = cache
        weight = self.params[0]
        d2 = dout.transpose(0, 2, 3, 1).reshape(n * h * w, self.cout)
        dweight = (d2.T @ cols).reshape(weight.shape)
        dbias = d2.sum(axis=0)
        dcols = (d2 @ weight.reshape(self.cout, -1)).reshape(n, h, w, c, 3, 3)
        dxp = np.zeros((n, c, h + 2, w + 2), dtype=dout.dtype)
        for i in range(3):
            for j in range(3):
                dxp[:, :, i:i + h, j:j + w] += dcols[..., i, j].transpose(0, 3, 1, 2)
        return _edge_pad_backward(dxp), [dweight, dbias]


class MaxPool2x2(Layer):
    """2x2 max pooling, stride 2; odd trailing rows/cols are dropped.

    Ties go to the lowest flat index inside each window.
    """

    kind = LayerKind.MAXPOOL2X2

    def output_shape(self, shape):
        c, h, w = shape
        if h < 2 or w < 2:
            raise ShapeError(f"maxpool2x2 needs spatial size >= 2, got {h}x{w}")
        return (c, h // 2, w // 2)

    def forward(self, x):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        blocks = x[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2)
        blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
        arg = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return out, (x.shape, arg)

    def backward(self, dout, cache):
        (n, c, h, w), arg = cache
        h2, w2 = h // 2, w // 2
        blocks = np.zeros((n, c, h2, w2, 4), dtype=dout.dtype)
        np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
        blocks = blocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros((n, c, h, w), dtype=dout.dtype)
        dx[:, :, : 2 * h2, : 2 * w2] = blocks.reshape(n, c, 2 * h2, 2 * w2)
        return dx, []


class ReLU(Layer):
    kind = LayerKind.RELU

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, np.zeros((), dtype=x.dtype)), mask

    def backward(self, dout, mask):
        return np.where(mask, dout, np.zeros((), dtype=dout.dtype)), []


class GlobalAvgPool(Layer):
    kind = LayerKind.GLOBAL_AVG_POOL

    def output_shape(self, shape):
        return (shape[0], 1, 1)

    def forward(self, x):
        return x.mean(axis=(2, 3), keepdims=True), x.shape

    def backward(self, dout, shape):
        h, w = shape[2], shape[3]
        return np.broadcast_to(dout / (h * w), shape).astype(dout.dtype), []


class FullyConnected(Layer):
    """Dense layer over the flattened (C, H, W) input; output is (N, out, 1, 1)."""

    kind = LayerKind.FULLY_CONNECTED

    def __init__(self, fin, fout):
        super().__init__()
        self.fin, self.fout = fin, fout
        self.params = [
            np.zeros((fout, fin), dtype=np.float32),
            np.zeros(fout, dtype=np.float32),
        ]

    @property
    def fan_in(self):
        return self.fin

    def output_shape(self, shape):
        size = shape[0] * shape[1] * shape[2]
        if size != self.fin:
            raise ShapeError(
                f"fully_connected expects {self.fin} input features, got {size} from {shape}"
            )
        return (self.fout, 1, 1)

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        weight, bias = self.params
        out = flat @ weight.T + bias
        return out.reshape(x.shape[0], self.fout, 1, 1), (x.shape, flat)

    def backward(self, dout, cache):
        shape, flat = cache
        d2 = dout.reshape(shape[0], self.fout)
        weight = self.params[0]
        dweight = d2.T @ flat
        dbias = d2.sum(axis=0)
        return (d2 @ weight).reshape(shape), [dweight, dbias]


def softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class Softmax(Layer):
    """Softmax across channels of an (N, K, 1, 1) tensor."""

    kind = LayerKind.SOFTMAX

    def output_shape(self, shape):
        if shape[1:] != (1, 1):
            raise ShapeError(f"softmax expects (K, 1, 1) input, got {shape}")
        return shape

    def forward(self, x):
        p = softmax_rows(x.reshape(x.shape[0], -1)).reshape(x.shape)
        return p, p

    def backward(self, dout, p):
        inner = (dout * p).sum(axis=1, keepdims=True)
        return p * (dout - inner), []


def make_layer(spec: LayerSpec) -> Layer:
    kind = spec.kind
    if kind is LayerKind.CONV3X3:
        return Conv3x3(spec.in_channels, spec.out_channels)
    if kind is LayerKind.FULLY_CONNECTED:
        return FullyConnected(spec.in_channels, spec.out_channels)
    return {
        LayerKind.MAXPOOL2X2: MaxPool2x2,
        LayerKind.RELU: ReLU,
        LayerKind.GLOBAL_AVG_POOL: GlobalAvgPool,
        LayerKind.SOFTMAX: Softmax,
    }[kind]()
