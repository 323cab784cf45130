"""FMCK checkpoint files.

Layout (little-endian)::

    b"FMCK"  u32 version  u32 layer_count
    per layer:  u8 kind_tag  u8 tensor_count
        per tensor:  u8 ndim  u32 dim * ndim  f32 data (row-major)

Parameter-free layers carry ``tensor_count = 0``.  Input shape is stored as a
trailing ``u32 C, H, W`` so a reader can rebuild the graph without outside
information.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import FormatError
from .layers import LayerKind, LayerSpec
from .model import ModelGraph

MAGIC = b"FMCK"
VERSION = 1


def dumps(model: ModelGraph) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(model.layers)))
    for layer in model.layers:
        buf.write(struct.pack("<BB", int(layer.kind), len(layer.params)))
        for p in layer.params:
            buf.write(struct.pack("<B", p.ndim))
            buf.write(struct.pack(f"<{p.ndim}I", *p.shape))
            buf.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
    buf.write(struct.pack("<3I", *model.input_shape))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> ModelGraph:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("not an FMCK checkpoint (bad magic)")
    version, n_layers = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    specs, tensors = [], []
    for _ in range(n_layers):
        tag, n_tensors = r.unpack("<BB")
        try:
            kind = LayerKind(tag)
        except ValueError:
            raise FormatError(f"unknown layer kind tag {tag}") from None
        layer_tensors = []
        for _ in range(n_tensors):
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}I")
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
            layer_tensors.append(arr.astype(np.float32))
        if kind in (LayerKind.CONV3X3, LayerKind.FULLY_CONNECTED):
            if len(layer_tensors) != 2:
                raise FormatError(f"{kind.name} layer needs weight and bias")
            w = layer_tensors[0]
            specs.append(LayerSpec(kind, int(w.shape[1]), int(w.shape[0])))
        else:
            if layer_tensors:
                raise FormatError(f"{kind.name} layer carries no parameters")
            specs.append(LayerSpec(kind))
        tensors.extend(layer_tensors)
    input_shape = r.unpack("<3I")
    if r.pos != len(data):
        raise FormatError("trailing bytes after checkpoint")
    model = ModelGraph(specs, input_shape, seed=0)
    model.load_parameters(tensors)
    return model


def save(model: ModelGraph, path: Union[str, Path]) -> None:
    Path(path).write_bytes(dumps(model))


def load(path: Union[str, Path]) -> ModelGraph:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from None
    return loads(data)
