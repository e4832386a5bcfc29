"""Binary checkpoint format for named float64 tensors.

Layout (all integers little-endian u32, all floats little-endian f64):

    magic   8 bytes  b"IPLCKPT1"
    count   u32      number of tensors
    then per tensor, in ascending name order:
        name_len  u32
        name      name_len bytes, UTF-8
        rank      u32
        dims      rank * u32
        data      prod(dims) * f64

Round-trips are bitwise exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import BackboneParams, ModelParams, PrototypeBank, ProjectionHeads
from .numerics import Tensor

MAGIC = b"IPLCKPT1"


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")  # tobytes() emits C order
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError("checkpoint truncated")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    r = _Reader(blob)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: bad magic; not a checkpoint file")
    out: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = tuple(r.u32() for _ in range(rank))
        n = 1
        for d in dims:
            n *= d
        arr = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(dims)
        out[name] = arr.astype(np.float64)
    if r.pos != len(blob):
        raise FormatError(f"{path}: trailing bytes after last tensor")
    return out


def model_tensor_map(params: ModelParams) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(params.backbone.layers):
        out[f"backbone.layer{i}.weight"] = w.data
        out[f"backbone.layer{i}.bias"] = b.data
    out["prototypes"] = params.bank.prototypes.data
    out["prototype_class_ids"] = np.asarray(params.bank.class_ids, dtype=np.float64)
    out["scale"] = params.bank.scale.data
    out["scale_learnable"] = np.asarray(1.0 if params.bank.scale.requires_grad else 0.0)
    out["heads.sample.weight"] = params.heads.head_s[0].data
    out["heads.sample.bias"] = params.heads.head_s[1].data
    out["heads.prototype.weight"] = params.heads.head_p[0].data
    out["heads.prototype.bias"] = params.heads.head_p[1].data
    return out


def save_model(path, params: ModelParams) -> None:
    save_checkpoint(path, model_tensor_map(params))


def load_model(path) -> ModelParams:
    tensors = load_checkpoint(path)
    try:
        layers = []
        i = 0
        while f"backbone.layer{i}.weight" in tensors:
            layers.append(
                (
                    Tensor(tensors[f"backbone.layer{i}.weight"], requires_grad=True),
                    Tensor(tensors[f"backbone.layer{i}.bias"], requires_grad=True),
                )
            )
            i += 1
        if not layers:
            raise FormatError(f"{path}: no backbone layers present")
        input_dim = layers[0][0].shape[0]
        embed_dim = layers[-1][0].shape[1]
        hidden = tuple(w.shape[1] for w, _ in layers[:-1])
        backbone = BackboneParams(layers, input_dim, hidden, embed_dim)

        class_ids = tuple(int(c) for c in tensors["prototype_class_ids"])
        learnable = bool(tensors["scale_learnable"])
        bank = PrototypeBank(
            Tensor(tensors["prototypes"], requires_grad=True),
            class_ids,
            Tensor(tensors["scale"], requires_grad=learnable),
        )
        head_s = (
            Tensor(tensors["heads.sample.weight"], requires_grad=True),
            Tensor(tensors["heads.sample.bias"], requires_grad=True),
        )
        head_p = (
            Tensor(tensors["heads.prototype.weight"], requires_grad=True),
            Tensor(tensors["heads.prototype.bias"], requires_grad=True),
        )
        heads = ProjectionHeads(head_s, head_p, head_s[0].shape[1])
    except KeyError as exc:
        raise FormatError(f"{path}: missing tensor {exc}") from exc
    return ModelParams(backbone, bank, heads)
