"""Learnable state: MLP feature extractor, prototype bank, projection heads.

The backbone is a plain ReLU MLP over feature vectors; classification
compares embeddings to per-class prototypes under a scaled cosine metric.
The projection heads are the two linear+ReLU maps used by prototype
refinement to move embeddings and prototypes into a shared latent space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import ConfigError, ShapeError
from .numerics import Tensor
from .rng import RngState


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    embed_dim: int
    num_base_classes: int
    hidden_dims: tuple[int, ...] = (64, 64)
    latent_dim: int | None = None
    base_class_ids: tuple[int, ...] | None = None
    scale_init: float = 10.0
    scale_learnable: bool = True

    def __post_init__(self):
        dims = (self.input_dim, self.embed_dim, *(self.hidden_dims or ()))
        if any(d < 1 for d in dims):
            raise ConfigError(f"all dimensions must be positive, got {dims}")
        if self.latent_dim is not None and self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be positive, got {self.latent_dim}")
        if self.num_base_classes < 1:
            raise ConfigError(f"need at least one base class, got {self.num_base_classes}")
        if self.base_class_ids is not None and len(self.base_class_ids) != self.num_base_classes:
            raise ConfigError("base_class_ids length must equal num_base_classes")
        if self.scale_init <= 0.0:
            raise ConfigError(f"scale_init must be positive, got {self.scale_init}")

    def resolved_latent_dim(self) -> int:
        return self.embed_dim if self.latent_dim is None else self.latent_dim

    def resolved_class_ids(self) -> tuple[int, ...]:
        if self.base_class_ids is not None:
            return tuple(self.base_class_ids)
        return tuple(range(self.num_base_classes))


@dataclass
class BackboneParams:
    """Ordered (weight, bias) pairs with ReLU between layers, none after the last."""

    layers: list[tuple[Tensor, Tensor]]
    input_dim: int
    hidden_dims: tuple[int, ...]
    embed_dim: int

    def __post_init__(self):
        dims = [self.input_dim, *self.hidden_dims, self.embed_dim]
        if len(self.layers) != len(dims) - 1:
            raise ConfigError(f"expected {len(dims) - 1} layers, got {len(self.layers)}")
        for i, (w, b) in enumerate(self.layers):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ConfigError(
                    f"layer {i} shapes {w.shape}/{b.shape} do not chain "
                    f"{dims[i]} -> {dims[i + 1]}"
                )

    def tensors(self) -> list[Tensor]:
        return [t for pair in self.layers for t in pair]


@dataclass
class PrototypeBank:
    """Per-class prototype matrix with aligned class ids and a cosine scale factor."""

    prototypes: Tensor
    class_ids: tuple[int, ...]
    scale: Tensor

    _row_of: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.class_ids = tuple(int(c) for c in self.class_ids)
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ConfigError(f"class ids must be distinct, got {self.class_ids}")
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] != len(self.class_ids):
            raise ConfigError(
                f"prototype matrix {self.prototypes.shape} does not match "
                f"{len(self.class_ids)} class ids"
            )
        if self.scale.data.size != 1 or self.scale.item() <= 0.0:
            raise ConfigError("scale must be a positive scalar")
        self._row_of = {c: i for i, c in enumerate(self.class_ids)}

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    @property
    def embed_dim(self) -> int:
        return self.prototypes.shape[1]

    def row_of(self, class_id: int) -> int:
        return self._row_of[class_id]


@dataclass
class ProjectionHeads:
    """Two linear maps from embedding space into a shared latent space."""

    head_s: tuple[Tensor, Tensor]
    head_p: tuple[Tensor, Tensor]
    latent_dim: int

    def __post_init__(self):
        for name, (w, b) in (("head_s", self.head_s), ("head_p", self.head_p)):
            if w.ndim != 2 or w.shape[1] != self.latent_dim or b.shape != (self.latent_dim,):
                raise ConfigError(f"{name} must map embed_dim -> {self.latent_dim}")
        if self.head_s[0].shape[0] != self.head_p[0].shape[0]:
            raise ConfigError("both heads must share the same input dimension")

    def tensors(self) -> list[Tensor]:
        return [*self.head_s, *self.head_p]


@dataclass
class ModelParams:
    """The full learnable state; unpacks as (backbone, bank, heads)."""

    backbone: BackboneParams
    bank: PrototypeBank
    heads: ProjectionHeads

    def __iter__(self):
        return iter((self.backbone, self.bank, self.heads))

    def trainable(self, include_heads: bool = True) -> list[Tensor]:
        out = self.backbone.tensors() + [self.bank.prototypes]
        if self.bank.scale.requires_grad:
            out.append(self.bank.scale)
        if include_heads:
            out.extend(self.heads.tensors())
        return out

    def clone(self) -> "ModelParams":
        def copy_t(t: Tensor) -> Tensor:
            c = Tensor(t.data.copy(), requires_grad=t.requires_grad)
            return c

        backbone = BackboneParams(
            layers=[(copy_t(w), copy_t(b)) for w, b in self.backbone.layers],
            input_dim=self.backbone.input_dim,
            hidden_dims=self.backbone.hidden_dims,
            embed_dim=self.backbone.embed_dim,
        )
        bank = PrototypeBank(
            prototypes=copy_t(self.bank.prototypes),
            class_ids=self.bank.class_ids,
            scale=copy_t(self.bank.scale),
        )
        heads = ProjectionHeads(
            head_s=(copy_t(self.heads.head_s[0]), copy_t(self.heads.head_s[1])),
            head_p=(copy_t(self.heads.head_p[0]), copy_t(self.heads.head_p[1])),
            latent_dim=self.heads.latent_dim,
        )
        return ModelParams(backbone, bank, heads)


def _glorot(rng: RngState, fan_in: int, fan_out: int) -> np.ndarray:
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform_array((fan_in, fan_out), -limit, limit)


def init_params(config: ModelConfig, rng: RngState) -> ModelParams:
    """Seeded Glorot-uniform initialization of every learnable tensor.

    Draw order is fixed (backbone layers, prototypes, sample head, prototype
    head) so the same seed always yields bitwise-identical parameters.
    Prototypes use the same scaled-uniform family as the weights; biases
    start at zero; the cosine scale starts at ``scale_init``.
    """
    dims = [config.input_dim, *config.hidden_dims, config.embed_dim]
    layers = []
    for i in range(len(dims) - 1):
        w = Tensor(_glorot(rng, dims[i], dims[i + 1]), requires_grad=True)
        b = Tensor(np.zeros(dims[i + 1]), requires_grad=True)
        layers.append((w, b))
    backbone = BackboneParams(layers, config.input_dim, tuple(config.hidden_dims), config.embed_dim)

    protos = Tensor(
        _glorot(rng, config.num_base_classes, config.embed_dim), requires_grad=True
    )
    scale = Tensor(np.asarray(config.scale_init), requires_grad=config.scale_learnable)
    bank = PrototypeBank(protos, config.resolved_class_ids(), scale)

    latent = config.resolved_latent_dim()
    head_s = (
        Tensor(_glorot(rng, config.embed_dim, latent), requires_grad=True),
        Tensor(np.zeros(latent), requires_grad=True),
    )
    head_p = (
        Tensor(_glorot(rng, config.embed_dim, latent), requires_grad=True),
        Tensor(np.zeros(latent), requires_grad=True),
    )
    heads = ProjectionHeads(head_s, head_p, latent)
    return ModelParams(backbone, bank, heads)


def extract_features(batch: Tensor, backbone: BackboneParams) -> Tensor:
    """Forward pass linear -> ReLU -> ... -> linear over a [b, input_dim] batch."""
    if batch.ndim != 2 or batch.shape[1] != backbone.input_dim:
        raise ShapeError(
            f"batch shape {batch.shape} does not match input_dim {backbone.input_dim}"
        )
    h = batch
    last = len(backbone.layers) - 1
    for i, (w, b) in enumerate(backbone.layers):
        h = numerics.add(numerics.matmul(h, w), b)
        if i != last:
            h = numerics.relu(h)
    return h


def classify_cosine(embeddings: Tensor, bank: PrototypeBank) -> Tensor:
    """Scaled cosine logits: scale * <normalize(embedding), normalize(prototype)>."""
    if embeddings.ndim != 2 or embeddings.shape[1] != bank.embed_dim:
        raise ShapeError(
            f"embeddings shape {embeddings.shape} does not match bank dim {bank.embed_dim}"
        )
    e = numerics.l2_normalize(embeddings)
    p = numerics.l2_normalize(bank.prototypes)
    return numerics.mul(numerics.matmul(e, numerics.transpose(p)), bank.scale)
