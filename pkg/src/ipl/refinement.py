"""Relation-guided prototype refinement.

New-class embeddings and surviving prototypes are projected into a shared
latent space, their row-normalized cosine relation matrix is computed against
the concatenation [new; old], and the refined prototype for every class
(new and old alike) is the relation-weighted combination of the surviving
prototypes.  The whole pipeline is differentiable, so training can optimize
representations *through* the refinement.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import numerics
from .errors import ConfigError, DataError, ShapeError
from .model import ProjectionHeads, PrototypeBank
from .numerics import Tensor

REFINE_MODES = ("raw", "softmax")


@dataclass(frozen=True)
class RefinementConfig:
    """`raw` applies the relation weights as-is; `softmax` renormalizes each
    refined prototype's weights over the surviving prototypes into a convex
    combination (temperature is the softmax divisor)."""

    mode: str = "softmax"
    temperature: float = 0.2
    use_projection_heads: bool = False

    def __post_init__(self):
        if self.mode not in REFINE_MODES:
            raise ConfigError(f"mode must be one of {REFINE_MODES}, got {self.mode!r}")
        if self.mode == "softmax" and self.temperature <= 0.0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")


@dataclass
class RelationMatrix:
    """Cosine relations, shape [old, new + old]; columns ordered [new..., old...]."""

    values: Tensor
    new_ids: tuple[int, ...]
    old_ids: tuple[int, ...]

    def __post_init__(self):
        expected = (len(self.old_ids), len(self.new_ids) + len(self.old_ids))
        if self.values.shape != expected:
            raise ShapeError(
                f"relation matrix shape {self.values.shape} does not match ids {expected}"
            )


def project_to_latent(
    r_s: Tensor, protos: Tensor, heads: ProjectionHeads | None
) -> tuple[Tensor, Tensor]:
    """Linear+ReLU maps into the shared latent space; `heads=None` is identity."""
    if r_s.ndim != 2 or protos.ndim != 2 or r_s.shape[1] != protos.shape[1]:
        raise ShapeError(
            f"embeddings {r_s.shape} and prototypes {protos.shape} must share their width"
        )
    if heads is None:
        return r_s, protos
    if heads.head_s[0].shape[0] != r_s.shape[1]:
        raise ShapeError(
            f"heads expect input dim {heads.head_s[0].shape[0]}, got {r_s.shape[1]}"
        )
    w1, b1 = heads.head_s
    w2, b2 = heads.head_p
    t_s = numerics.relu(numerics.add(numerics.matmul(r_s, w1), b1))
    t_p = numerics.relu(numerics.add(numerics.matmul(protos, w2), b2))
    return t_s, t_p


def relation_matrix(
    t_s: Tensor,
    t_p: Tensor,
    new_ids: tuple[int, ...] | None = None,
    old_ids: tuple[int, ...] | None = None,
) -> RelationMatrix:
    """Row-normalize both latents and take cosines of old against [new; old]."""
    if t_s.ndim != 2 or t_p.ndim != 2 or t_s.shape[1] != t_p.shape[1]:
        raise ShapeError(
            f"latents {t_s.shape} and {t_p.shape} must share their width"
        )
    if new_ids is None:
        new_ids = tuple(range(t_s.shape[0]))
    if old_ids is None:
        old_ids = tuple(range(len(new_ids), len(new_ids) + t_p.shape[0]))
    s_n = numerics.l2_normalize(t_s)
    p_n = numerics.l2_normalize(t_p)
    all_n = numerics.concat_rows([s_n, p_n])
    corr = numerics.matmul(p_n, numerics.transpose(all_n))
    return RelationMatrix(values=corr, new_ids=tuple(new_ids), old_ids=tuple(old_ids))


def refine_prototypes(
    corr: RelationMatrix, protos_old: Tensor, cfg: RefinementConfig
) -> Tensor:
    """Combine surviving prototypes into refined ones, ordered [new..., old...].

    raw mode:      refined = relations^T @ old_prototypes
    softmax mode:  each refined prototype's weight vector over the old axis is
                   softmaxed first, making it a convex combination.
    """
    old = len(corr.old_ids)
    if old < 1:
        raise DataError("refinement needs at least one surviving prototype")
    if protos_old.ndim != 2 or protos_old.shape[0] != old:
        raise ShapeError(
            f"prototype matrix {protos_old.shape} does not match {old} surviving classes"
        )
    weights = numerics.transpose(corr.values)  # [(new+old), old]
    if cfg.mode == "softmax":
        weights = numerics.softmax(weights, temperature=cfg.temperature)
    return numerics.matmul(weights, protos_old)


def refine(
    bank: PrototypeBank,
    new_embeddings: Tensor,
    new_ids,
    heads: ProjectionHeads | None,
    cfg: RefinementConfig,
) -> PrototypeBank:
    """Full refinement: project, relate, recombine; returns a grown bank.

    The returned bank covers [new_ids..., old_ids...] with refined prototypes
    for every class and the same scale factor; the input bank is untouched.
    """
    new_ids = tuple(int(c) for c in new_ids)
    if len(new_ids) == 0:
        raise DataError("refinement needs at least one new class")
    if len(set(new_ids)) != len(new_ids):
        raise DataError(f"duplicate new class ids {new_ids}")
    overlap = set(new_ids).intersection(bank.class_ids)
    if overlap:
        raise DataError(f"new class ids already present: {sorted(overlap)}")
    if new_embeddings.ndim != 2 or new_embeddings.shape[0] != len(new_ids):
        raise ShapeError(
            f"embeddings shape {new_embeddings.shape} does not match {len(new_ids)} new ids"
        )

    t_s, t_p = project_to_latent(
        new_embeddings, bank.prototypes, heads if cfg.use_projection_heads else None
    )
    corr = relation_matrix(t_s, t_p, new_ids, bank.class_ids)
    refined = refine_prototypes(corr, bank.prototypes, cfg)
    return PrototypeBank(
        prototypes=refined,
        class_ids=new_ids + bank.class_ids,
        scale=bank.scale,
    )
