"""Simulated incremental episodes drawn from the base training set.

An episode pretends N base classes are new: it carries an N-way K-shot
support set for those classes, a query batch labelled over ALL base classes,
and the ids whose prototypes get eliminated for the duration of the episode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .data import Dataset
from .errors import ConfigError, DataError, ShapeError
from .model import PrototypeBank
from .numerics import Tensor
from .rng import RngState


@dataclass(frozen=True)
class EpisodeConfig:
    n_way: int = 2
    k_shot: int = 5
    query_batch: int = 128
    updates_per_episode: int = 1

    def __post_init__(self):
        for name in ("n_way", "k_shot", "query_batch", "updates_per_episode"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_way % self.updates_per_episode != 0:
            raise ConfigError(
                f"updates_per_episode ({self.updates_per_episode}) must divide "
                f"n_way ({self.n_way})"
            )


@dataclass(frozen=True)
class Episode:
    """Support block [N, K, input_dim], all-class query batch, eliminated ids."""

    support_features: np.ndarray
    support_ids: tuple[int, ...]
    query_features: np.ndarray
    query_labels: np.ndarray

    @property
    def eliminated_ids(self) -> tuple[int, ...]:
        return self.support_ids


def sample_episode(base: Dataset, cfg: EpisodeConfig, rng: RngState) -> Episode:
    """Uniformly pick N classes, K shots each, and a query batch from the rest.

    Classes and shots are drawn without replacement; the query batch is drawn
    without replacement from all base samples minus the chosen support
    samples, so queries cover every base class, not just the selected N.
    """
    class_ids = list(base.class_ids)
    if len(class_ids) < cfg.n_way:
        raise DataError(f"need {cfg.n_way} classes, base set has {len(class_ids)}")
    chosen = [class_ids[i] for i in rng.sample(len(class_ids), cfg.n_way)]

    support_rows: list[np.ndarray] = []
    support_set: set[int] = set()
    for c in chosen:
        idx = base.samples_of(c)
        if len(idx) < cfg.k_shot:
            raise DataError(f"class {c} has {len(idx)} samples, needs {cfg.k_shot} shots")
        picks = sorted(rng.sample(len(idx), cfg.k_shot))
        rows = [int(idx[j]) for j in picks]
        support_set.update(rows)
        support_rows.append(base.features[rows])
    support = np.stack(support_rows, axis=0)

    pool = [i for i in range(len(base)) if i not in support_set]
    if len(pool) < cfg.query_batch:
        raise DataError(
            f"query pool has {len(pool)} samples, needs {cfg.query_batch}"
        )
    q = [pool[i] for i in rng.sample(len(pool), cfg.query_batch)]
    return Episode(
        support_features=support,
        support_ids=tuple(int(c) for c in chosen),
        query_features=base.features[q].copy(),
        query_labels=base.labels[q].copy(),
    )


def class_mean_embeddings(support_embeddings: Tensor) -> Tensor:
    """Average the K shot embeddings of each class: [N, K, d] -> [N, d].

    Shot order within a class does not affect the result, bitwise (the
    summation is canonicalized); the gradient is uniform 1/K.
    """
    if support_embeddings.ndim != 3:
        raise ShapeError(
            f"expected [N, K, d] embeddings, got shape {support_embeddings.shape}"
        )
    return numerics.group_mean(support_embeddings)


def eliminate_prototypes(bank: PrototypeBank, ids) -> PrototypeBank:
    """Bank view without the given classes; surviving rows keep their order.

    Differentiable: gradients on the surviving rows flow back into the full
    prototype matrix.
    """
    drop = {int(c) for c in ids}
    unknown = drop.difference(bank.class_ids)
    if unknown:
        raise DataError(f"cannot eliminate unknown class ids {sorted(unknown)}")
    if len(drop) >= bank.num_classes:
        raise DataError("cannot eliminate every class in the bank")
    keep = [i for i, c in enumerate(bank.class_ids) if c not in drop]
    return PrototypeBank(
        prototypes=numerics.take_rows(bank.prototypes, keep),
        class_ids=tuple(bank.class_ids[i] for i in keep),
        scale=bank.scale,
    )
