"""Training loops, the session runner, and the ablation baselines.

Session 1 trains the representation: a standard phase (mini-batch SGD on
scaled-cosine cross-entropy) and, when enabled, an episodic phase where each
iteration samples a simulated increment, eliminates the selected prototypes,
rebuilds them by refinement, and optimizes the query loss through the whole
chain.  Later sessions grow the prototype bank without gradient steps
(refinement), by fine-tuning, or with the zero/random/mean baselines, and
are scored on cumulative test sets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .data import Dataset, Increment, SessionSchedule, downsample_shots
from .episodes import (
    Episode,
    EpisodeConfig,
    class_mean_embeddings,
    eliminate_prototypes,
    sample_episode,
)
from .errors import ConfigError, DataError, ParameterError
from .metrics import MetricsReport, accuracy_and_confusion
from .model import (
    BackboneParams,
    ModelParams,
    PrototypeBank,
    classify_cosine,
    extract_features,
)
from .numerics import ComputeGraph, Tensor, backward, sgd_step
from .refinement import RefinementConfig, refine
from .rng import RngState

logger = logging.getLogger("ipl")

ALT_UPDATE_MODES = ("zero", "random", "mean")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    episodic_epochs: int = 240
    batch_size: int = 128
    lr: float = 0.02
    weight_decay: float = 0.0005
    seed: int = 12345
    episode_cfg: EpisodeConfig = field(default_factory=EpisodeConfig)
    refinement_cfg: RefinementConfig = field(default_factory=RefinementConfig)
    episodic_enabled: bool = True
    refine_enabled: bool = True
    finetune_enabled: bool = False
    finetune_steps: int = 300
    finetune_lr: float = 0.2
    finetune_backbone: bool = True
    alt_update_mode: str = "mean"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.episodic_epochs < 0:
            raise ConfigError(f"episodic_epochs must be >= 0, got {self.episodic_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0.0 or self.weight_decay < 0.0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if self.finetune_steps < 1:
            raise ConfigError(f"finetune_steps must be >= 1, got {self.finetune_steps}")
        if self.finetune_lr < 0.0:
            raise ConfigError(f"finetune_lr must be >= 0, got {self.finetune_lr}")
        if self.alt_update_mode not in ALT_UPDATE_MODES:
            raise ConfigError(
                f"alt_update_mode must be one of {ALT_UPDATE_MODES}, "
                f"got {self.alt_update_mode!r}"
            )


def label_rows(bank: PrototypeBank, labels) -> np.ndarray:
    """Map dataset class ids onto bank row indices."""
    try:
        return np.asarray([bank.row_of(int(c)) for c in labels], dtype=np.intp)
    except KeyError as exc:
        raise DataError(f"label {exc} is not covered by the prototype bank") from exc


# --- session-1 training -------------------------------------------------------


def train_base_standard(base: Dataset, params: ModelParams, cfg: TrainConfig) -> ModelParams:
    """Plain mini-batch SGD on cross-entropy over scaled-cosine logits."""
    if len(base) == 0:
        raise DataError("base training set is empty")
    backbone, bank, _ = params
    rows = label_rows(bank, base.labels)
    rng = RngState(cfg.seed).derive("standard-phase")
    batch = min(cfg.batch_size, len(base))
    trainables = params.trainable(include_heads=False)
    for epoch in range(cfg.epochs):
        order = list(range(len(base)))
        rng.shuffle(order)
        epoch_loss = 0.0
        steps = 0
        for start in range(0, len(order), batch):
            idx = order[start : start + batch]
            with ComputeGraph() as graph:
                feats = extract_features(Tensor(base.features[idx]), backbone)
                logits = classify_cosine(feats, bank)
                loss = numerics.cross_entropy(logits, rows[idx])
                backward(loss, graph)
            epoch_loss += loss.item()
            steps += 1
            sgd_step(trainables, cfg.lr, cfg.weight_decay)
        logger.debug("standard epoch %d/%d loss %.4f", epoch + 1, cfg.epochs, epoch_loss / steps)
    return params


def train_episode_step(
    episode: Episode, params: ModelParams, cfg: TrainConfig
) -> tuple[float, ModelParams]:
    """One SGD step through the simulated increment.

    The loss classifies the all-class query batch against a bank whose
    selected prototypes were eliminated and rebuilt by refinement from the
    support class means, so gradients reach the backbone through both the
    query branch and the support branch, and reach the prototypes through
    the surviving rows.
    """
    backbone, bank, heads = params
    rcfg = cfg.refinement_cfg
    n, k, _ = episode.support_features.shape
    with ComputeGraph() as graph:
        flat = Tensor(episode.support_features.reshape(n * k, -1))
        s_emb = extract_features(flat, backbone)
        r_s = class_mean_embeddings(numerics.reshape(s_emb, (n, k, backbone.embed_dim)))
        work = eliminate_prototypes(bank, episode.eliminated_ids)
        group = n // cfg.episode_cfg.updates_per_episode
        for g in range(cfg.episode_cfg.updates_per_episode):
            sel = list(range(g * group, (g + 1) * group))
            ids = episode.eliminated_ids[g * group : (g + 1) * group]
            work = refine(work, numerics.take_rows(r_s, sel), ids, heads, rcfg)
        q_emb = extract_features(Tensor(episode.query_features), backbone)
        logits = classify_cosine(q_emb, work)
        loss = numerics.cross_entropy(logits, label_rows(work, episode.query_labels))
        backward(loss, graph)
    value = loss.item()
    sgd_step(
        params.trainable(include_heads=rcfg.use_projection_heads),
        cfg.lr,
        cfg.weight_decay,
    )
    return value, params


def train_incremental_representation(
    base: Dataset, params: ModelParams, cfg: TrainConfig
) -> ModelParams:
    """Standard phase followed by the episodic phase (one episode per iteration)."""
    if not cfg.episodic_enabled:
        raise ConfigError("episodic training is disabled in this config")
    train_base_standard(base, params, cfg)
    rng = RngState(cfg.seed).derive("episodic-phase")
    batch = min(cfg.batch_size, len(base))
    iterations = max(1, len(base) // batch)
    for epoch in range(cfg.episodic_epochs):
        epoch_loss = 0.0
        for _ in range(iterations):
            episode = sample_episode(base, cfg.episode_cfg, rng)
            value, _ = train_episode_step(episode, params, cfg)
            epoch_loss += value
        logger.debug(
            "episodic epoch %d/%d loss %.4f",
            epoch + 1,
            cfg.episodic_epochs,
            epoch_loss / iterations,
        )
    return params


def train_session1(base: Dataset, params: ModelParams, cfg: TrainConfig) -> ModelParams:
    if cfg.episodic_enabled:
        return train_incremental_representation(base, params, cfg)
    return train_base_standard(base, params, cfg)


# --- evaluation ---------------------------------------------------------------


def predict_ids(backbone: BackboneParams, bank: PrototypeBank, features: np.ndarray) -> np.ndarray:
    """Argmax over cosine logits; ties break toward the lowest class id."""
    emb = extract_features(Tensor(features), backbone)
    order = np.argsort(np.asarray(bank.class_ids), kind="stable")
    ids_sorted = np.asarray(bank.class_ids)[order]
    logits = classify_cosine(emb, bank).data[:, order]
    return ids_sorted[np.argmax(logits, axis=1)]


def evaluate(
    backbone: BackboneParams, bank: PrototypeBank, dataset: Dataset
) -> tuple[float, np.ndarray, tuple[int, ...]]:
    """(accuracy, confusion matrix, ascending class ids) on a test set."""
    ids_sorted = tuple(sorted(bank.class_ids))
    preds = predict_ids(backbone, bank, dataset.features)
    acc, conf = accuracy_and_confusion(dataset.labels, preds, ids_sorted)
    return acc, conf, ids_sorted


def class_means(backbone: BackboneParams, dataset: Dataset) -> tuple[np.ndarray, list[int]]:
    """Per-class mean embeddings (ascending class id), computed without gradients."""
    if len(dataset) == 0:
        raise DataError("cannot compute class means of an empty dataset")
    means = []
    ids = []
    for c in dataset.class_ids:
        idx = dataset.samples_of(c)
        emb = extract_features(Tensor(dataset.features[idx]), backbone)
        mean = class_mean_embeddings(
            numerics.reshape(emb, (1, len(idx), backbone.embed_dim))
        )
        means.append(mean.data[0])
        ids.append(int(c))
    return np.stack(means, axis=0), ids


# --- incremental-session updates ----------------------------------------------


def absorb_session(
    bank: PrototypeBank,
    backbone: BackboneParams,
    heads,
    few_shot: Dataset,
    cfg: TrainConfig,
) -> PrototypeBank:
    """Grow the bank by refinement from the few-shot class means.

    Pure forward computation (no gradient steps) unless fine-tuning is also
    enabled, in which case the fine-tune steps run on the refined bank.
    """
    if len(few_shot) == 0:
        raise DataError("cannot absorb an empty increment")
    means, ids = class_means(backbone, few_shot)
    new_bank = refine(bank, Tensor(means), ids, heads, cfg.refinement_cfg)
    # Store unit rows: the cosine metric ignores prototype norms, but leaving
    # the raw combination weights in place lets norm differences compound and
    # skew every later session's refinement toward the large rows.
    normalized = numerics.l2_normalize(new_bank.prototypes)
    new_bank = PrototypeBank(Tensor(normalized.data.copy()), new_bank.class_ids, new_bank.scale)
    if cfg.finetune_enabled:
        new_bank, _ = _finetune_optimize(new_bank, backbone, few_shot, cfg)
    return new_bank


def alt_update(
    bank: PrototypeBank,
    new_embeddings,
    new_ids,
    mode: str,
    rng: RngState | None = None,
) -> PrototypeBank:
    """Baseline bank growth: old rows unchanged, new rows zero/random/mean."""
    if mode not in ALT_UPDATE_MODES:
        raise ConfigError(f"unknown update mode {mode!r}")
    ids = tuple(int(c) for c in new_ids)
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate new class ids {ids}")
    overlap = set(ids).intersection(bank.class_ids)
    if overlap:
        raise DataError(f"new class ids already present: {sorted(overlap)}")
    values = new_embeddings.data if isinstance(new_embeddings, Tensor) else np.asarray(new_embeddings)
    if values.shape != (len(ids), bank.embed_dim):
        raise DataError(
            f"embeddings shape {values.shape} does not match "
            f"({len(ids)}, {bank.embed_dim})"
        )
    if mode == "zero":
        rows = np.zeros_like(values)
    elif mode == "random":
        if rng is None:
            raise ParameterError("random mode needs an RngState")
        rows = rng.normal_array(values.shape)
    else:
        rows = values.copy()
    protos = np.concatenate([rows, bank.prototypes.data], axis=0)
    return PrototypeBank(Tensor(protos), ids + bank.class_ids, bank.scale)


def _finetune_optimize(
    bank: PrototypeBank, backbone: BackboneParams, few_shot: Dataset, cfg: TrainConfig
) -> tuple[PrototypeBank, BackboneParams]:
    """Full-batch SGD on the few-shot samples over all prototypes (and the
    backbone when configured); the overfitting baseline's core loop."""
    protos = Tensor(bank.prototypes.data.copy(), requires_grad=True)
    scale = Tensor(bank.scale.data.copy())
    ft_bank = PrototypeBank(protos, bank.class_ids, scale)
    rows = label_rows(ft_bank, few_shot.labels)
    train_params = [protos]
    frozen: list[Tensor] = []
    if cfg.finetune_backbone:
        train_params.extend(backbone.tensors())
    else:
        for t in backbone.tensors():
            if t.requires_grad:
                t.requires_grad = False
                frozen.append(t)
    try:
        for _ in range(cfg.finetune_steps):
            with ComputeGraph() as graph:
                feats = extract_features(Tensor(few_shot.features), backbone)
                logits = classify_cosine(feats, ft_bank)
                loss = numerics.cross_entropy(logits, rows)
                backward(loss, graph)
            sgd_step(train_params, cfg.finetune_lr, 0.0)
    finally:
        for t in frozen:
            t.requires_grad = True
    return ft_bank, backbone


def finetune_baseline(
    bank: PrototypeBank, backbone: BackboneParams, few_shot: Dataset, cfg: TrainConfig
) -> tuple[PrototypeBank, BackboneParams]:
    """Initialize new prototypes to class means, then fine-tune on the shots only."""
    if len(few_shot) == 0:
        raise DataError("cannot fine-tune on an empty increment")
    means, ids = class_means(backbone, few_shot)
    grown = alt_update(bank, means, ids, "mean")
    return _finetune_optimize(grown, backbone, few_shot, cfg)


# --- session runner -------------------------------------------------------------


@dataclass
class _TrialOutcome:
    accuracies: list[float]
    confusion: list[np.ndarray]
    labels: list[tuple[int, ...]]
    proto_similarity: list[float]


def _prototype_similarity(
    pre_ids: tuple[int, ...], pre_values: np.ndarray, post: PrototypeBank
) -> list[float]:
    sims = []
    for i, c in enumerate(pre_ids):
        a = pre_values[i]
        b = post.prototypes.data[post.row_of(c)]
        denom = max(float(np.linalg.norm(a)) * float(np.linalg.norm(b)), 1e-12)
        sims.append(float(np.dot(a, b) / denom))
    return sims


def _run_increments(
    schedule: SessionSchedule, params: ModelParams, cfg: TrainConfig, trial_seed: int
) -> _TrialOutcome:
    backbone, bank, heads = params
    out = _TrialOutcome([], [], [], [])
    acc, conf, ids = evaluate(backbone, bank, schedule.cumulative_test(1))
    out.accuracies.append(acc)
    out.confusion.append(conf)
    out.labels.append(ids)
    for t, inc in enumerate(schedule.increments):
        if cfg.refine_enabled:
            pre_ids, pre_values = bank.class_ids, bank.prototypes.data.copy()
            bank = absorb_session(bank, backbone, heads, inc.train, cfg)
            if t == 0:
                out.proto_similarity = _prototype_similarity(pre_ids, pre_values, bank)
        elif cfg.finetune_enabled:
            bank, backbone = finetune_baseline(bank, backbone, inc.train, cfg)
        else:
            means, new_ids = class_means(backbone, inc.train)
            alt_rng = RngState(trial_seed).derive("alt-update", t)
            bank = alt_update(bank, means, new_ids, cfg.alt_update_mode, alt_rng)
        acc, conf, ids = evaluate(backbone, bank, schedule.cumulative_test(t + 2))
        out.accuracies.append(acc)
        out.confusion.append(conf)
        out.labels.append(ids)
        logger.info("session %d: %d classes, accuracy %.4f", t + 2, len(ids), acc)
    params.bank = bank
    params.backbone = backbone
    return out


def _resample_schedule(schedule: SessionSchedule, rng: RngState) -> SessionSchedule:
    increments = []
    for inc in schedule.increments:
        if inc.pool is None:
            increments.append(inc)
        else:
            increments.append(
                Increment(
                    train=downsample_shots(inc.pool, schedule.shots, rng),
                    test=inc.test,
                    pool=inc.pool,
                )
            )
    return SessionSchedule(schedule.base_train, schedule.base_test, increments, schedule.shots)


def run_repeated(
    schedule: SessionSchedule,
    params: ModelParams,
    cfg: TrainConfig,
    trials: int,
    *,
    pretrained: bool = False,
) -> MetricsReport:
    """Train session 1 once, then repeat the incremental sessions `trials`
    times with independently re-selected shots; report mean and std per session.

    `pretrained=True` skips session-1 training and uses `params` as the shared
    base model (training is deterministic, so this is equivalent to retraining
    with the same seed)."""
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    schedule.validate()
    if not pretrained:
        train_session1(schedule.base_train, params, cfg)
    base = RngState(cfg.seed)

    outcomes: list[_TrialOutcome] = []
    seeds: list[int] = []
    final_state: ModelParams | None = None
    for t in range(trials):
        trial_seed = cfg.seed if t == 0 else base.derive("trial", t).seed
        sched_t = (
            schedule if t == 0 else _resample_schedule(schedule, base.derive("shot-resample", t))
        )
        trial_params = params.clone()
        outcomes.append(_run_increments(sched_t, trial_params, cfg, trial_seed))
        seeds.append(trial_seed)
        if t == 0:
            final_state = trial_params
    assert final_state is not None
    params.backbone = final_state.backbone
    params.bank = final_state.bank
    params.heads = final_state.heads

    accs = np.asarray([o.accuracies for o in outcomes])  # [trials, sessions]
    mean_acc = [float(a) for a in accs.mean(axis=0)]
    std_acc = [float(s) for s in accs.std(axis=0)]
    confusion = [
        np.sum([o.confusion[s] for o in outcomes], axis=0)
        for s in range(schedule.num_sessions)
    ]
    sims = outcomes[0].proto_similarity
    return MetricsReport(
        per_session_accuracy=mean_acc,
        average_accuracy=float(np.mean(mean_acc)),
        confusion=confusion,
        confusion_labels=outcomes[0].labels,
        prototype_similarity=sims,
        prototype_similarity_mean=float(np.mean(sims)) if sims else None,
        seeds_used=seeds,
        per_session_std=std_acc,
        trials=trials,
    )


def run_sessions(
    schedule: SessionSchedule, params: ModelParams, cfg: TrainConfig
) -> MetricsReport:
    """Train session 1, absorb each increment per the configured update rule,
    and score every session on its cumulative test set."""
    return run_repeated(schedule, params, cfg, trials=1)
