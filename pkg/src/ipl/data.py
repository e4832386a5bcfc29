"""Datasets, synthetic feature generation, CSV I/O, and session scheduling.

Everything operates on feature vectors; there is no image pipeline.  The
session schedule splits a dataset's classes into a base block plus disjoint
incremental blocks, with per-class train/test splits and exactly-K-shot
incremental training sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .rng import RngState


@dataclass
class Dataset:
    """Immutable feature matrix with integer class labels and a per-class index."""

    features: np.ndarray
    labels: np.ndarray

    class_index: dict[int, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DataError(f"features must be [samples, dim], got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError("labels must align with feature rows")
        index: dict[int, list[int]] = {}
        for i, lab in enumerate(self.labels):
            index.setdefault(int(lab), []).append(i)
        self.class_index = {c: np.asarray(idx, dtype=np.intp) for c, idx in sorted(index.items())}

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(self.class_index)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.features[idx].copy(), self.labels[idx].copy())

    def samples_of(self, class_id: int) -> np.ndarray:
        if class_id not in self.class_index:
            raise DataError(f"unknown class id {class_id}")
        return self.class_index[class_id]


def concat_datasets(parts: list[Dataset]) -> Dataset:
    if not parts:
        raise DataError("cannot concatenate zero datasets")
    return Dataset(
        np.concatenate([p.features for p in parts], axis=0),
        np.concatenate([p.labels for p in parts], axis=0),
    )


def generate_gaussian_mixture(
    num_classes: int,
    dim: int,
    samples_per_class: int,
    separation: float,
    noise_sigma: float,
    rng: RngState,
) -> Dataset:
    """Isotropic Gaussian classes whose means sit on a sphere of radius `separation`."""
    if num_classes < 1 or dim < 1 or samples_per_class < 1:
        raise DataError("num_classes, dim, and samples_per_class must be positive")
    if separation <= 0.0 or noise_sigma <= 0.0:
        raise DataError("separation and noise_sigma must be positive")
    features = np.empty((num_classes * samples_per_class, dim))
    labels = np.empty(num_classes * samples_per_class, dtype=np.int64)
    for c in range(num_classes):
        direction = rng.normal_array((dim,))
        norm = float(np.linalg.norm(direction))
        if norm == 0.0:  # astronomically unlikely; resample deterministically
            direction[0] = 1.0
            norm = 1.0
        mean = direction * (separation / norm)
        block = slice(c * samples_per_class, (c + 1) * samples_per_class)
        features[block] = mean + noise_sigma * rng.normal_array((samples_per_class, dim))
        labels[block] = c
    return Dataset(features, labels)


# --- CSV ---------------------------------------------------------------------

_CSV_HEADER_HINT = "label"


def save_csv(dataset: Dataset, path) -> None:
    """Rows of `label,f1,...,fd`; floats printed with full round-trip precision."""
    lines = [",".join(["label"] + [f"f{j + 1}" for j in range(dataset.dim)])]
    for i in range(len(dataset)):
        values = ",".join(repr(float(v)) for v in dataset.features[i])
        lines.append(f"{int(dataset.labels[i])},{values}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def load_csv(path) -> Dataset:
    """Parse `label,f1,...,fd` rows; a single header line is auto-detected."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    rows: list[tuple[int, list[str]]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            rows.append((lineno, line.split(",")))
    if rows and not _is_number(rows[0][1][0]):
        rows = rows[1:]  # header
    if not rows:
        raise FormatError(f"{path}: no data rows")
    width = len(rows[0][1])
    if width < 2:
        raise FormatError(f"{path}:{rows[0][0]}: rows need a label and at least one feature")
    features = np.empty((len(rows), width - 1))
    labels = np.empty(len(rows), dtype=np.int64)
    for r, (lineno, fields) in enumerate(rows):
        if len(fields) != width:
            raise FormatError(
                f"{path}:{lineno}: expected {width} fields, got {len(fields)}"
            )
        try:
            labels[r] = int(float(fields[0]))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: label {fields[0]!r} is not numeric") from None
        for j, text in enumerate(fields[1:]):
            try:
                features[r, j] = float(text)
            except ValueError:
                raise FormatError(
                    f"{path}:{lineno}: feature {text!r} is not numeric"
                ) from None
    return Dataset(features, labels)


# --- session schedule ---------------------------------------------------------


@dataclass
class Increment:
    """One incremental session: an exactly-K-shot train set, its test set, and
    the full training pool the shots were drawn from (kept for re-trials)."""

    train: Dataset
    test: Dataset
    pool: Dataset | None = None


@dataclass
class SessionSchedule:
    base_train: Dataset
    base_test: Dataset
    increments: list[Increment]
    shots: int

    def __post_init__(self):
        self.validate()

    @property
    def num_sessions(self) -> int:
        return 1 + len(self.increments)

    def session_label_sets(self) -> list[tuple[int, ...]]:
        out = [self.base_train.class_ids]
        out.extend(inc.train.class_ids for inc in self.increments)
        return out

    def cumulative_test(self, session: int) -> Dataset:
        """Test data covering every label set from session 1 through `session` (1-based)."""
        if not 1 <= session <= self.num_sessions:
            raise DataError(f"session {session} out of range 1..{self.num_sessions}")
        parts = [self.base_test] + [inc.test for inc in self.increments[: session - 1]]
        return concat_datasets(parts)

    def validate(self) -> None:
        if self.shots < 1:
            raise DataError(f"shots must be >= 1, got {self.shots}")
        label_sets = self.session_label_sets()
        seen: set[int] = set()
        for i, ids in enumerate(label_sets):
            overlap = seen.intersection(ids)
            if overlap:
                raise DataError(f"session {i + 1} label set overlaps earlier sessions: {sorted(overlap)}")
            seen.update(ids)
        if set(self.base_test.class_ids) != set(self.base_train.class_ids):
            raise DataError("base test labels must match base train labels")
        for i, inc in enumerate(self.increments):
            if set(inc.test.class_ids) != set(inc.train.class_ids):
                raise DataError(f"increment {i + 1} test labels must match its train labels")
            for c in inc.train.class_ids:
                count = len(inc.train.samples_of(c))
                if count != self.shots:
                    raise DataError(
                        f"incremental class {c} has {count} train samples, expected {self.shots}"
                    )


def downsample_shots(pool: Dataset, shots: int, rng: RngState) -> Dataset:
    """Per class (ascending id), keep exactly `shots` uniformly chosen samples."""
    keep: list[int] = []
    for c in pool.class_ids:
        idx = pool.samples_of(c)
        if len(idx) < shots:
            raise DataError(f"class {c} has only {len(idx)} samples, needs {shots}")
        chosen = rng.sample(len(idx), shots)
        keep.extend(int(idx[j]) for j in sorted(chosen))
    return pool.subset(keep)


def build_schedule(
    dataset: Dataset,
    base_class_count: int,
    ways_per_session: int,
    shots: int,
    num_increment_sessions: int,
    test_fraction: float,
    rng: RngState,
) -> SessionSchedule:
    """Shuffle classes, block them into base + increments, split train/test per class.

    Draw order: one shuffle of the class list, then one per-class index shuffle
    (ascending class id) for the train/test split, then one shot selection per
    incremental class.  Everything is reproducible from `rng`.
    """
    classes = list(dataset.class_ids)
    needed = base_class_count + ways_per_session * num_increment_sessions
    if base_class_count < 1 or ways_per_session < 1 or num_increment_sessions < 0:
        raise DataError("base_class_count and ways_per_session must be positive")
    if needed > len(classes):
        raise DataError(
            f"schedule needs {needed} classes but the dataset has {len(classes)}"
        )
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test_fraction must be in (0, 1), got {test_fraction}")

    rng.shuffle(classes)
    blocks = [classes[:base_class_count]]
    for s in range(num_increment_sessions):
        start = base_class_count + s * ways_per_session
        blocks.append(classes[start : start + ways_per_session])

    train_idx: dict[int, np.ndarray] = {}
    test_idx: dict[int, np.ndarray] = {}
    for c in dataset.class_ids:  # ascending id order for deterministic draws
        idx = [int(i) for i in dataset.samples_of(c)]
        rng.shuffle(idx)
        n_test = int(round(test_fraction * len(idx)))
        n_test = min(max(n_test, 1), len(idx) - 1)
        test_idx[c] = np.asarray(sorted(idx[:n_test]), dtype=np.intp)
        train_idx[c] = np.asarray(sorted(idx[n_test:]), dtype=np.intp)

    def gather(ids, table) -> Dataset:
        rows = np.concatenate([table[c] for c in ids])
        return dataset.subset(rows)

    base_train = gather(blocks[0], train_idx)
    base_test = gather(blocks[0], test_idx)

    increments: list[Increment] = []
    for block in blocks[1:]:
        pool = gather(block, train_idx)
        for c in block:
            if len(pool.samples_of(c)) < shots:
                raise DataError(
                    f"class {c} has {len(pool.samples_of(c))} train samples, "
                    f"fewer than {shots} shots"
                )
        train = downsample_shots(pool, shots, rng)
        increments.append(Increment(train=train, test=gather(block, test_idx), pool=pool))

    return SessionSchedule(base_train, base_test, increments, shots)
