"""Experiment configuration: flat key=value files plus command-line overrides.

The file format is one `key = value` per line, `#` starts a comment, blank
lines are ignored.  Every key must be in the registry below; unknown keys are
an error so typos cannot silently fall back to defaults.  Command-line
overrides win over the file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .data import Dataset, SessionSchedule, build_schedule, generate_gaussian_mixture, load_csv
from .episodes import EpisodeConfig
from .errors import ConfigError
from .model import ModelConfig
from .pipeline import ALT_UPDATE_MODES, TrainConfig
from .refinement import REFINE_MODES, RefinementConfig
from .rng import RngState


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(part) for part in text.split(","))


@dataclass(frozen=True)
class _Field:
    parse: Callable[[str], Any]
    default: Any
    help: str


# key -> (parser, default, description); the single source of truth for keys.
REGISTRY: dict[str, _Field] = {
    "seed": _Field(int, 12345, "master seed for every random draw"),
    "trials": _Field(int, 5, "number of incremental-sampling repetitions"),
    "out": _Field(str, "out", "output directory for reports and checkpoints"),
    # dataset
    "dataset_source": _Field(str, "generate", "generate | csv"),
    "csv_path": _Field(str, "", "feature CSV path when dataset_source=csv"),
    "num_classes": _Field(int, 20, "generated classes"),
    "input_dim": _Field(int, 32, "feature dimensionality"),
    "samples_per_class": _Field(int, 70, "generated samples per class"),
    "separation": _Field(float, 14.0, "radius of the class-mean sphere"),
    "noise_sigma": _Field(float, 1.0, "within-class standard deviation"),
    # schedule
    "base_classes": _Field(int, 12, "classes in session 1"),
    "increment_sessions": _Field(int, 4, "number of incremental sessions"),
    "ways": _Field(int, 2, "new classes per incremental session"),
    "shots": _Field(int, 5, "training samples per incremental class"),
    "test_fraction": _Field(float, 2.0 / 7.0, "per-class fraction held out for test"),
    # model
    "hidden_dims": _Field(_parse_int_list, (64, 64), "backbone hidden widths"),
    "embed_dim": _Field(int, 32, "embedding dimensionality"),
    "latent_dim": _Field(int, 32, "shared latent dimensionality for refinement"),
    "scale_init": _Field(float, 10.0, "initial cosine scale factor"),
    "scale_learnable": _Field(_parse_bool, True, "optimize the scale factor"),
    # training
    "epochs": _Field(int, 30, "standard-phase epochs"),
    "episodic_epochs": _Field(int, 240, "episodic-phase epochs (when episodic=true)"),
    "batch_size": _Field(int, 128, "mini-batch size"),
    "lr": _Field(float, 0.02, "learning rate"),
    "weight_decay": _Field(float, 0.0005, "L2 attenuation"),
    "episodic": _Field(_parse_bool, True, "train with simulated increments"),
    "refine": _Field(_parse_bool, True, "grow the bank by prototype refinement"),
    "finetune": _Field(_parse_bool, False, "fine-tune at increments"),
    "finetune_steps": _Field(int, 300, "SGD steps per fine-tuned increment"),
    "finetune_lr": _Field(float, 0.2, "fine-tune learning rate"),
    "finetune_backbone": _Field(_parse_bool, True, "also fine-tune the backbone"),
    "alt_update_mode": _Field(str, "mean", "zero | random | mean (when refine and finetune are off)"),
    # episodes
    "n_way": _Field(int, 2, "classes per simulated increment"),
    "k_shot": _Field(int, 5, "support shots per class"),
    "query_batch": _Field(int, 128, "query samples per episode"),
    "updates_per_episode": _Field(int, 1, "sequential refinement groups per episode"),
    # refinement
    "refine_mode": _Field(str, "softmax", "raw | softmax"),
    "refine_temperature": _Field(float, 0.2, "softmax divisor in softmax mode"),
    "use_projection_heads": _Field(_parse_bool, False, "project into the latent space"),
}


@dataclass
class ExperimentConfig:
    values: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def echo(self) -> dict[str, Any]:
        """JSON-ready snapshot of every key (lists become plain lists)."""
        out = {}
        for key in sorted(self.values):
            v = self.values[key]
            out[key] = list(v) if isinstance(v, tuple) else v
        return out

    # --- assembly into the typed configs -------------------------------------

    def model_config(self, base_class_ids=None) -> ModelConfig:
        return ModelConfig(
            input_dim=self["input_dim"],
            embed_dim=self["embed_dim"],
            num_base_classes=self["base_classes"],
            hidden_dims=tuple(self["hidden_dims"]),
            latent_dim=self["latent_dim"],
            base_class_ids=None if base_class_ids is None else tuple(base_class_ids),
            scale_init=self["scale_init"],
            scale_learnable=self["scale_learnable"],
        )

    def train_config(self) -> TrainConfig:
        if self["refine_mode"] not in REFINE_MODES:
            raise ConfigError(f"refine_mode must be one of {REFINE_MODES}")
        if self["alt_update_mode"] not in ALT_UPDATE_MODES:
            raise ConfigError(f"alt_update_mode must be one of {ALT_UPDATE_MODES}")
        return TrainConfig(
            epochs=self["epochs"],
            episodic_epochs=self["episodic_epochs"],
            batch_size=self["batch_size"],
            lr=self["lr"],
            weight_decay=self["weight_decay"],
            seed=self["seed"],
            episode_cfg=EpisodeConfig(
                n_way=self["n_way"],
                k_shot=self["k_shot"],
                query_batch=self["query_batch"],
                updates_per_episode=self["updates_per_episode"],
            ),
            refinement_cfg=RefinementConfig(
                mode=self["refine_mode"],
                temperature=self["refine_temperature"],
                use_projection_heads=self["use_projection_heads"],
            ),
            episodic_enabled=self["episodic"],
            refine_enabled=self["refine"],
            finetune_enabled=self["finetune"],
            finetune_steps=self["finetune_steps"],
            finetune_lr=self["finetune_lr"],
            finetune_backbone=self["finetune_backbone"],
            alt_update_mode=self["alt_update_mode"],
        )

    def load_dataset(self) -> Dataset:
        source = self["dataset_source"]
        if source == "generate":
            rng = RngState(self["seed"]).derive("dataset")
            return generate_gaussian_mixture(
                num_classes=self["num_classes"],
                dim=self["input_dim"],
                samples_per_class=self["samples_per_class"],
                separation=self["separation"],
                noise_sigma=self["noise_sigma"],
                rng=rng,
            )
        if source == "csv":
            if not self["csv_path"]:
                raise ConfigError("dataset_source=csv requires csv_path")
            dataset = load_csv(self["csv_path"])
            if dataset.dim != self["input_dim"]:
                raise ConfigError(
                    f"csv feature dim {dataset.dim} does not match input_dim "
                    f"{self['input_dim']}"
                )
            return dataset
        raise ConfigError(f"dataset_source must be generate or csv, got {source!r}")

    def build_schedule(self, dataset: Dataset) -> SessionSchedule:
        return build_schedule(
            dataset,
            base_class_count=self["base_classes"],
            ways_per_session=self["ways"],
            shots=self["shots"],
            num_increment_sessions=self["increment_sessions"],
            test_fraction=self["test_fraction"],
            rng=RngState(self["seed"]).derive("schedule"),
        )


def _parse_value(key: str, raw: str) -> Any:
    if key not in REGISTRY:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return REGISTRY[key].parse(raw.strip())
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc


def parse_config_file(path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = _parse_value(key.strip(), value)
    return values


def load_experiment_config(
    config_path=None, overrides: list[tuple[str, str]] | None = None
) -> ExperimentConfig:
    """Defaults, then the file, then overrides (last occurrence wins)."""
    values = {key: f.default for key, f in REGISTRY.items()}
    if config_path is not None:
        values.update(parse_config_file(config_path))
    for key, raw in overrides or []:
        values[key] = _parse_value(key, raw)
    return ExperimentConfig(values)
