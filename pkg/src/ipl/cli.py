"""Batch command-line interface: run, ablate, report.

Exit codes: 0 success, 1 usage/config error, 2 data/format error, 3 internal
numeric error.  IPL_LOG={quiet,info,debug} controls log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .checkpoint import save_model
from .config import ExperimentConfig, load_experiment_config
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    NumericError,
    ParameterError,
    ShapeError,
    StateError,
)
from .metrics import load_report_dict, write_report_csv, write_report_json
from .model import ModelParams, init_params
from .pipeline import run_repeated, train_session1
from .rng import RngState

# Increment-update grid: the three update rules crossed with episodic
# training, plus the zero/random/mean baselines on the episodic model.
ABLATION_VARIANTS: list[tuple[str, dict]] = [
    ("finetune", {"episodic": False, "refine": False, "finetune": True}),
    ("refine", {"episodic": False, "refine": True, "finetune": False}),
    ("refine+finetune", {"episodic": False, "refine": True, "finetune": True}),
    ("episodic+finetune", {"episodic": True, "refine": False, "finetune": True}),
    ("episodic+refine", {"episodic": True, "refine": True, "finetune": False}),
    ("episodic+refine+finetune", {"episodic": True, "refine": True, "finetune": True}),
    ("zero-init", {"episodic": True, "refine": False, "finetune": False, "alt_update_mode": "zero"}),
    ("random-init", {"episodic": True, "refine": False, "finetune": False, "alt_update_mode": "random"}),
    ("mean-init", {"episodic": True, "refine": False, "finetune": False, "alt_update_mode": "mean"}),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse exits with status 2 by default; usage errors are code 1 here.
        raise ConfigError(message)


def _setup_logging() -> None:
    level_name = os.environ.get("IPL_LOG", "quiet")
    levels = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise ConfigError(f"IPL_LOG must be one of {sorted(levels)}, got {level_name!r}")
    logging.basicConfig(level=levels[level_name], format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ipl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, blurb in (
        ("run", "train, run every session, and write report.json/report.csv/checkpoint.bin"),
        ("ablate", "run the update-rule grid and write ablation.csv"),
    ):
        p = sub.add_parser(name, help=blurb)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--trials", type=int, default=None, help="override the trial count")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override any config key (repeatable)",
        )
    p = sub.add_parser("report", help="print a session table from a report.json")
    p.add_argument("report_path", help="path to a report.json")
    return parser


def _collect_overrides(args) -> list[tuple[str, str]]:
    overrides: list[tuple[str, str]] = []
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set needs KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides.append((key.strip(), value))
    if args.seed is not None:
        overrides.append(("seed", str(args.seed)))
    if args.out is not None:
        overrides.append(("out", args.out))
    if args.trials is not None:
        overrides.append(("trials", str(args.trials)))
    return overrides


def _init_model(cfg: ExperimentConfig, schedule) -> ModelParams:
    model_cfg = cfg.model_config(base_class_ids=schedule.base_train.class_ids)
    return init_params(model_cfg, RngState(cfg["seed"]).derive("init"))


def cmd_run(cfg: ExperimentConfig) -> int:
    dataset = cfg.load_dataset()
    schedule = cfg.build_schedule(dataset)
    params = _init_model(cfg, schedule)
    report = run_repeated(schedule, params, cfg.train_config(), cfg["trials"])
    report.config_echo = cfg.echo()

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_json(report, out_dir / "report.json")
    write_report_csv(report, out_dir / "report.csv")
    save_model(out_dir / "checkpoint.bin", params)

    for i, acc in enumerate(report.per_session_accuracy):
        print(f"session {i + 1}: accuracy {acc:.4f} (std {report.per_session_std[i]:.4f})")
    print(f"average: {report.average_accuracy:.4f}")
    print(f"wrote {out_dir / 'report.json'}, {out_dir / 'report.csv'}, {out_dir / 'checkpoint.bin'}")
    return 0


def cmd_ablate(cfg: ExperimentConfig) -> int:
    dataset = cfg.load_dataset()
    schedule = cfg.build_schedule(dataset)
    trials = cfg["trials"]

    # Session-1 training only depends on the episodic flag (the update rules
    # differ later), and training is deterministic in the seed, so each
    # training mode is trained once and cloned per variant.
    trained: dict[bool, ModelParams] = {}
    lines = ["variant,session,num_classes,accuracy,average"]
    averages: dict[str, float] = {}
    for name, flags in ABLATION_VARIANTS:
        vcfg = ExperimentConfig({**cfg.values, **flags})
        tcfg = vcfg.train_config()
        if tcfg.episodic_enabled not in trained:
            params = _init_model(vcfg, schedule)
            train_session1(schedule.base_train, params, tcfg)
            trained[tcfg.episodic_enabled] = params
        report = run_repeated(
            schedule, trained[tcfg.episodic_enabled].clone(), tcfg, trials, pretrained=True
        )
        averages[name] = report.average_accuracy
        for s in range(report.num_sessions):
            lines.append(
                f"{name},{s + 1},{len(report.confusion_labels[s])},"
                f"{report.per_session_accuracy[s]!r},{report.average_accuracy!r}"
            )
        print(f"{name}: average {report.average_accuracy:.4f}")

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out_dir / 'ablation.csv'}")
    return 0


def cmd_report(report_path) -> int:
    doc = load_report_dict(report_path)
    accs = doc["accuracies"]
    print(f"{'session':>8} {'classes':>8} {'accuracy':>9} {'delta':>8}")
    prev = None
    for i, acc in enumerate(accs):
        classes = len(doc["confusion_labels"][i]) if doc.get("confusion_labels") else "-"
        delta = "" if prev is None else f"{acc - prev:+.4f}"
        print(f"{i + 1:>8} {classes:>8} {acc:>9.4f} {delta:>8}")
        prev = acc
    print(f"average: {doc['average']:.4f}")

    dat_path = Path(report_path).with_name("accuracy.dat")
    dat_lines = [f"{i + 1} {acc!r}" for i, acc in enumerate(accs)]
    dat_path.write_text("\n".join(dat_lines) + "\n", encoding="utf-8")
    print(f"wrote {dat_path}")
    return 0


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        if args.command == "report":
            return cmd_report(args.report_path)
        cfg = load_experiment_config(args.config, _collect_overrides(args))
        if args.command == "run":
            return cmd_run(cfg)
        return cmd_ablate(cfg)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, ShapeError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
