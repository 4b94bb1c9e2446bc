#!/usr/bin/env python3
"""
hierbench command line
gen-tree | gen-data | train | attack | bench | validate-tree | inspect-model

Human-readable progress goes to stderr; JSON/CSV goes to files or stdout.
Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .attacks import AttackKind, AttackSpec
from .bench import default_suite, evaluate_attack, load_suite, run_suite, write_csv, write_json, write_report
from .config import Settings, TrainConfig
from .curriculum import CleanConfig, FatConfig, TradesConfig, train_model
from .errors import ConfigInvalid, HierBenchError, ValidationFailure
from .hierarchy import Hierarchy, load_tree, save_tree
from .netcore import load_checkpoint, make_classifier, save_checkpoint
from .synthdata import LongTail, SynthConfig, gen_data, gen_tree, load_dataset, save_dataset, split_dataset

logger = logging.getLogger(__name__)

SCHEDULE_ALIASES = {"exp": "exponential", "exponential": "exponential", "linear": "linear"}


class ArgumentParser(argparse.ArgumentParser):
    """Bad flags are validation errors (exit 1)"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def say(message: str) -> None:
    print(message, file=sys.stderr)


# ------------------------------------------------------------------- parsing

def parse_fraction(text: str) -> float:
    """Decimal or exact rational such as 4/255"""
    try:
        value = Fraction(text.strip())
    except (ValueError, ZeroDivisionError) as e:
        raise argparse.ArgumentTypeError(f"not a number or k/n fraction: {text!r}") from e
    return float(value)


def parse_int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def parse_float_list(text: str) -> List[float]:
    return [parse_fraction(part) for part in text.split(",") if part.strip()]


def _resolve_tree_path(tree: Optional[str], fallback: Optional[str], base: Optional[Path] = None) -> Path:
    chosen = tree or fallback
    if not chosen:
        raise ConfigInvalid("No tree file given (--tree) and none recorded alongside the input")
    path = Path(chosen)
    if not path.exists() and base is not None and (base / path.name).exists():
        path = base / path.name
    return path


def _default_sigma_levels(num_levels: int) -> List[float]:
    return [0.3 / (3 ** k) for k in range(num_levels - 1)]


def _dump(payload: Dict, out: Optional[str]) -> None:
    if out:
        write_json(payload, out)
        say(f"💾 Wrote {out}")
    else:
        json.dump(payload, sys.stdout, indent=2)
        sys.stdout.write("\n")


# ------------------------------------------------------------------ commands

def cmd_gen_tree(args, settings: Settings) -> int:
    hierarchy = gen_tree(args.branching)
    save_tree(hierarchy, args.out)
    say(f"🌳 Tree with level sizes {hierarchy.level_sizes} written to {args.out}")
    return 0


def cmd_gen_data(args, settings: Settings) -> int:
    hierarchy = load_tree(args.tree)
    sigma_levels = args.sigma_levels or _default_sigma_levels(hierarchy.num_levels)
    longtail = None
    if args.longtail:
        alpha, min_samples, *rest = args.longtail
        longtail = LongTail(pareto_alpha=alpha, min_samples=int(min_samples), total_samples=int(rest[0]) if rest else None)
    cfg = SynthConfig(
        dim=args.dim,
        sigma_levels=sigma_levels,
        noise_sigma=args.noise,
        samples_per_leaf=args.samples,
        longtail=longtail,
        seed=args.seed,
    )
    dataset = gen_data(cfg, hierarchy)
    splits = split_dataset(dataset, args.seed)
    save_dataset(splits, args.out_dir, str(args.tree), cfg)
    say(f"📊 {len(dataset)} samples -> train {len(splits.train)}, val {len(splits.val)}, test {len(splits.test)}")
    return 0


def _trainer_config(cfg: TrainConfig):
    if cfg.trainer == "fat":
        return FatConfig(**{"minibatch_size": cfg.batch_size, **cfg.fat})
    if cfg.trainer == "trades":
        return TradesConfig(**{"minibatch_size": cfg.batch_size, **cfg.trades})
    return CleanConfig(minibatch_size=cfg.batch_size)


def cmd_train(args, settings: Settings) -> int:
    base = TrainConfig.load(Path(args.config), settings) if args.config else TrainConfig.from_settings(settings)
    cfg = base.merged({
        "trainer": args.trainer,
        "curriculum": args.curriculum,
        "schedule": SCHEDULE_ALIASES.get(args.schedule) if args.schedule else None,
        "total_iterations": args.iters,
        "seed": args.seed,
        "dataset_path": args.data,
        "tree_path": args.tree,
        "checkpoint_path": args.out,
        "learning_rate": args.lr,
        "batch_size": args.batch_size,
        "hidden_width": args.width,
        "hidden_layers": args.layers,
        "fat": {"replays": args.replays, "epsilon": args.eps, "alpha_train": args.alpha},
        "trades": {"beta": args.beta, "epsilon": args.eps, "inner_alpha": args.alpha, "inner_steps": args.inner_steps},
    })
    cfg.validate()
    if not cfg.dataset_path or not cfg.checkpoint_path:
        raise ConfigInvalid("train needs a dataset (--data) and an output checkpoint (--out)")

    splits, manifest = load_dataset(cfg.dataset_path)
    tree_path = _resolve_tree_path(cfg.tree_path, manifest.get("tree_path"), Path(cfg.dataset_path))
    hierarchy = load_tree(tree_path)
    splits.train.check_labels(hierarchy)

    rng = np.random.default_rng([cfg.seed, 1])
    classifier = make_classifier(splits.train.dim, hierarchy.num_leaves, cfg.hidden_width, cfg.hidden_layers, rng)

    stage_log_path = Path(args.stage_log) if args.stage_log else Path(cfg.checkpoint_path).with_suffix(".stages.jsonl")
    stage_log_path.parent.mkdir(parents=True, exist_ok=True)
    say(f"🏋️ Training {cfg.trainer} / curriculum {cfg.curriculum} for {cfg.total_iterations} iterations")
    with open(stage_log_path, "w", encoding="utf-8") as log_file:
        def on_stage(record):
            log_file.write(json.dumps(record.to_dict()) + "\n")

        classifier, stages = train_model(
            classifier, splits.train, hierarchy, cfg.trainer, _trainer_config(cfg), cfg.total_iterations,
            curriculum=cfg.curriculum, schedule_mode=cfg.schedule, seed=cfg.seed,
            learning_rate=cfg.learning_rate, on_stage=on_stage,
        )
    save_checkpoint(classifier, cfg.checkpoint_path, str(tree_path), 0, {"train_config": cfg.to_dict()})
    say(f"✅ {len(stages)} stage(s); checkpoint {cfg.checkpoint_path}, stage log {stage_log_path}")
    return 0


def _load_eval_inputs(args):
    classifier, meta = load_checkpoint(args.model)
    splits, manifest = load_dataset(args.data)
    tree_path = _resolve_tree_path(args.tree, meta.get("tree_path") or manifest.get("tree_path"), Path(args.data))
    hierarchy = load_tree(tree_path)
    return classifier, splits.get(args.split), hierarchy


def cmd_attack(args, settings: Settings) -> int:
    classifier, dataset, hierarchy = _load_eval_inputs(args)
    spec = AttackSpec(AttackKind(args.attack), args.h, args.eps, args.alpha, args.steps, args.nha_variant)
    record = evaluate_attack(classifier, dataset, hierarchy, spec, args.seed, args.workers or settings.workers)
    say(f"⚔️ {spec.label}: robust accuracy {record.robust_accuracy:.4f}, AM {record.average_mistake:.3f}")
    _dump(record.to_dict(), args.out)
    return 0


def cmd_bench(args, settings: Settings) -> int:
    classifier, dataset, hierarchy = _load_eval_inputs(args)
    if args.suite == "default":
        suite = default_suite(hierarchy.num_levels, args.eps, args.steps, args.alpha)
    else:
        suite = load_suite(args.suite)
    report = run_suite(classifier, dataset, hierarchy, suite, args.seed, args.workers or settings.workers)
    write_report(report, args.out)
    say(f"📈 {len(report.records)} records written to {args.out}")
    if args.csv is not None:
        csv_path = args.csv or str(Path(args.out).with_suffix(".csv"))
        write_csv(report, csv_path)
        say(f"📄 CSV written to {csv_path}")
    summary = report.summary
    say(f"   worst case: robust accuracy {summary.robust_accuracy:.4f}, AM {summary.average_mistake:.3f}")
    return 0


def cmd_validate_tree(args, settings: Settings) -> int:
    hierarchy = load_tree(args.tree)
    report = hierarchy.validation_report()
    say(f"✅ OK level sizes {report['level_sizes']}")
    json.dump(report, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def cmd_inspect_model(args, settings: Settings) -> int:
    classifier, meta = load_checkpoint(args.model)
    info = {
        "input_dim": classifier.input_dim,
        "layers": [
            {"in": int(l.weight.shape[1]), "out": int(l.weight.shape[0]), "activation": l.activation}
            for l in classifier.extractor.layers
        ],
        "feature_dim": classifier.head.m,
        "n_classes": classifier.n_classes,
        "parameters": int(sum(p.size for p in classifier.parameters())),
        "tree_path": meta.get("tree_path"),
        "height": meta.get("height"),
    }
    json.dump(info, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


# ------------------------------------------------------------------- parser

def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="Checkpoint JSON")
    p.add_argument("--data", required=True, help="Dataset directory")
    p.add_argument("--tree", help="Tree file (defaults to the one recorded in the checkpoint)")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--eps", type=parse_fraction, default=parse_fraction("4/255"))
    p.add_argument("--alpha", type=parse_fraction, default=parse_fraction("1/255"))
    p.add_argument("--steps", type=int, default=50)


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(prog="hierbench", description="Hierarchy-aware adversarial attacks and training")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-tree", help="Write a balanced tree file")
    p.add_argument("--branching", type=parse_int_list, required=True, help="Children per node, root first, e.g. 2,2,2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_tree)

    p = sub.add_parser("gen-data", help="Generate a synthetic hierarchical dataset")
    p.add_argument("--tree", required=True)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--sigma-levels", type=parse_float_list, default=None, help="Center offset scale per stratum, coarse first")
    p.add_argument("--noise", type=parse_fraction, default=0.02)
    size = p.add_mutually_exclusive_group()
    size.add_argument("--samples", type=int, default=200, help="Samples per leaf")
    size.add_argument("--longtail", type=parse_float_list, default=None, help="pareto_alpha,min_samples[,total]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="Train a classifier (optionally adversarially, optionally with CHAT)")
    p.add_argument("--config", help="Training config JSON; flags override it")
    p.add_argument("--data")
    p.add_argument("--tree")
    p.add_argument("--trainer", choices=["clean", "fat", "trades"])
    p.add_argument("--curriculum", choices=["none", "chat", "scratch"])
    p.add_argument("--schedule", choices=sorted(SCHEDULE_ALIASES))
    p.add_argument("--iters", type=int)
    p.add_argument("--eps", type=parse_fraction)
    p.add_argument("--alpha", type=parse_fraction)
    p.add_argument("--replays", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--inner-steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--width", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="Checkpoint path")
    p.add_argument("--stage-log", help="Stage log (JSON lines); defaults next to the checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="Run one attack and emit an EvalRecord")
    _add_eval_flags(p)
    p.add_argument("--attack", required=True, choices=[k.value for k in AttackKind])
    p.add_argument("--h", type=int, default=0)
    p.add_argument("--nha-variant", default="max", choices=["max", "exact"])
    p.add_argument("--out", help="Output JSON (stdout when omitted)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("bench", help="Run an attack suite and write a report")
    _add_eval_flags(p)
    p.add_argument("--suite", default="default", help="'default' or a suite JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", nargs="?", const="", default=None, help="Also write CSV (optional path)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("validate-tree", help="Check a tree file")
    p.add_argument("--tree", required=True)
    p.set_defaults(func=cmd_validate_tree)

    p = sub.add_parser("inspect-model", help="Describe a checkpoint")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect_model)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    settings = Settings.from_env()
    logging.basicConfig(
        level=getattr(logging, settings.log_level, logging.INFO),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, settings)
    except ValidationFailure as e:
        logger.error(f"{type(e).__name__}: {e}")
        say(f"❌ {type(e).__name__}: {e}")
        return 1
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"I/O error: {e}")
        return 2
    except HierBenchError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
