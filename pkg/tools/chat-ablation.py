#!/usr/bin/env python3
"""
CHAT ablation runner for hierbench
Trains Standard, Scratch and CHAT models (optionally a linear-schedule CHAT arm)
over several seeds on a synthetic tree and compares accuracy and mistake
severity under PGD and the hierarchical attacks.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from hierbench.attacks import AttackKind, AttackSpec  # noqa: E402
from hierbench.bench import evaluate_attack, evaluate_clean, run_suite, write_json  # noqa: E402
from hierbench.cli import parse_float_list, parse_fraction, parse_int_list  # noqa: E402
from hierbench.config import Settings  # noqa: E402
from hierbench.curriculum import FatConfig, TradesConfig, train_model  # noqa: E402
from hierbench.netcore import make_classifier  # noqa: E402
from hierbench.synthdata import SynthConfig, gen_data, gen_tree, split_dataset  # noqa: E402

logger = logging.getLogger("chat-ablation")

ARMS = {
    "standard": {"curriculum": "none", "schedule": "exponential"},
    "scratch": {"curriculum": "scratch", "schedule": "exponential"},
    "chat": {"curriculum": "chat", "schedule": "exponential"},
    "chat-linear": {"curriculum": "chat", "schedule": "linear"},
}


class ChatAblation:
    def __init__(self, args):
        self.args = args
        self.tree = gen_tree(args.branching)
        top = self.tree.num_levels - 1
        self.sigma_levels = args.sigma_levels or [0.3 / (3 ** k) for k in range(top)]
        self.arms = ["standard", "scratch", "chat"] + (["chat-linear"] if args.linear else [])

    def trainer_config(self):
        if self.args.trainer == "trades":
            return TradesConfig(epsilon=self.args.eps, minibatch_size=self.args.batch_size)
        return FatConfig(replays=self.args.replays, epsilon=self.args.eps, alpha_train=self.args.eps,
                         minibatch_size=self.args.batch_size)

    def suite(self, steps: int) -> List[AttackSpec]:
        """PGD plus each hierarchical attack at the stratum just below the root"""
        h = self.tree.num_levels - 2
        alpha = self.args.alpha
        suite = [AttackSpec(AttackKind.PGD, 0, self.args.eps, alpha, steps)]
        if h >= 1:
            suite += [
                AttackSpec(AttackKind.LHA, h, self.args.eps, alpha, steps),
                AttackSpec(AttackKind.GHA, h + 1, self.args.eps, alpha, steps),
                AttackSpec(AttackKind.NHA, h, self.args.eps, alpha, steps),
            ]
        return suite

    def run_seed(self, seed: int) -> Dict:
        cfg = SynthConfig(
            dim=self.args.dim, sigma_levels=self.sigma_levels, noise_sigma=self.args.noise,
            samples_per_leaf=self.args.samples, seed=seed,
        )
        splits = split_dataset(gen_data(cfg, self.tree), seed)
        results = {}
        for arm in self.arms:
            settings = ARMS[arm]
            model = make_classifier(
                self.args.dim, self.tree.num_leaves, self.args.width, self.args.layers, np.random.default_rng([seed, 1])
            )
            model, stages = train_model(
                model, splits.train, self.tree, self.args.trainer, self.trainer_config(), self.args.iters,
                curriculum=settings["curriculum"], schedule_mode=settings["schedule"], seed=seed,
                learning_rate=self.args.lr,
            )
            report = run_suite(model, splits.test, self.tree, self.suite(self.args.steps), seed, self.args.workers)
            sweep = {
                str(steps): evaluate_attack(
                    model, splits.test, self.tree, AttackSpec(AttackKind.PGD, 0, self.args.eps, self.args.alpha, steps),
                    seed, self.args.workers,
                ).robust_accuracy
                for steps in self.args.pgd_sweep
            }
            clean = evaluate_clean(model, splits.test, self.tree)
            results[arm] = {
                "clean_accuracy": clean.accuracy,
                "records": {r.attack.label: r.metrics() for r in report.records},
                "worst_case": report.summary.metrics(),
                "pgd_step_sweep": sweep,
                "stages": [s.to_dict() for s in stages],
            }
            print(f"   {arm:<12} clean {clean.accuracy:.4f}  worst-case robust {report.summary.robust_accuracy:.4f}"
                  f"  AM {report.summary.average_mistake:.3f}", file=sys.stderr)
        return results

    def summarize(self, per_seed: Dict[str, Dict]) -> Dict:
        summary = {}
        for arm in self.arms:
            labels = per_seed[next(iter(per_seed))][arm]["records"].keys()
            summary[arm] = {
                "clean_accuracy": float(np.mean([r[arm]["clean_accuracy"] for r in per_seed.values()])),
                "attacks": {
                    label: {
                        metric: float(np.mean([r[arm]["records"][label][metric] for r in per_seed.values()]))
                        for metric in ("robust_accuracy", "average_mistake", "flipped_average_mistake")
                    }
                    for label in labels
                },
            }
        return summary

    def run(self) -> Dict:
        per_seed = {}
        for seed in self.args.seeds:
            print(f"🌱 Seed {seed}", file=sys.stderr)
            per_seed[str(seed)] = self.run_seed(seed)
        return {
            "tree": {"branching": self.args.branching, "level_sizes": self.tree.level_sizes},
            "trainer": self.args.trainer,
            "iterations": self.args.iters,
            "eps": self.args.eps,
            "per_seed": per_seed,
            "mean": self.summarize(per_seed),
        }


def main():
    settings = Settings.from_env()
    parser = argparse.ArgumentParser(description="Standard vs Scratch vs CHAT ablation")
    parser.add_argument("--branching", type=parse_int_list, default=[4, 4])
    parser.add_argument("--dim", type=int, default=16)
    parser.add_argument("--sigma-levels", type=parse_float_list, default=None)
    parser.add_argument("--noise", type=parse_fraction, default=0.02)
    parser.add_argument("--samples", type=int, default=200, help="Samples per leaf")
    parser.add_argument("--trainer", choices=["fat", "trades"], default="fat")
    parser.add_argument("--iters", type=int, default=3000)
    parser.add_argument("--eps", type=parse_fraction, default=parse_fraction("8/255"))
    parser.add_argument("--alpha", type=parse_fraction, default=parse_fraction("1/255"))
    parser.add_argument("--replays", type=int, default=4)
    parser.add_argument("--steps", type=int, default=50, help="Attack iterations")
    parser.add_argument("--pgd-sweep", type=parse_int_list, default=[10, 20, 50])
    parser.add_argument("--width", type=int, default=settings.hidden_width)
    parser.add_argument("--layers", type=int, default=settings.hidden_layers)
    parser.add_argument("--batch-size", type=int, default=settings.batch_size)
    parser.add_argument("--lr", type=float, default=settings.learning_rate)
    parser.add_argument("--seeds", type=parse_int_list, default=[0, 1, 2, 3, 4])
    parser.add_argument("--linear", action="store_true", help="Add a linear-schedule CHAT arm")
    parser.add_argument("--workers", type=int, default=settings.workers)
    parser.add_argument("--out", default="chat_ablation.json")
    args = parser.parse_args()

    logging.basicConfig(level=getattr(logging, settings.log_level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")

    print("🧪 hierbench CHAT ablation", file=sys.stderr)
    print("=" * 40, file=sys.stderr)
    results = ChatAblation(args).run()
    write_json(results, args.out)
    print(f"\n✅ Results written to {args.out}", file=sys.stderr)
    for arm, row in results["mean"].items():
        print(f"   {arm:<12} mean clean accuracy {row['clean_accuracy']:.4f}", file=sys.stderr)


if __name__ == "__main__":
    main()
