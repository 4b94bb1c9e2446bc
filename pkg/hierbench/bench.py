#!/usr/bin/env python3
"""
Adversarial severity benchmark
Runs attack suites over a model and dataset and reports Robust Accuracy,
Average Mistake, Flipped Average Mistake and Accuracy Drop.
"""

import csv
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .attacks import AdversarialOutcome, AttackKind, AttackSpec, pgd
from .errors import InvalidAttackSpec
from .hierarchy import Hierarchy
from .netcore import Classifier, forward
from .synthdata import Dataset

logger = logging.getLogger(__name__)

CONVENTION = "worst-iterate"
CSV_COLUMNS = (
    "kind", "h", "eps", "alpha", "steps", "clean_acc", "robust_acc", "am",
    "flipped_am", "acc_drop", "n_flipped", "n_degenerate",
)


@dataclass
class CleanEvaluation:
    accuracy: float
    predictions: np.ndarray
    mistakes: np.ndarray


@dataclass
class EvalRecord:
    attack: Optional[AttackSpec]
    clean_accuracy: float
    robust_accuracy: float
    average_mistake: float
    flipped_average_mistake: float
    accuracy_drop: float
    n_evaluated: int
    n_clean_correct: int
    n_flipped: int
    n_degenerate: int
    final_iterate: Dict[str, float] = field(default_factory=dict)

    def metrics(self) -> Dict:
        return {
            "clean_accuracy": self.clean_accuracy,
            "robust_accuracy": self.robust_accuracy,
            "average_mistake": self.average_mistake,
            "flipped_average_mistake": self.flipped_average_mistake,
            "accuracy_drop": self.accuracy_drop,
            "n_evaluated": self.n_evaluated,
            "n_clean_correct": self.n_clean_correct,
            "n_flipped": self.n_flipped,
            "n_degenerate": self.n_degenerate,
            "final_iterate": dict(self.final_iterate),
        }

    def to_dict(self) -> Dict:
        return {
            "attack": self.attack.to_dict() if self.attack is not None else None,
            "convention": CONVENTION,
            **self.metrics(),
        }

    def csv_row(self) -> List:
        spec = self.attack
        return [
            spec.kind.value if spec else "SUITE",
            spec.h if spec else "",
            repr(spec.eps) if spec else "",
            repr(spec.alpha) if spec else "",
            spec.steps if spec else "",
            repr(self.clean_accuracy),
            repr(self.robust_accuracy),
            repr(self.average_mistake),
            repr(self.flipped_average_mistake),
            repr(self.accuracy_drop),
            self.n_flipped,
            self.n_degenerate,
        ]


@dataclass
class SuiteReport:
    records: List[EvalRecord]
    summary: EvalRecord

    def to_dict(self) -> Dict:
        return {
            "convention": CONVENTION,
            "records": [r.to_dict() for r in self.records],
            "summary": self.summary.to_dict(),
        }


# ---------------------------------------------------------------------- metrics

def _mean_or_zero(values: np.ndarray) -> float:
    return float(np.mean(values)) if len(values) else 0.0


def average_mistake(mistakes: np.ndarray) -> float:
    """Mean d_H over misclassified entries (d_H > 0); 0 when nothing is misclassified"""
    mistakes = np.asarray(mistakes)
    return _mean_or_zero(mistakes[mistakes > 0])


def evaluate_clean(classifier: Classifier, dataset: Dataset, hierarchy: Hierarchy) -> CleanEvaluation:
    dataset.check_labels(hierarchy)
    if len(dataset) == 0:
        return CleanEvaluation(0.0, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    predictions = np.argmax(forward(classifier, dataset.features), axis=1)
    mistakes = hierarchy.hdist_many(predictions, dataset.labels)
    return CleanEvaluation(float(np.mean(predictions == dataset.labels)), predictions, mistakes)


# ------------------------------------------------------------------------ seeds

def threat_model_id(spec: AttackSpec) -> int:
    """Stable id of (eps, alpha, steps); attacks differing only in loss share random starts"""
    return zlib.crc32(f"{spec.eps!r}:{spec.alpha!r}:{spec.steps}".encode("utf-8"))


def instance_seed(master_seed: int, index: int, spec: AttackSpec) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(index), threat_model_id(spec)])


# ---------------------------------------------------------------------- attacks

def attack_instances(
    classifier: Classifier,
    dataset: Dataset,
    hierarchy: Hierarchy,
    spec: AttackSpec,
    indices: Sequence[int],
    master_seed: int,
    workers: int = 1,
) -> List[AdversarialOutcome]:
    """PGD outcomes for the given instance indices, in index order"""

    def run(index: int) -> AdversarialOutcome:
        return pgd(
            classifier, dataset.features[index], int(dataset.labels[index]), spec, hierarchy,
            instance_seed(master_seed, index, spec),
        )

    if workers <= 1:
        return [run(i) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, indices))


def _record(
    spec: Optional[AttackSpec],
    clean: CleanEvaluation,
    correct_idx: np.ndarray,
    flipped_mask: np.ndarray,
    adv_mistakes: np.ndarray,
    n_degenerate: int,
) -> EvalRecord:
    n = len(clean.predictions)
    n_correct = len(correct_idx)
    n_flipped = int(flipped_mask.sum())
    clean_wrong = clean.mistakes[clean.mistakes > 0]
    flipped = adv_mistakes[flipped_mask]
    clean_accuracy = n_correct / n if n else 0.0
    robust_accuracy = (n_correct - n_flipped) / n if n else 0.0
    return EvalRecord(
        attack=spec,
        clean_accuracy=clean_accuracy,
        robust_accuracy=robust_accuracy,
        average_mistake=_mean_or_zero(np.concatenate([clean_wrong, flipped]).astype(np.float64)),
        flipped_average_mistake=_mean_or_zero(flipped.astype(np.float64)),
        accuracy_drop=clean_accuracy - robust_accuracy,
        n_evaluated=n,
        n_clean_correct=n_correct,
        n_flipped=n_flipped,
        n_degenerate=n_degenerate,
    )


def _final_iterate_figures(clean: CleanEvaluation, outcomes: List[AdversarialOutcome]) -> Dict[str, float]:
    n = len(clean.predictions)
    final_flips = np.array([o.final_mistake for o in outcomes if o.final_success], dtype=np.float64)
    clean_wrong = clean.mistakes[clean.mistakes > 0].astype(np.float64)
    robust = (len(outcomes) - len(final_flips)) / n if n else 0.0
    return {
        "robust_accuracy": robust,
        "average_mistake": _mean_or_zero(np.concatenate([clean_wrong, final_flips])),
        "flipped_average_mistake": _mean_or_zero(final_flips),
        "n_flipped": int(len(final_flips)),
    }


def _evaluate(classifier, dataset, hierarchy, spec, master_seed, workers, clean):
    correct_idx = np.flatnonzero(clean.mistakes == 0)
    outcomes = attack_instances(classifier, dataset, hierarchy, spec, correct_idx, master_seed, workers)
    flipped = np.array([o.success for o in outcomes], dtype=bool)
    adv_mistakes = np.array([o.mistake for o in outcomes], dtype=np.int64)
    n_degenerate = sum(o.degenerate for o in outcomes)
    if n_degenerate:
        logger.warning(f"{spec.label}: {n_degenerate} instances had a singleton mask and count as robust")
    record = _record(spec, clean, correct_idx, flipped, adv_mistakes, n_degenerate)
    record.final_iterate = _final_iterate_figures(clean, outcomes)
    return record, correct_idx, outcomes


def evaluate_attack(
    classifier: Classifier,
    dataset: Dataset,
    hierarchy: Hierarchy,
    spec: AttackSpec,
    master_seed: int,
    workers: int = 1,
) -> EvalRecord:
    """Attack the clean-correct instances and aggregate severity metrics"""
    spec.validate(hierarchy)
    clean = evaluate_clean(classifier, dataset, hierarchy)
    record, _, _ = _evaluate(classifier, dataset, hierarchy, spec, master_seed, workers, clean)
    logger.info(
        f"{spec.label}: robust acc {record.robust_accuracy:.4f}, AM {record.average_mistake:.3f}, "
        f"flipped AM {record.flipped_average_mistake:.3f} ({record.n_flipped} flipped)"
    )
    return record


def run_suite(
    classifier: Classifier,
    dataset: Dataset,
    hierarchy: Hierarchy,
    suite: Sequence[AttackSpec],
    master_seed: int,
    workers: int = 1,
) -> SuiteReport:
    """One record per attack plus a per-instance worst case over the whole suite"""
    if not suite:
        raise InvalidAttackSpec("Attack suite is empty")
    for spec in suite:
        spec.validate(hierarchy)
    clean = evaluate_clean(classifier, dataset, hierarchy)
    correct_idx = np.flatnonzero(clean.mistakes == 0)
    worst = np.zeros(len(correct_idx), dtype=np.int64)
    degenerate_any = np.zeros(len(correct_idx), dtype=bool)

    records = []
    for spec in suite:
        record, _, outcomes = _evaluate(classifier, dataset, hierarchy, spec, master_seed, workers, clean)
        records.append(record)
        worst = np.maximum(worst, np.array([o.mistake for o in outcomes], dtype=np.int64))
        degenerate_any |= np.array([o.degenerate for o in outcomes], dtype=bool)
        logger.info(f"{spec.label}: robust acc {record.robust_accuracy:.4f}, AM {record.average_mistake:.3f}")

    summary = _record(None, clean, correct_idx, worst > 0, worst, int(degenerate_any.sum()))
    return SuiteReport(records, summary)


def default_suite(num_levels: int, eps: float, steps: int = 50, alpha: float = 1 / 255) -> List[AttackSpec]:
    """PGD plus LHA/GHA/NHA at every height 1..H-2"""
    suite = [AttackSpec(AttackKind.PGD, 0, eps, alpha, steps)]
    heights = range(1, num_levels - 1)
    if not heights:
        logger.info(f"Tree with {num_levels} levels has no hierarchical target heights; suite is PGD only")
    for h in heights:
        for kind in (AttackKind.LHA, AttackKind.GHA, AttackKind.NHA):
            suite.append(AttackSpec(kind, h, eps, alpha, steps))
    return suite


# ------------------------------------------------------------------------ output

def write_json(payload: Dict, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    return path


def write_report(report: SuiteReport, path: Union[str, Path]) -> Path:
    return write_json(report.to_dict(), path)


def write_csv(report: SuiteReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for record in report.records:
            writer.writerow(record.csv_row())
        writer.writerow(report.summary.csv_row())
    return path


def load_suite(path: Union[str, Path]) -> List[AttackSpec]:
    """Suite file: a JSON list of AttackSpec objects (or {"suite": [...]})"""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    items = data["suite"] if isinstance(data, dict) else data
    return [AttackSpec.from_dict(item) for item in items]
