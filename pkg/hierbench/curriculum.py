#!/usr/bin/env python3
"""
Adversarial training and the coarse-to-fine curriculum (CHAT)
Trainers: clean CE, Free Adversarial Training (FAT) and TRADES. The curriculum
trains tree strata from the root's children down to the leaves, copying each
parent's head row to its children between stages.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax

from .errors import ConfigInvalid, HeadSizeMismatch, TooFewIterations
from .hierarchy import Hierarchy
from .netcore import (
    AdamState,
    Classifier,
    InitSpec,
    LinearHead,
    adam_step,
    cross_entropy_batch,
    forward,
    input_gradient,
    joint_gradient,
    param_gradient,
    resize_head,
)
from .synthdata import Dataset

logger = logging.getLogger(__name__)

SCHEDULE_MODES = ("exponential", "linear")
# cumulative fractions of training at which a seven-stratum curriculum deepens
SEVEN_STRATA_FRACTIONS = (0.02, 0.04, 0.06, 0.15, 0.25, 0.35)
GEOMETRIC_RATIO = 1.67
TRADES_INIT_SCALE = 0.001

SeedLike = Union[int, Sequence[int]]


# -------------------------------------------------------------------- schedule

@dataclass(frozen=True)
class StageSchedule:
    total_iterations: int
    boundaries: Tuple[int, ...]
    mode: str

    @property
    def num_stages(self) -> int:
        return len(self.boundaries) + 1

    def stage_lengths(self) -> List[int]:
        edges = [0, *self.boundaries, self.total_iterations]
        return [b - a for a, b in zip(edges, edges[1:])]

    def to_dict(self) -> Dict:
        return {"total_iterations": self.total_iterations, "boundaries": list(self.boundaries), "mode": self.mode}


def _stage_weights(num_strata: int) -> np.ndarray:
    return GEOMETRIC_RATIO ** np.arange(num_strata, dtype=np.float64)


def make_schedule(total_iterations: int, num_strata: int, mode: str = "exponential") -> StageSchedule:
    """Iteration indices where the curriculum moves one stratum deeper"""
    if mode not in SCHEDULE_MODES:
        raise ConfigInvalid(f"Unknown schedule mode '{mode}', expected one of {SCHEDULE_MODES}")
    if num_strata < 1:
        raise ConfigInvalid(f"num_strata must be >= 1, got {num_strata}")
    if total_iterations < max(1, 10 * (num_strata - 1)):
        raise TooFewIterations(
            f"{total_iterations} iterations cannot cover {num_strata} strata (need >= {10 * (num_strata - 1)})"
        )
    if num_strata == 1:
        return StageSchedule(total_iterations, (), mode)

    if mode == "linear":
        raw = [total_iterations * s // num_strata for s in range(1, num_strata)]
    else:
        if num_strata == len(SEVEN_STRATA_FRACTIONS) + 1:
            cumulative = np.array(SEVEN_STRATA_FRACTIONS)
        else:
            weights = _stage_weights(num_strata)
            cumulative = np.cumsum(weights)[:-1] / weights.sum()
        raw = [int(round(total_iterations * c)) for c in cumulative]

    boundaries = list(raw)
    for i in range(len(boundaries)):
        floor = boundaries[i - 1] + 1 if i else 1
        boundaries[i] = max(boundaries[i], floor)
    for i in reversed(range(len(boundaries))):
        boundaries[i] = min(boundaries[i], total_iterations - (len(boundaries) - i))
    return StageSchedule(total_iterations, tuple(boundaries), mode)


# --------------------------------------------------------------------- configs

@dataclass
class CleanConfig:
    minibatch_size: int = 64

    def validate(self) -> None:
        if self.minibatch_size < 1:
            raise ConfigInvalid("minibatch_size must be >= 1")


@dataclass
class FatConfig:
    replays: int = 4
    epsilon: float = 8 / 255
    alpha_train: float = 8 / 255
    minibatch_size: int = 64
    persistent_delta: bool = False

    def validate(self) -> None:
        if self.replays < 1:
            raise ConfigInvalid(f"FAT replays must be >= 1, got {self.replays}")
        if not (self.epsilon > 0 and self.alpha_train > 0):
            raise ConfigInvalid("FAT epsilon and alpha_train must be > 0")
        if self.minibatch_size < 1:
            raise ConfigInvalid("minibatch_size must be >= 1")


@dataclass
class TradesConfig:
    beta: float = 6.0
    inner_steps: int = 3
    inner_alpha: float = 2 / 255
    epsilon: float = 8 / 255
    minibatch_size: int = 64

    def validate(self) -> None:
        if self.beta < 0:
            raise ConfigInvalid(f"TRADES beta must be >= 0, got {self.beta}")
        if self.inner_steps < 1:
            raise ConfigInvalid("TRADES inner_steps must be >= 1")
        if not (self.epsilon > 0 and self.inner_alpha > 0):
            raise ConfigInvalid("TRADES epsilon and inner_alpha must be > 0")
        if self.minibatch_size < 1:
            raise ConfigInvalid("minibatch_size must be >= 1")


TrainerConfig = Union[CleanConfig, FatConfig, TradesConfig]


@dataclass
class TrainStats:
    iterations: int = 0
    losses: List[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


@dataclass
class StageRecord:
    stage: int
    height: int
    n_classes: int
    iterations: int
    final_train_loss: float
    warm_start: bool

    def to_dict(self) -> Dict:
        return asdict(self)


# ------------------------------------------------------------------- utilities

def _streams(seed: SeedLike, count: int = 2) -> List[np.random.Generator]:
    """Independent generators; stream 0 always drives minibatch order"""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start:start + batch_size]


def _check_inputs(classifier: Classifier, features: np.ndarray, labels: np.ndarray) -> None:
    if len(features) != len(labels) or len(labels) == 0:
        raise ConfigInvalid(f"{len(features)} feature rows vs {len(labels)} labels")
    if labels.min() < 0 or labels.max() >= classifier.n_classes:
        raise HeadSizeMismatch(
            f"Labels span [{labels.min()}, {labels.max()}] but the head has {classifier.n_classes} rows"
        )


def kl_divergence(z_clean: np.ndarray, z_adv: np.ndarray):
    """Row-wise KL(softmax(z_clean) || softmax(z_adv)) with gradients w.r.t. both logit sets"""
    log_p = log_softmax(z_clean, axis=-1)
    log_q = log_softmax(z_adv, axis=-1)
    p, q = np.exp(log_p), np.exp(log_q)
    diff = log_p - log_q
    kl = np.sum(p * diff, axis=-1)
    grad_clean = p * (diff - kl[..., None])
    grad_adv = q - p
    return kl, grad_clean, grad_adv


def trades_objective(classifier: Classifier, x: np.ndarray, x_adv: np.ndarray, labels: np.ndarray, beta: float):
    """Mean of CE(z(x), y) + beta * KL(p(x) || p(x_adv)) and its parameter gradients"""
    z_clean = forward(classifier, x)
    z_adv = forward(classifier, x_adv)
    ce, grad_ce = cross_entropy_batch(z_clean, labels)
    kl, grad_clean, grad_adv = kl_divergence(z_clean, z_adv)
    grads_clean = param_gradient(classifier, x, grad_ce + beta * grad_clean)
    grads_adv = param_gradient(classifier, x_adv, beta * grad_adv)
    loss = float(np.mean(ce + beta * kl))
    return loss, [a + b for a, b in zip(grads_clean, grads_adv)]


# -------------------------------------------------------------------- trainers

def clean_train(
    classifier: Classifier,
    dataset: Dataset,
    labels: np.ndarray,
    cfg: CleanConfig,
    iterations: int,
    optimizer: AdamState,
    seed: SeedLike,
) -> Tuple[Classifier, TrainStats]:
    cfg.validate()
    labels = np.asarray(labels, dtype=np.int64)
    _check_inputs(classifier, dataset.features, labels)
    batches = _minibatches(len(labels), cfg.minibatch_size, _streams(seed)[0])
    params = classifier.parameters()
    stats = TrainStats()
    while stats.iterations < iterations:
        idx = next(batches)
        x, y = dataset.features[idx], labels[idx]
        losses, grad = cross_entropy_batch(forward(classifier, x), y)
        adam_step(optimizer, params, param_gradient(classifier, x, grad))
        stats.iterations += 1
        stats.losses.append(float(np.mean(losses)))
    return classifier, stats


ReplayHook = Callable[[int, np.ndarray, np.ndarray], None]


def fat_train(
    classifier: Classifier,
    dataset: Dataset,
    labels: np.ndarray,
    cfg: FatConfig,
    iterations: int,
    optimizer: AdamState,
    seed: SeedLike,
    on_replay: Optional[ReplayHook] = None,
) -> Tuple[Classifier, TrainStats]:
    """Free adversarial training: each backward pass updates both the weights and the perturbation"""
    cfg.validate()
    labels = np.asarray(labels, dtype=np.int64)
    _check_inputs(classifier, dataset.features, labels)
    batches = _minibatches(len(labels), cfg.minibatch_size, _streams(seed)[0])
    params = classifier.parameters()
    carried = np.zeros((cfg.minibatch_size, dataset.dim)) if cfg.persistent_delta else None
    stats = TrainStats()

    while stats.iterations < iterations:
        idx = next(batches)
        x, y = dataset.features[idx], labels[idx]
        delta = carried[:len(idx)].copy() if carried is not None else np.zeros_like(x)
        for _ in range(cfg.replays):
            if stats.iterations >= iterations:
                break
            x_adv = np.clip(x + delta, 0.0, 1.0)
            losses, grad = cross_entropy_batch(forward(classifier, x_adv), y)
            dx, grads = joint_gradient(classifier, x_adv, grad)
            delta = np.clip(delta + cfg.alpha_train * np.sign(dx), -cfg.epsilon, cfg.epsilon)
            delta = np.clip(x + delta, 0.0, 1.0) - x
            adam_step(optimizer, params, grads)
            stats.iterations += 1
            stats.losses.append(float(np.mean(losses)))
            if on_replay is not None:
                on_replay(stats.iterations, x, delta)
        if carried is not None:
            carried[:len(idx)] = delta
    return classifier, stats


def trades_train(
    classifier: Classifier,
    dataset: Dataset,
    labels: np.ndarray,
    cfg: TradesConfig,
    iterations: int,
    optimizer: AdamState,
    seed: SeedLike,
) -> Tuple[Classifier, TrainStats]:
    """TRADES: inner sign-ascent on the KL term, outer step on CE + beta * KL"""
    cfg.validate()
    labels = np.asarray(labels, dtype=np.int64)
    _check_inputs(classifier, dataset.features, labels)
    batch_rng, noise_rng = _streams(seed)
    batches = _minibatches(len(labels), cfg.minibatch_size, batch_rng)
    params = classifier.parameters()
    stats = TrainStats()

    while stats.iterations < iterations:
        idx = next(batches)
        x, y = dataset.features[idx], labels[idx]
        p_clean = np.exp(log_softmax(forward(classifier, x), axis=-1))
        # KL has zero gradient at x_adv = x, so start from a small Gaussian offset
        x_adv = x + TRADES_INIT_SCALE * noise_rng.standard_normal(x.shape)
        x_adv = np.clip(np.clip(x_adv, x - cfg.epsilon, x + cfg.epsilon), 0.0, 1.0)
        for _ in range(cfg.inner_steps):
            q_adv = np.exp(log_softmax(forward(classifier, x_adv), axis=-1))
            dx = input_gradient(classifier, x_adv, q_adv - p_clean)
            x_adv = x_adv + cfg.inner_alpha * np.sign(dx)
            x_adv = np.clip(np.clip(x_adv, x - cfg.epsilon, x + cfg.epsilon), 0.0, 1.0)
        loss, grads = trades_objective(classifier, x, x_adv, y, cfg.beta)
        adam_step(optimizer, params, grads)
        stats.iterations += 1
        stats.losses.append(loss)
    return classifier, stats


TRAINERS = {"clean": clean_train, "fat": fat_train, "trades": trades_train}


def run_trainer(
    trainer: str,
    classifier: Classifier,
    dataset: Dataset,
    labels: np.ndarray,
    cfg: TrainerConfig,
    iterations: int,
    optimizer: AdamState,
    seed: SeedLike,
) -> Tuple[Classifier, TrainStats]:
    if trainer not in TRAINERS:
        raise ConfigInvalid(f"Unknown trainer '{trainer}', expected one of {sorted(TRAINERS)}")
    return TRAINERS[trainer](classifier, dataset, labels, cfg, iterations, optimizer, seed)


# ------------------------------------------------------------------ curriculum

def warm_up(head: LinearHead, height: int, hierarchy: Hierarchy) -> LinearHead:
    """Head for stratum height-1: each child row and bias copies its parent's"""
    if not 1 <= height <= hierarchy.num_levels - 1:
        raise HeadSizeMismatch(f"warm_up needs 1 <= height <= {hierarchy.num_levels - 1}, got {height}")
    if head.n_classes != hierarchy.level_sizes[height]:
        raise HeadSizeMismatch(
            f"Head has {head.n_classes} rows, stratum {height} has {hierarchy.level_sizes[height]} nodes"
        )
    parents = hierarchy.parent_indices(height - 1)
    return LinearHead(head.weights[parents].copy(), head.bias[parents].copy())


def chat_train(
    classifier: Classifier,
    dataset: Dataset,
    hierarchy: Hierarchy,
    schedule: StageSchedule,
    trainer: str,
    trainer_cfg: TrainerConfig,
    seed: int,
    learning_rate: float = 1e-5,
    warm_start: bool = True,
    on_stage: Optional[Callable[[StageRecord], None]] = None,
) -> Tuple[Classifier, List[StageRecord]]:
    """Train strata coarse to fine; warm_start=False gives the fresh-head (Scratch) ablation"""
    num_strata = hierarchy.num_levels - 1
    if schedule.num_stages != num_strata:
        raise ConfigInvalid(f"Schedule has {schedule.num_stages} stages, tree has {num_strata} trainable strata")

    coarsest = num_strata - 1
    init_rng = _streams([seed, 0x1717], 1)[0]
    if classifier.n_classes != hierarchy.level_sizes[coarsest]:
        classifier = resize_head(classifier, hierarchy.level_sizes[coarsest], InitSpec("uniform", rng=init_rng))

    stage_log: List[StageRecord] = []
    for stage, length in enumerate(schedule.stage_lengths()):
        height = coarsest - stage
        if stage > 0:
            if warm_start:
                classifier = Classifier(classifier.extractor, warm_up(classifier.head, height + 1, hierarchy))
            else:
                classifier = resize_head(classifier, hierarchy.level_sizes[height], InitSpec("uniform", rng=init_rng))

        labels = hierarchy.coarsen(dataset.labels, height)
        optimizer = AdamState.for_params(classifier.parameters(), lr=learning_rate)
        classifier, stats = run_trainer(trainer, classifier, dataset, labels, trainer_cfg, length, optimizer, [seed, stage])

        record = StageRecord(stage, height, classifier.n_classes, stats.iterations, stats.final_loss, warm_start)
        stage_log.append(record)
        logger.info(
            f"Stage {stage}: height {height}, {record.n_classes} classes, "
            f"{record.iterations} iterations, final loss {record.final_train_loss:.4f}"
        )
        if on_stage is not None:
            on_stage(record)
    return classifier, stage_log


def train_model(
    classifier: Classifier,
    dataset: Dataset,
    hierarchy: Hierarchy,
    trainer: str,
    trainer_cfg: TrainerConfig,
    total_iterations: int,
    curriculum: str = "chat",
    schedule_mode: str = "exponential",
    seed: int = 0,
    learning_rate: float = 1e-5,
    on_stage: Optional[Callable[[StageRecord], None]] = None,
) -> Tuple[Classifier, List[StageRecord]]:
    """Dispatch on curriculum: none (leaves only), chat (warm-up transfer) or scratch (fresh heads)"""
    if curriculum == "none":
        if classifier.n_classes != hierarchy.num_leaves:
            init_rng = _streams([seed, 0x1717], 1)[0]
            classifier = resize_head(classifier, hierarchy.num_leaves, InitSpec("uniform", rng=init_rng))
        optimizer = AdamState.for_params(classifier.parameters(), lr=learning_rate)
        classifier, stats = run_trainer(
            trainer, classifier, dataset, dataset.labels, trainer_cfg, total_iterations, optimizer, [seed, 0]
        )
        record = StageRecord(0, 0, classifier.n_classes, stats.iterations, stats.final_loss, False)
        logger.info(f"Standard training: {stats.iterations} iterations, final loss {stats.final_loss:.4f}")
        if on_stage is not None:
            on_stage(record)
        return classifier, [record]
    if curriculum not in ("chat", "scratch"):
        raise ConfigInvalid(f"Unknown curriculum '{curriculum}'")
    schedule = make_schedule(total_iterations, hierarchy.num_levels - 1, schedule_mode)
    return chat_train(
        classifier, dataset, hierarchy, schedule, trainer, trainer_cfg, seed,
        learning_rate=learning_rate, warm_start=curriculum == "chat", on_stage=on_stage,
    )
