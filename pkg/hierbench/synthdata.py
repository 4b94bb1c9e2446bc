#!/usr/bin/env python3
"""
Synthetic hierarchical datasets for hierbench
Balanced trees plus Gaussian leaf clusters whose centers diffuse down the tree,
so semantically close leaves are close in feature space.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigInvalid, DimTooSmall, LabelOutOfRange
from .hierarchy import Hierarchy, build

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)

# stream tags for derived seeds
_CENTER_STREAM = 0
_SAMPLE_STREAM = 1
_COUNT_STREAM = 2
_SPLIT_STREAM = 3


@dataclass
class Dataset:
    features: np.ndarray  # (n, dim), values in [0, 1]
    labels: np.ndarray  # (n,), leaf indices

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ConfigInvalid(f"features {self.features.shape} and labels {self.labels.shape} disagree")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def check_labels(self, hierarchy: Hierarchy) -> None:
        if len(self) and (self.labels.min() < 0 or self.labels.max() >= hierarchy.num_leaves):
            raise LabelOutOfRange(
                f"Labels span [{self.labels.min()}, {self.labels.max()}], tree has {hierarchy.num_leaves} leaves"
            )

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices])


@dataclass
class LongTail:
    pareto_alpha: float = 1.5
    min_samples: int = 13
    total_samples: Optional[int] = None


@dataclass
class SynthConfig:
    branching: Optional[List[int]] = None
    dim: int = 16
    sigma_levels: List[float] = field(default_factory=lambda: [0.3, 0.1])
    noise_sigma: float = 0.02
    samples_per_leaf: int = 200
    longtail: Optional[LongTail] = None
    seed: int = 0

    def validate(self) -> None:
        if self.dim < 2:
            raise DimTooSmall(f"dim must be >= 2, got {self.dim}")
        if self.branching is not None:
            if not self.branching or any(b < 1 for b in self.branching):
                raise ConfigInvalid(f"branching must be a nonempty list of positive ints, got {self.branching}")
            if len(self.sigma_levels) != len(self.branching):
                raise ConfigInvalid(
                    f"sigma_levels has {len(self.sigma_levels)} entries, branching has {len(self.branching)}"
                )
        if any(s < 0 for s in self.sigma_levels) or self.noise_sigma < 0:
            raise ConfigInvalid("sigma_levels and noise_sigma must be non-negative")
        if any(a < b for a, b in zip(self.sigma_levels, self.sigma_levels[1:])):
            logger.warning(f"sigma_levels {self.sigma_levels} are not decreasing")
        if self.longtail is None and self.samples_per_leaf < 1:
            raise ConfigInvalid("samples_per_leaf must be >= 1")
        if self.longtail is not None and (self.longtail.min_samples < 1 or self.longtail.pareto_alpha <= 0):
            raise ConfigInvalid("long-tail min_samples must be >= 1 and pareto_alpha > 0")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "SynthConfig":
        data = dict(data)
        if data.get("longtail") is not None:
            data["longtail"] = LongTail(**data["longtail"])
        return cls(**data)


@dataclass
class DatasetSplits:
    train: Dataset
    val: Dataset
    test: Dataset

    def get(self, name: str) -> Dataset:
        if name not in SPLIT_NAMES:
            raise ConfigInvalid(f"Unknown split '{name}', expected one of {SPLIT_NAMES}")
        return getattr(self, name)


def gen_tree(branching: Sequence[int]) -> Hierarchy:
    """Balanced tree; branching lists children per node from the root downwards"""
    if not branching or any(int(b) < 1 for b in branching):
        raise ConfigInvalid(f"branching must be a nonempty list of positive ints, got {list(branching)}")
    num_levels = len(branching) + 1
    edges = []
    size_above = 1
    for depth, fan in enumerate(branching, start=1):
        height = num_levels - 1 - depth
        for index in range(size_above * fan):
            edges.append((height, index, index // fan))
        size_above *= fan
    return build(num_levels, edges)


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def leaf_centers(cfg: SynthConfig, hierarchy: Hierarchy) -> np.ndarray:
    """Hierarchical diffusion: root at 0.5, each child = parent + N(0, sigma_level^2 I)"""
    top = hierarchy.num_levels - 1
    centers = np.full((1, cfg.dim), 0.5)
    for depth, sigma in enumerate(cfg.sigma_levels, start=1):
        height = top - depth
        parents = hierarchy.parent_indices(height)
        # one stream per node keeps generation order-independent
        offsets = np.stack([
            _rng(cfg.seed, _CENTER_STREAM, height, index).normal(0.0, 1.0, size=cfg.dim)
            for index in range(len(parents))
        ])
        centers = centers[parents] + sigma * offsets
    return centers


def leaf_sample_counts(cfg: SynthConfig, num_leaves: int) -> np.ndarray:
    if cfg.longtail is None:
        return np.full(num_leaves, cfg.samples_per_leaf, dtype=np.int64)
    tail = cfg.longtail
    total = tail.total_samples if tail.total_samples is not None else cfg.samples_per_leaf * num_leaves
    reserved = tail.min_samples * num_leaves
    if total < reserved:
        raise ConfigInvalid(
            f"Long-tail budget {total} is below min_samples * leaves = {tail.min_samples} * {num_leaves}"
        )
    weights = _rng(cfg.seed, _COUNT_STREAM).pareto(tail.pareto_alpha, size=num_leaves) + 1.0
    share = weights / weights.sum() * (total - reserved)
    extra = np.floor(share).astype(np.int64)
    # largest remainders take the leftover samples so the sum is exactly total
    leftover = int(total - reserved - extra.sum())
    extra[np.argsort(extra - share, kind="stable")[:leftover]] += 1
    counts = tail.min_samples + extra
    # head classes first: leaf 0 gets the largest count
    return np.sort(counts)[::-1].copy()


def gen_data(cfg: SynthConfig, hierarchy: Optional[Hierarchy] = None) -> Dataset:
    """Clipped Gaussian samples around tree-diffused leaf centers; deterministic given cfg.seed"""
    cfg.validate()
    if hierarchy is None:
        if cfg.branching is None:
            raise ConfigInvalid("gen_data needs either cfg.branching or an explicit hierarchy")
        hierarchy = gen_tree(cfg.branching)
    if hierarchy.num_levels != len(cfg.sigma_levels) + 1:
        raise ConfigInvalid(
            f"Tree has {hierarchy.num_levels} levels, sigma_levels implies {len(cfg.sigma_levels) + 1}"
        )

    centers = leaf_centers(cfg, hierarchy)
    counts = leaf_sample_counts(cfg, hierarchy.num_leaves)
    blocks, labels = [], []
    for leaf, count in enumerate(counts):
        noise = _rng(cfg.seed, _SAMPLE_STREAM, leaf).normal(0.0, 1.0, size=(int(count), cfg.dim))
        blocks.append(np.clip(centers[leaf] + cfg.noise_sigma * noise, 0.0, 1.0))
        labels.append(np.full(int(count), leaf, dtype=np.int64))
    dataset = Dataset(np.concatenate(blocks), np.concatenate(labels))
    logger.info(f"Generated {len(dataset)} samples over {hierarchy.num_leaves} leaves (dim={cfg.dim})")
    return dataset


def split_dataset(dataset: Dataset, seed: int, fractions: Tuple[float, float, float] = SPLIT_FRACTIONS) -> DatasetSplits:
    """Seeded shuffle into train/val/test"""
    order = _rng(seed, _SPLIT_STREAM).permutation(len(dataset))
    n_train = int(round(fractions[0] * len(dataset)))
    n_val = int(round(fractions[1] * len(dataset)))
    return DatasetSplits(
        train=dataset.subset(np.sort(order[:n_train])),
        val=dataset.subset(np.sort(order[n_train:n_train + n_val])),
        test=dataset.subset(np.sort(order[n_train + n_val:])),
    )


# -------------------------------------------------------------------------- io

def _write_csv(dataset: Dataset, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        for row, label in zip(dataset.features, dataset.labels):
            # repr gives the shortest round-trip decimal
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def _read_csv(path: Path, dim: int) -> Dataset:
    features, labels = [], []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for row in csv.reader(f):
            if not row:
                continue
            if len(row) != dim + 1:
                raise ConfigInvalid(f"{path}: row has {len(row)} fields, expected {dim + 1}")
            features.append([float(v) for v in row[:dim]])
            labels.append(int(row[dim]))
    return Dataset(np.array(features, dtype=np.float64).reshape(-1, dim), np.array(labels, dtype=np.int64))


def save_dataset(splits: DatasetSplits, out_dir: Union[str, Path], tree_path: Optional[str], cfg: Optional[SynthConfig] = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in SPLIT_NAMES:
        _write_csv(splits.get(name), out_dir / f"{name}.csv")
    manifest = {
        "dim": splits.train.dim,
        "n": sum(len(splits.get(name)) for name in SPLIT_NAMES),
        "splits": {name: len(splits.get(name)) for name in SPLIT_NAMES},
        "tree_path": tree_path,
        "config": cfg.to_dict() if cfg is not None else None,
    }
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    logger.info(f"Wrote dataset to {out_dir} ({manifest['splits']})")
    return manifest_path


def load_dataset(data_dir: Union[str, Path]) -> Tuple[DatasetSplits, Dict]:
    """Returns the splits and the manifest"""
    data_dir = Path(data_dir)
    with open(data_dir / "manifest.json", "r", encoding="utf-8") as f:
        manifest = json.load(f)
    dim = int(manifest["dim"])
    splits = DatasetSplits(*(_read_csv(data_dir / f"{name}.csv", dim) for name in SPLIT_NAMES))
    return splits, manifest
