#!/usr/bin/env python3
"""
Hierarchy-aware adversarial attacks
Masked cross-entropy losses (LHA, GHA), node-aggregated losses (NHA) and the
PGD optimizer with an l-infinity ball projection and uniform random start.
"""

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import DegenerateMask, HeadSizeMismatch, HeightOutOfRange, InvalidAttackSpec, TargetNotInMask
from .hierarchy import Hierarchy
from .netcore import Classifier, forward, input_gradient

logger = logging.getLogger(__name__)

LossResult = Tuple[float, np.ndarray]


class AttackKind(str, Enum):
    PGD = "PGD"
    LHA = "LHA"
    GHA = "GHA"
    NHA = "NHA"


NHA_VARIANTS = ("max", "exact")


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind
    h: int = 0
    eps: float = 4 / 255
    alpha: float = 1 / 255
    steps: int = 50
    nha_variant: str = "max"

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if self.kind is AttackKind.PGD:
            object.__setattr__(self, "h", 0)

    def validate(self, hierarchy: Optional[Hierarchy] = None) -> "AttackSpec":
        if not self.eps >= 0 or not self.alpha > 0 or self.steps < 1:
            # eps = 0 is accepted as the no-perturbation baseline
            raise InvalidAttackSpec(f"Need eps >= 0, alpha > 0, steps >= 1; got {self.to_dict()}")
        if self.nha_variant not in NHA_VARIANTS:
            raise InvalidAttackSpec(f"nha_variant must be one of {NHA_VARIANTS}")
        if hierarchy is not None:
            top = hierarchy.num_levels - 1
            if self.kind in (AttackKind.LHA, AttackKind.GHA) and not 1 <= self.h <= top:
                raise InvalidAttackSpec(f"{self.kind.value} height must lie in [1, {top}], got {self.h}")
            if self.kind is AttackKind.NHA and not 0 <= self.h <= top - 1:
                raise InvalidAttackSpec(f"NHA height must lie in [0, {top - 1}], got {self.h}")
        return self

    @property
    def label(self) -> str:
        if self.kind is AttackKind.PGD:
            return f"PGD{self.steps}"
        return f"{self.kind.value}{self.steps}@{self.h}"

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["kind"] = self.kind.value
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "AttackSpec":
        return cls(
            kind=AttackKind(data["kind"]),
            h=int(data.get("h", 0)),
            eps=float(data["eps"]),
            alpha=float(data.get("alpha", 1 / 255)),
            steps=int(data.get("steps", 50)),
            nha_variant=data.get("nha_variant", "max"),
        )


@dataclass
class AdversarialOutcome:
    x_adv: np.ndarray
    success: bool
    adv_prediction: int
    mistake: int
    iterates_checked: int
    final_prediction: int
    final_success: bool
    final_mistake: int
    degenerate: bool = False
    x_worst: Optional[np.ndarray] = field(default=None, repr=False)


# ---------------------------------------------------------------------- losses

def masked_ce(z: np.ndarray, y: int, mask: np.ndarray) -> LossResult:
    """-(z_y - logsumexp_{j in S} z_j) and its logit gradient (zero outside S)"""
    z = np.asarray(z, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.int64)
    position = np.flatnonzero(mask == y)
    if position.size == 0:
        raise TargetNotInMask(f"Target {y} is not in the loss mask")
    sub = z[mask]
    loss = float(logsumexp(sub) - z[y])
    grad = np.zeros_like(z)
    grad[mask] = softmax(sub)
    grad[y] -= 1.0
    return loss, grad


def cross_entropy(z: np.ndarray, y: int) -> LossResult:
    """Standard CE over all classes (the full-mask case of masked_ce)"""
    return masked_ce(z, y, np.arange(len(z)))


def loss_lha(z: np.ndarray, y: int, h: int, hierarchy: Hierarchy) -> LossResult:
    mask = hierarchy.lower_mask(y, h)
    if len(mask) == 1:
        raise DegenerateMask(f"LHA@{h}: leaf {y} has no other leaf within distance {h}")
    return masked_ce(z, y, mask)


def loss_gha(z: np.ndarray, y: int, h: int, hierarchy: Hierarchy) -> LossResult:
    mask = hierarchy.greater_mask(y, h)
    if len(mask) == 1:
        raise DegenerateMask(f"GHA@{h}: leaf {y} has no leaf at distance >= {h}")
    return masked_ce(z, y, mask)


def _check_node_height(h: int, hierarchy: Hierarchy) -> None:
    if not 0 <= h <= hierarchy.num_levels - 1:
        raise HeightOutOfRange(f"Node height {h} outside [0, {hierarchy.num_levels - 1}]")


def node_logits_exact(z: np.ndarray, h: int, hierarchy: Hierarchy) -> np.ndarray:
    """L_j = log sum_{i in C_{h,0}(j)} exp(z_i) for every node j at height h"""
    _check_node_height(h, hierarchy)
    z = np.asarray(z, dtype=np.float64)
    if h == 0:
        return z.copy()
    anc = hierarchy.leaf_ancestors(h)
    n_h = hierarchy.level_sizes[h]
    peak = np.full(n_h, -np.inf)
    np.maximum.at(peak, anc, z)
    total = np.bincount(anc, weights=np.exp(z - peak[anc]), minlength=n_h)
    return peak + np.log(total)


def node_logits_max(z: np.ndarray, h: int, hierarchy: Hierarchy) -> Tuple[np.ndarray, np.ndarray]:
    """Max leaf logit per node at height h and the leaf achieving it (lowest index on ties)"""
    _check_node_height(h, hierarchy)
    z = np.asarray(z, dtype=np.float64)
    if h == 0:
        return z.copy(), np.arange(len(z))
    groups = hierarchy.leaf_groups(h)
    winners = np.array([g[np.argmax(z[g])] for g in groups], dtype=np.int64)
    return z[winners], winners


def loss_nha(z: np.ndarray, y: int, h: int, hierarchy: Hierarchy, variant: str = "max") -> LossResult:
    """CE over node logits at height h, targeting the ancestor of leaf y"""
    if not 0 <= h <= hierarchy.num_levels - 2:
        raise HeightOutOfRange(f"NHA height {h} outside [0, {hierarchy.num_levels - 2}]")
    if h == 0:
        return cross_entropy(z, y)
    z = np.asarray(z, dtype=np.float64)
    target = hierarchy.ancestor_at(y, h).index
    anc = hierarchy.leaf_ancestors(h)

    if variant == "max":
        node_z, winners = node_logits_max(z, h, hierarchy)
        loss, node_grad = cross_entropy(node_z, target)
        grad = np.zeros_like(z)
        grad[winners] = node_grad
        return loss, grad
    if variant == "exact":
        node_z = node_logits_exact(z, h, hierarchy)
        loss, node_grad = cross_entropy(node_z, target)
        # within-node softmax weights route each node's gradient to its leaves
        grad = node_grad[anc] * np.exp(z - node_z[anc])
        return loss, grad
    raise InvalidAttackSpec(f"Unknown NHA variant '{variant}'")


def attack_loss(spec: AttackSpec, z: np.ndarray, y: int, hierarchy: Hierarchy) -> LossResult:
    if spec.kind is AttackKind.PGD:
        return cross_entropy(z, y)
    if spec.kind is AttackKind.LHA:
        return loss_lha(z, y, spec.h, hierarchy)
    if spec.kind is AttackKind.GHA:
        return loss_gha(z, y, spec.h, hierarchy)
    return loss_nha(z, y, spec.h, hierarchy, spec.nha_variant)


def degenerate_for(spec: AttackSpec, y: int, hierarchy: Hierarchy) -> bool:
    """True when the attack's masked loss is constant for label y"""
    if spec.kind is AttackKind.LHA:
        return len(hierarchy.lower_mask(y, spec.h)) == 1
    if spec.kind is AttackKind.GHA:
        return len(hierarchy.greater_mask(y, spec.h)) == 1
    return False


# ------------------------------------------------------------------------- PGD

def project(x_t: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    """Clip onto the eps-ball around x, then onto [0, 1]"""
    return np.clip(np.clip(x_t, x - eps, x + eps), 0.0, 1.0)


IterateHook = Callable[[int, np.ndarray], None]
SeedLike = Union[int, np.random.SeedSequence]


def pgd(
    classifier: Classifier,
    x: np.ndarray,
    y: int,
    spec: AttackSpec,
    hierarchy: Hierarchy,
    seed: SeedLike,
    on_iterate: Optional[IterateHook] = None,
) -> AdversarialOutcome:
    """Sign-gradient ascent of the attack loss, keeping the worst misclassifying iterate"""
    x = np.asarray(x, dtype=np.float64)
    y = int(y)
    if classifier.n_classes != hierarchy.num_leaves:
        raise HeadSizeMismatch(
            f"Classifier predicts {classifier.n_classes} classes; attacks need the {hierarchy.num_leaves} leaves"
        )

    if degenerate_for(spec, y, hierarchy):
        logger.warning(f"{spec.label}: singleton mask for leaf {y}, counting the instance as robust")
        prediction = int(np.argmax(forward(classifier, x)))
        return AdversarialOutcome(
            x_adv=x.copy(), success=False, adv_prediction=prediction, mistake=0, iterates_checked=0,
            final_prediction=prediction, final_success=False, final_mistake=0, degenerate=True, x_worst=None,
        )

    rng = np.random.default_rng(seed)
    x_t = project(x + rng.uniform(-spec.eps, spec.eps, size=x.shape), x, spec.eps)

    worst_prediction, worst_mistake, x_worst = y, 0, None
    prediction = y
    for t in range(spec.steps + 1):
        if on_iterate is not None:
            on_iterate(t, x_t)
        z = forward(classifier, x_t)
        prediction = int(np.argmax(z))
        if prediction != y:
            mistake = hierarchy.hdist(prediction, y)
            if mistake > worst_mistake:
                worst_prediction, worst_mistake, x_worst = prediction, mistake, x_t.copy()
        if t == spec.steps:
            break
        _, loss_grad = attack_loss(spec, z, y, hierarchy)
        step = np.sign(input_gradient(classifier, x_t, loss_grad))
        x_t = project(x_t + spec.alpha * step, x, spec.eps)

    return AdversarialOutcome(
        x_adv=x_t,
        success=worst_mistake > 0,
        adv_prediction=worst_prediction,
        mistake=worst_mistake,
        iterates_checked=spec.steps + 1,
        final_prediction=prediction,
        final_success=prediction != y,
        final_mistake=hierarchy.hdist(prediction, y),
        x_worst=x_worst,
    )
