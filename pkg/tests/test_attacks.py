"""
Tests for the hierarchical attack losses and the PGD driver
"""

import numpy as np
import pytest
from scipy.special import logsumexp, softmax

from hierbench.attacks import (
    AttackKind,
    AttackSpec,
    attack_loss,
    cross_entropy,
    loss_gha,
    loss_lha,
    loss_nha,
    masked_ce,
    node_logits_exact,
    node_logits_max,
    pgd,
)
from hierbench.errors import (
    DegenerateMask,
    HeadSizeMismatch,
    HeightOutOfRange,
    InvalidAttackSpec,
    TargetNotInMask,
)
from hierbench.hierarchy import build
from hierbench.netcore import Classifier, LinearHead, Mlp, forward, input_gradient, make_classifier
from hierbench.synthdata import gen_tree

TREES = {"H2": [4], "H3": [2, 3], "H4": [2, 2, 2], "H4-wide": [3, 2, 2]}


def scaled_error(analytic, numeric, floor):
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def logit_fd(loss_fn, z, step=1e-5):
    grad = np.zeros_like(z)
    for i in range(len(z)):
        up, down = z.copy(), z.copy()
        up[i] += step
        down[i] -= step
        grad[i] = (loss_fn(up)[0] - loss_fn(down)[0]) / (2 * step)
    return grad


def separated_logits(rng, tree, h, gap=1e-3):
    """Random z whose per-node maxima are not near-ties at height h"""
    while True:
        z = rng.normal(scale=2.0, size=tree.num_leaves)
        if h == 0:
            return z
        ok = True
        for group in tree.leaf_groups(h):
            top = np.sort(z[group])[-2:]
            if len(top) == 2 and top[1] - top[0] < gap:
                ok = False
        if ok:
            return z


# ---------------------------------------------------------------- masked CE

def test_singleton_mask_is_zero():
    loss, grad = masked_ce(np.array([0.3, -1.0, 2.0]), 1, np.array([1]))
    assert loss == 0.0
    assert not grad.any()


def test_full_mask_is_cross_entropy():
    z = np.array([0.5, -0.2, 1.7, 0.0])
    loss, grad = masked_ce(z, 2, np.arange(4))
    expected = logsumexp(z) - z[2]
    assert loss == pytest.approx(expected, rel=1e-15)
    np.testing.assert_allclose(grad, softmax(z) - np.eye(4)[2], atol=1e-15)


def test_masked_ce_by_formula():
    loss, grad = masked_ce(np.array([1.0, 2.0, 3.0]), 0, np.array([0, 2]))
    assert loss == pytest.approx(-(1.0 - np.log(np.e + np.e ** 3)), rel=1e-14)
    assert grad[1] == 0.0


def test_target_outside_mask():
    with pytest.raises(TargetNotInMask):
        masked_ce(np.zeros(3), 1, np.array([0, 2]))


def test_lha_binary_case(t1):
    z = np.random.default_rng(0).normal(size=8)
    loss, grad = loss_lha(z, 0, 1, t1)
    assert loss == pytest.approx(np.logaddexp(z[0], z[1]) - z[0], rel=1e-13)
    assert not grad[2:].any()


def test_gha_mask_at_top(t1):
    z = np.random.default_rng(1).normal(size=8)
    loss, grad = loss_gha(z, 0, 3, t1)
    assert loss == pytest.approx(logsumexp(z[[0, 4, 5, 6, 7]]) - z[0], rel=1e-13)
    assert not grad[1:4].any()


def test_singleton_lha_mask():
    # every height-1 node has one leaf
    tree = build(3, [(0, 0, 0), (0, 1, 1), (1, 0, 0), (1, 1, 0)])
    with pytest.raises(DegenerateMask):
        loss_lha(np.zeros(2), 0, 1, tree)


def test_singleton_gha_mask():
    # the root has a single child
    tree = build(3, [(0, 0, 0), (0, 1, 0), (1, 0, 0)])
    with pytest.raises(DegenerateMask):
        loss_gha(np.zeros(2), 0, 2, tree)


@pytest.mark.parametrize("name", sorted(TREES))
def test_losses_reduce_to_cross_entropy(name):
    tree = gen_tree(TREES[name])
    top = tree.num_levels - 1
    rng = np.random.default_rng(len(name))
    for _ in range(1000):
        z = rng.normal(scale=3.0, size=tree.num_leaves)
        y = int(rng.integers(tree.num_leaves))
        ce_loss, ce_grad = cross_entropy(z, y)
        for loss, grad in (
            loss_gha(z, y, 1, tree),
            loss_lha(z, y, top, tree),
            loss_nha(z, y, 0, tree, "max"),
            loss_nha(z, y, 0, tree, "exact"),
        ):
            assert abs(loss - ce_loss) <= 1e-12
            assert np.max(np.abs(grad - ce_grad)) <= 1e-12


# ----------------------------------------------------------------- NHA

def test_node_logits_examples():
    tree = gen_tree([2])
    z = np.array([1.0, 2.0])
    assert np.array_equal(node_logits_exact(z, 0, tree), z)
    assert node_logits_exact(z, 1, tree)[0] == pytest.approx(2.31326, abs=1e-5)
    values, winners = node_logits_max(z, 1, tree)
    assert values.tolist() == [2.0] and winners.tolist() == [1]
    values, winners = node_logits_max(np.array([3.0, 3.0]), 1, tree)
    assert winners.tolist() == [0]


def test_equal_logits_give_log_fanout(t1):
    c = 0.7
    assert np.allclose(node_logits_exact(np.full(8, c), 2, t1), c + np.log(4), atol=1e-14)
    loss, _ = loss_nha(np.full(8, c), 3, 1, t1, "max")
    assert loss == pytest.approx(np.log(4), rel=1e-14)
    loss, _ = loss_nha(np.full(8, c), 3, 1, t1, "exact")
    assert loss == pytest.approx(np.log(4), rel=1e-14)


@pytest.mark.parametrize("name", sorted(TREES))
def test_nha_sandwich(name):
    tree = gen_tree(TREES[name])
    rng = np.random.default_rng(7)
    for h in range(1, tree.num_levels):
        log_k = np.log(tree.leaf_counts(h))
        for _ in range(1000 // tree.num_levels):
            z = rng.normal(scale=4.0, size=tree.num_leaves)
            low, _ = node_logits_max(z, h, tree)
            exact = node_logits_exact(z, h, tree)
            assert np.all(low <= exact)
            assert np.all(exact <= low + log_k + 1e-12)
            # node softmax equals summed leaf probabilities
            summed = np.bincount(tree.leaf_ancestors(h), weights=softmax(z), minlength=tree.level_sizes[h])
            assert np.max(np.abs(softmax(exact) - summed)) <= 1e-12


def test_nha_height_range(t1):
    with pytest.raises(HeightOutOfRange):
        loss_nha(np.zeros(8), 0, 3, t1)


# ------------------------------------------------------- gradient oracles

LOSSES = [
    ("ce", lambda z, y, h, t: cross_entropy(z, y), 0),
    ("lha", lambda z, y, h, t: loss_lha(z, y, h, t), 1),
    ("gha", lambda z, y, h, t: loss_gha(z, y, h, t), 1),
    ("nha-max", lambda z, y, h, t: loss_nha(z, y, h, t, "max"), 0),
    ("nha-exact", lambda z, y, h, t: loss_nha(z, y, h, t, "exact"), 0),
]


@pytest.mark.parametrize("label,loss_fn,low", LOSSES, ids=[entry[0] for entry in LOSSES])
def test_logit_gradients_match_finite_differences(t1, label, loss_fn, low):
    rng = np.random.default_rng(11)
    high = t1.num_levels - 1 if label in ("lha", "gha") else t1.num_levels - 2
    for draw in range(100):
        h = int(rng.integers(low, high + 1))
        z = separated_logits(rng, t1, h if label == "nha-max" else 0)
        y = int(rng.integers(8))
        _, analytic = loss_fn(z, y, h, t1)
        numeric = logit_fd(lambda v: loss_fn(v, y, h, t1), z)
        assert scaled_error(analytic, numeric, floor=1.0) < 1e-8, f"draw {draw}, h={h}"


@pytest.mark.parametrize("kind", ["LHA", "GHA", "NHA"])
def test_input_gradient_of_attack_losses(t1, kind):
    rng = np.random.default_rng(13)
    checked = 0
    while checked < 20:
        c = make_classifier(5, 8, 6, 1, rng)
        x = rng.uniform(size=5)
        pre = c.extractor.layers[0].weight @ x + c.extractor.layers[0].bias
        if np.min(np.abs(pre)) < 1e-4:
            continue
        spec = AttackSpec(AttackKind(kind), {"LHA": 2, "GHA": 2, "NHA": 1}[kind], nha_variant="exact")
        y = int(rng.integers(8))
        _, loss_grad = attack_loss(spec, forward(c, x), y, t1)
        analytic = input_gradient(c, x, loss_grad)
        numeric = np.zeros(5)
        for i in range(5):
            up, down = x.copy(), x.copy()
            up[i] += 1e-6
            down[i] -= 1e-6
            numeric[i] = (attack_loss(spec, forward(c, up), y, t1)[0] - attack_loss(spec, forward(c, down), y, t1)[0]) / 2e-6
        assert scaled_error(analytic, numeric, floor=0.1) < 1e-6
        checked += 1


# --------------------------------------------------------------- AttackSpec

def test_spec_validation(t1):
    with pytest.raises(InvalidAttackSpec):
        AttackSpec(AttackKind.LHA, 0).validate(t1)
    with pytest.raises(InvalidAttackSpec):
        AttackSpec(AttackKind.NHA, 3).validate(t1)
    with pytest.raises(InvalidAttackSpec):
        AttackSpec(AttackKind.PGD, eps=-0.1).validate(t1)
    with pytest.raises(InvalidAttackSpec):
        AttackSpec(AttackKind.GHA, 1, steps=0).validate(t1)
    assert AttackSpec(AttackKind.PGD, 5).h == 0
    assert AttackSpec(AttackKind.GHA, 2, steps=10).label == "GHA10@2"


def test_spec_dict_round_trip():
    spec = AttackSpec(AttackKind.NHA, 2, 8 / 255, 2 / 255, 20, "exact")
    assert AttackSpec.from_dict(spec.to_dict()) == spec


# ---------------------------------------------------------------------- PGD

def test_pgd_stays_in_ball_and_box(t1):
    rng = np.random.default_rng(21)
    kinds = [AttackKind.PGD, AttackKind.LHA, AttackKind.GHA, AttackKind.NHA]
    for run in range(200):
        c = make_classifier(6, 8, 8, 1, rng)
        x = rng.uniform(size=6)
        eps = float(rng.choice([0.0, 4 / 255, 8 / 255, 0.3]))
        kind = kinds[run % 4]
        h = {AttackKind.PGD: 0, AttackKind.NHA: int(rng.integers(0, 3))}.get(kind, int(rng.integers(1, 4)))
        spec = AttackSpec(kind, h, eps, 2 / 255, 6)
        seen = []

        def check(t, x_t):
            seen.append(t)
            assert np.max(np.abs(x_t - x)) <= eps + 1e-12
            assert np.all((x_t >= 0.0) & (x_t <= 1.0))

        outcome = pgd(c, x, int(rng.integers(8)), spec, t1, seed=run, on_iterate=check)
        assert seen == list(range(7))
        assert outcome.iterates_checked == 7


def test_zero_budget(t1):
    c = make_classifier(4, 8, 6, 1, np.random.default_rng(3))
    x = np.random.default_rng(4).uniform(size=4)
    y = int(c.predict(x))
    outcome = pgd(c, x, y, AttackSpec(AttackKind.PGD, eps=0.0, steps=5), t1, seed=0)
    assert np.array_equal(outcome.x_adv, x)
    assert not outcome.success
    assert outcome.mistake == 0


def test_constant_logits(t1):
    c = Classifier(Mlp(3, []), LinearHead(np.zeros((8, 3)), np.zeros(8)))
    x = np.array([0.5, 0.5, 0.5])
    spec = AttackSpec(AttackKind.PGD, eps=0.1, alpha=0.05, steps=4)
    first = []
    outcome = pgd(c, x, 0, spec, t1, seed=3, on_iterate=lambda t, x_t: first.append(x_t.copy()))
    # zero gradient: the iterate never moves from the random start
    assert all(np.array_equal(f, first[0]) for f in first)
    assert np.array_equal(outcome.x_adv, first[0])
    assert not outcome.success
    wrong = pgd(c, x, 5, spec, t1, seed=3)
    assert wrong.success and wrong.adv_prediction == 0 and wrong.mistake == 3


def test_gha_at_one_repeats_pgd(t1):
    rng = np.random.default_rng(31)
    for trial in range(10):
        c = make_classifier(5, 8, 8, 1, rng)
        x = rng.uniform(size=5)
        y = int(rng.integers(8))
        runs = []
        for spec in (
            AttackSpec(AttackKind.PGD, 0, 0.2, 0.02, 15),
            AttackSpec(AttackKind.GHA, 1, 0.2, 0.02, 15),
            AttackSpec(AttackKind.LHA, 3, 0.2, 0.02, 15),
        ):
            iterates = []
            outcome = pgd(c, x, y, spec, t1, seed=trial, on_iterate=lambda t, x_t: iterates.append(x_t.copy()))
            runs.append((iterates, outcome))
        base_iterates, base = runs[0]
        for iterates, outcome in runs[1:]:
            assert all(np.array_equal(a, b) for a, b in zip(iterates, base_iterates))
            assert np.array_equal(outcome.x_adv, base.x_adv)
            assert (outcome.success, outcome.adv_prediction, outcome.mistake) == (base.success, base.adv_prediction, base.mistake)


def test_worst_iterate_dominates_final(t1):
    rng = np.random.default_rng(41)
    for trial in range(30):
        c = make_classifier(5, 8, 8, 1, rng)
        x = rng.uniform(size=5)
        outcome = pgd(c, x, int(rng.integers(8)), AttackSpec(AttackKind.NHA, 2, 0.3, 0.05, 10), t1, seed=trial)
        assert outcome.mistake >= outcome.final_mistake
        assert outcome.success == (outcome.mistake > 0)
        if outcome.final_success:
            assert outcome.success


def test_degenerate_instance_counts_as_robust():
    tree = build(3, [(0, 0, 0), (0, 1, 1), (1, 0, 0), (1, 1, 0)])
    c = make_classifier(3, 2, 4, 1, np.random.default_rng(0))
    outcome = pgd(c, np.full(3, 0.5), 0, AttackSpec(AttackKind.LHA, 1, 0.1), tree, seed=0)
    assert outcome.degenerate
    assert not outcome.success
    assert outcome.iterates_checked == 0


def test_head_must_cover_leaves(t1):
    c = make_classifier(3, 4, 4, 1)
    with pytest.raises(HeadSizeMismatch):
        pgd(c, np.zeros(3), 0, AttackSpec(AttackKind.PGD), t1, seed=0)


def test_pgd_is_reproducible(t1):
    c = make_classifier(5, 8, 8, 1, np.random.default_rng(2))
    x = np.random.default_rng(3).uniform(size=5)
    spec = AttackSpec(AttackKind.GHA, 2, 0.2, 0.02, 10)
    a = pgd(c, x, 1, spec, t1, seed=np.random.SeedSequence([5, 1]))
    b = pgd(c, x, 1, spec, t1, seed=np.random.SeedSequence([5, 1]))
    assert np.array_equal(a.x_adv, b.x_adv)
    assert a.mistake == b.mistake
