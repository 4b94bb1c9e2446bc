"""
Tests for the stratified label tree: construction errors, distance, transitions and masks
"""

import itertools
import json

import numpy as np
import pytest

from hierbench.errors import (
    ConflictingParent,
    CycleDetected,
    HeightOutOfRange,
    MultipleRoots,
    NotALeaf,
    OrphanNode,
    UnbalancedLeaves,
)
from hierbench.hierarchy import NodeRef, build, from_parent_map, load_tree, save_tree
from hierbench.synthdata import gen_tree


def small_branchings():
    """Every branching list of length 1..3 over {2, 3, 4} with at most 64 leaves"""
    for length in (1, 2, 3):
        for branching in itertools.product((2, 3, 4), repeat=length):
            if int(np.prod(branching)) <= 64:
                yield list(branching)


SMALL_TREES = list(small_branchings())


def distance_table(hierarchy):
    n = hierarchy.num_leaves
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return hierarchy.hdist_many(a.ravel(), b.ravel()).reshape(n, n)


# ------------------------------------------------------------------ construction

def test_two_level_tree():
    tree = build(2, [(0, 0, 0), (0, 1, 0), (0, 2, 0)])
    assert tree.num_levels == 2
    assert tree.level_sizes == [3, 1]


def test_binary_tree_sizes(t1):
    assert t1.num_levels == 4
    assert t1.level_sizes == [8, 4, 2, 1]
    assert t1.is_uniform()
    assert t1.max_fanout() == 2


def test_leaf_above_height_zero_is_unbalanced():
    with pytest.raises(UnbalancedLeaves) as info:
        build(3, [(0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0)])
    assert NodeRef(1, 1) in info.value.nodes


def test_unbalanced_parent_map():
    with pytest.raises(UnbalancedLeaves):
        from_parent_map({"root": None, "a": "root", "b": "root", "a1": "a"})


def test_two_roots():
    with pytest.raises(MultipleRoots):
        build(2, [(0, 0, 0), (0, 1, 1)])
    with pytest.raises(MultipleRoots):
        from_parent_map({"r1": None, "r2": None, "x": "r1"})


def test_missing_parent_edge():
    with pytest.raises(OrphanNode):
        build(3, [(0, 0, 0), (0, 2, 0), (1, 0, 0)])


def test_conflicting_parent():
    with pytest.raises(ConflictingParent):
        build(2, [(0, 0, 0), (0, 0, 1)])


def test_cycle():
    with pytest.raises(CycleDetected):
        from_parent_map({"a": "b", "b": "a", "r": None})


def test_parent_map_orders_siblings_contiguously():
    tree = from_parent_map({
        "animal": None,
        "bird": "animal",
        "cat": "animal",
        "sparrow": "bird",
        "owl": "bird",
        "lion": "cat",
        "lynx": "cat",
    })
    assert tree.level_sizes == [4, 2, 1]
    leaves = [tree.name_of(NodeRef(0, i)) for i in range(4)]
    assert leaves == ["owl", "sparrow", "lion", "lynx"]
    assert tree.hdist(0, 1) == 1
    assert tree.hdist(1, 2) == 2


def test_save_and_load(tmp_path, t1):
    path = save_tree(t1, tmp_path / "tree.json")
    again = load_tree(path)
    assert again.level_sizes == t1.level_sizes
    assert again.edges() == t1.edges()

    parents_file = tmp_path / "parents.json"
    parents_file.write_text(json.dumps({"parents": {"r": None, "x": "r", "y": "r"}}))
    assert load_tree(parents_file).level_sizes == [2, 1]


# -------------------------------------------------------------------- examples

def test_offspring_of_root(t1):
    assert t1.offspring(t1.root, 0) == frozenset(NodeRef(0, i) for i in range(8))


def test_offspring_of_leaf_rejected(t1):
    with pytest.raises(HeightOutOfRange):
        t1.offspring(NodeRef(0, 3), 0)


def test_ancestor_at(t1):
    assert t1.ancestor_at(5, 2) == NodeRef(2, 1)
    assert t1.ancestor_at(5, 0) == NodeRef(0, 5)
    assert t1.ancestor_at(5, 3) == t1.root


def test_hdist_examples(t1):
    assert t1.hdist(0, 1) == 1
    assert t1.hdist(0, 2) == 2
    assert t1.hdist(0, 4) == 3
    assert t1.hdist(6, 6) == 0
    with pytest.raises(NotALeaf):
        t1.hdist(NodeRef(1, 0), 0)


def test_masks(t1):
    assert t1.lower_mask(0, 1).tolist() == [0, 1]
    assert t1.lower_mask(0, 2).tolist() == [0, 1, 2, 3]
    assert t1.greater_mask(0, 2).tolist() == [0, 2, 3, 4, 5, 6, 7]
    assert t1.greater_mask(0, 3).tolist() == [0, 4, 5, 6, 7]
    assert t1.greater_mask(0, 1).tolist() == list(range(8))
    assert t1.lower_mask(0, 3).tolist() == list(range(8))


def test_masks_are_read_only(t1):
    mask = t1.lower_mask(2, 2)
    with pytest.raises(ValueError):
        mask[0] = 7
    assert t1.lower_mask(2, 2) is mask


def test_mask_height_range(t1):
    with pytest.raises(HeightOutOfRange):
        t1.lower_mask(0, 0)
    with pytest.raises(HeightOutOfRange):
        t1.greater_mask(0, 4)


# ------------------------------------------------------------ exhaustive laws

@pytest.mark.parametrize("branching", SMALL_TREES, ids=lambda b: "x".join(map(str, b)))
def test_distance_is_an_ultrametric(branching):
    tree = gen_tree(branching)
    d = distance_table(tree)
    n = tree.num_leaves

    assert np.array_equal(d, d.T)
    assert np.all(np.diag(d) == 0)
    assert np.all(d[~np.eye(n, dtype=bool)] >= 1)
    assert d.max() == tree.num_levels - 1
    # d(a, c) <= max(d(a, b), d(b, c)) for every triple
    assert np.all(d[:, None, :] <= np.maximum(d[:, :, None], d[None, :, :]))

    for a, b in itertools.combinations(range(n), 2):
        assert tree.hdist(a, b) == d[a, b]


@pytest.mark.parametrize("branching", SMALL_TREES, ids=lambda b: "x".join(map(str, b)))
def test_transition_properties(branching):
    tree = gen_tree(branching)
    for h in range(1, tree.num_levels):
        for target in range(h):
            everything = frozenset(NodeRef(target, i) for i in range(tree.level_sizes[target]))
            covered = frozenset()
            total = 0
            for j in range(tree.level_sizes[h]):
                below = tree.offspring(NodeRef(h, j), target)
                assert below
                total += len(below)
                covered |= below
            # cover, and disjoint because the sizes add up
            assert covered == everything
            assert total == len(everything)


@pytest.mark.parametrize("branching", SMALL_TREES, ids=lambda b: "x".join(map(str, b)))
def test_masks_match_distance(branching):
    tree = gen_tree(branching)
    d = distance_table(tree)
    leaves = set(range(tree.num_leaves))
    for y in range(tree.num_leaves):
        for h in range(1, tree.num_levels):
            lower = set(tree.lower_mask(y, h).tolist())
            greater = set(tree.greater_mask(y, h).tolist())
            assert lower == {j for j in leaves if d[y, j] <= h}
            assert greater == {k for k in leaves if d[y, k] >= h} | {y}
            if h >= 2:
                below = set(tree.lower_mask(y, h - 1).tolist())
                assert below & greater == {y}
                assert below | greater == leaves


@pytest.mark.parametrize("branching", SMALL_TREES, ids=lambda b: "x".join(map(str, b)))
def test_coarsen_follows_ancestors(branching):
    tree = gen_tree(branching)
    labels = np.arange(tree.num_leaves)
    for h in range(tree.num_levels):
        coarse = tree.coarsen(labels, h)
        assert coarse.tolist() == [tree.ancestor_at(int(l), h).index for l in labels]
        groups = tree.leaf_groups(h)
        assert sum(len(g) for g in groups) == tree.num_leaves
        assert np.array_equal(tree.leaf_counts(h), [len(g) for g in groups])
