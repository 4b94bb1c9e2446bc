#!/usr/bin/env python3
"""
Stratified label tree for hierbench
Holds the strata Y_0 (leaves) .. Y_{H-1} (root), the transition maps between
strata, the hierarchical distance d_H and the leaf masks used by the attacks.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    ConflictingParent,
    CycleDetected,
    HeightOutOfRange,
    MultipleRoots,
    NotALeaf,
    OrphanNode,
    UnbalancedLeaves,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class NodeRef:
    height: int
    index: int

    def key(self) -> str:
        return f"{self.height}:{self.index}"


LeafLike = Union[NodeRef, int, np.integer]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class Hierarchy:
    """Balanced label tree; immutable once built (use `build` or `from_parent_map`)"""

    def __init__(self, num_levels: int, parents: Sequence[np.ndarray], names: Optional[Dict[str, str]] = None):
        self.num_levels = num_levels
        self._parents = [_frozen(np.asarray(p, dtype=np.int64).copy()) for p in parents]
        self.level_sizes = [len(p) for p in self._parents] + [1]
        self.names = dict(names or {})

        # _children[h][j]: indices at h-1 under node j at height h
        self._children: List[List[np.ndarray]] = [[]]
        for h in range(1, num_levels):
            below = self._parents[h - 1]
            self._children.append([_frozen(np.flatnonzero(below == j)) for j in range(self.level_sizes[h])])

        # _ancestry[h, leaf] = index of the leaf's ancestor at height h
        table = np.empty((num_levels, self.level_sizes[0]), dtype=np.int64)
        table[0] = np.arange(self.level_sizes[0])
        for h in range(1, num_levels):
            table[h] = self._parents[h - 1][table[h - 1]]
        self._ancestry = _frozen(table)

        self._mask_cache: Dict[Tuple[str, int, int], np.ndarray] = {}
        self._group_cache: Dict[int, List[np.ndarray]] = {}

    # ------------------------------------------------------------------ basics

    @property
    def num_leaves(self) -> int:
        return self.level_sizes[0]

    @property
    def root(self) -> NodeRef:
        return NodeRef(self.num_levels - 1, 0)

    def check_node(self, node: NodeRef) -> NodeRef:
        if not 0 <= node.height < self.num_levels:
            raise HeightOutOfRange(f"Height {node.height} outside [0, {self.num_levels - 1}]")
        if not 0 <= node.index < self.level_sizes[node.height]:
            raise HeightOutOfRange(
                f"Index {node.index} outside stratum {node.height} of size {self.level_sizes[node.height]}"
            )
        return node

    def _check_height(self, h: int, low: int, high: int, what: str) -> None:
        if not low <= h <= high:
            raise HeightOutOfRange(f"{what}: height {h} outside [{low}, {high}]")

    def _leaf_index(self, leaf: LeafLike) -> int:
        if isinstance(leaf, NodeRef):
            if leaf.height != 0:
                raise NotALeaf(f"Node {leaf.key()} is not a leaf")
            index = leaf.index
        else:
            index = int(leaf)
        if not 0 <= index < self.num_leaves:
            raise NotALeaf(f"Leaf index {index} outside [0, {self.num_leaves - 1}]")
        return index

    def parent_of(self, node: NodeRef) -> NodeRef:
        self.check_node(node)
        if node.height == self.num_levels - 1:
            raise HeightOutOfRange("The root has no parent")
        return NodeRef(node.height + 1, int(self._parents[node.height][node.index]))

    def parent_indices(self, height: int) -> np.ndarray:
        """Parent index (at height+1) of every node at `height`"""
        self._check_height(height, 0, self.num_levels - 2, "parent_indices")
        return self._parents[height]

    def children(self, node: NodeRef) -> np.ndarray:
        self.check_node(node)
        if node.height == 0:
            raise HeightOutOfRange("Leaves have no children")
        return self._children[node.height][node.index]

    def fanouts(self, height: int) -> np.ndarray:
        """Child count of each node at `height` (>= 1)"""
        self._check_height(height, 1, self.num_levels - 1, "fanouts")
        return np.array([len(c) for c in self._children[height]], dtype=np.int64)

    def leaf_counts(self, height: int) -> np.ndarray:
        """Number of leaf offspring of each node at `height`"""
        self._check_height(height, 0, self.num_levels - 1, "leaf_counts")
        return np.bincount(self._ancestry[height], minlength=self.level_sizes[height])

    def max_fanout(self) -> int:
        return max(int(self.fanouts(h).max()) for h in range(1, self.num_levels))

    def is_uniform(self) -> bool:
        """True when all nodes of each stratum have the same fan-out"""
        return all(len(set(self.fanouts(h).tolist())) == 1 for h in range(1, self.num_levels))

    # ------------------------------------------------------------- transitions

    def offspring(self, node: NodeRef, target_height: int) -> frozenset:
        """C_{h,h'}(node): all descendants of `node` at stratum h' < node.height"""
        indices = self.offspring_indices(node, target_height)
        return frozenset(NodeRef(target_height, int(i)) for i in indices)

    def offspring_indices(self, node: NodeRef, target_height: int) -> np.ndarray:
        self.check_node(node)
        if not 0 <= target_height < node.height:
            raise HeightOutOfRange(
                f"offspring of {node.key()} requested at height {target_height}; need 0 <= h' < {node.height}"
            )
        frontier = np.array([node.index], dtype=np.int64)
        for h in range(node.height, target_height, -1):
            frontier = np.concatenate([self._children[h][j] for j in frontier])
        return np.sort(frontier)

    def ancestor_at(self, leaf: LeafLike, height: int) -> NodeRef:
        index = self._leaf_index(leaf)
        self._check_height(height, 0, self.num_levels - 1, "ancestor_at")
        return NodeRef(height, int(self._ancestry[height, index]))

    def leaf_ancestors(self, height: int) -> np.ndarray:
        """Ancestor index at `height` for every leaf (read-only)"""
        self._check_height(height, 0, self.num_levels - 1, "leaf_ancestors")
        return self._ancestry[height]

    def coarsen(self, leaf_labels: np.ndarray, height: int) -> np.ndarray:
        """Relabel leaf labels to their ancestors at `height`"""
        return self.leaf_ancestors(height)[np.asarray(leaf_labels, dtype=np.int64)]

    def leaf_groups(self, height: int) -> List[np.ndarray]:
        """Sorted leaf offspring of every node at `height`"""
        self._check_height(height, 0, self.num_levels - 1, "leaf_groups")
        groups = self._group_cache.get(height)
        if groups is None:
            anc = self._ancestry[height]
            groups = [_frozen(np.flatnonzero(anc == j)) for j in range(self.level_sizes[height])]
            groups = self._group_cache.setdefault(height, groups)
        return groups

    # ---------------------------------------------------------------- distance

    def hdist(self, a: LeafLike, b: LeafLike) -> int:
        """Height of the least common ancestor of two leaves"""
        i, j = self._leaf_index(a), self._leaf_index(b)
        h = 0
        while i != j:
            i = self._parents[h][i]
            j = self._parents[h][j]
            h += 1
        return h

    def hdist_many(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Elementwise d_H for aligned arrays of leaf indices"""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        if a.size and (a.min() < 0 or a.max() >= self.num_leaves or b.min() < 0 or b.max() >= self.num_leaves):
            raise NotALeaf("hdist_many received indices outside the leaf stratum")
        same = self._ancestry[:, a] == self._ancestry[:, b]
        # the root row is always equal, so argmax finds the LCA height
        return np.argmax(same, axis=0).astype(np.int64)

    # ------------------------------------------------------------------- masks

    def _lower(self, y: int, h: int) -> np.ndarray:
        key = ("lower", y, h)
        mask = self._mask_cache.get(key)
        if mask is None:
            anc = self._ancestry[h]
            mask = self._mask_cache.setdefault(key, _frozen(np.flatnonzero(anc == anc[y])))
        return mask

    def lower_mask(self, y: LeafLike, h: int) -> np.ndarray:
        """Leaves j with d_H(y, j) <= h, sorted"""
        index = self._leaf_index(y)
        self._check_height(h, 1, self.num_levels - 1, "lower_mask")
        return self._lower(index, h)

    def greater_mask(self, y: LeafLike, h: int) -> np.ndarray:
        """Leaves k with d_H(y, k) >= h, plus y itself, sorted"""
        index = self._leaf_index(y)
        self._check_height(h, 1, self.num_levels - 1, "greater_mask")
        key = ("greater", index, h)
        mask = self._mask_cache.get(key)
        if mask is None:
            anc = self._ancestry[h - 1]
            keep = anc != anc[index]
            keep[index] = True
            mask = self._mask_cache.setdefault(key, _frozen(np.flatnonzero(keep)))
        return mask

    # ------------------------------------------------------------ reporting/io

    def validation_report(self) -> Dict:
        """Summary of the tree shape"""
        return {
            "num_levels": self.num_levels,
            "level_sizes": list(self.level_sizes),
            "num_leaves": self.num_leaves,
            "max_fanout": self.max_fanout(),
            "uniform_fanout": self.is_uniform(),
            "named_nodes": len(self.names),
        }

    def edges(self) -> List[List[int]]:
        return [
            [h, i, int(p)]
            for h in range(self.num_levels - 1)
            for i, p in enumerate(self._parents[h])
        ]

    def to_dict(self) -> Dict:
        data = {"num_levels": self.num_levels, "edges": self.edges()}
        if self.names:
            data["names"] = dict(sorted(self.names.items()))
        return data

    def name_of(self, node: NodeRef) -> str:
        return self.names.get(node.key(), node.key())

    def __repr__(self) -> str:
        return f"Hierarchy(num_levels={self.num_levels}, level_sizes={self.level_sizes})"


def build(num_levels: int, parent_edges: Iterable[Sequence[int]], names: Optional[Mapping[str, str]] = None) -> Hierarchy:
    """Validate stratified (height, index, parent_index) edges and build the tree"""
    if num_levels < 2:
        raise HeightOutOfRange(f"num_levels must be >= 2, got {num_levels}")

    by_height: List[Dict[int, int]] = [dict() for _ in range(num_levels - 1)]
    for edge in parent_edges:
        height, index, parent_index = (int(v) for v in edge)
        if not 0 <= height < num_levels - 1:
            raise HeightOutOfRange(f"Edge {list(edge)} has height outside [0, {num_levels - 2}]")
        if index < 0 or parent_index < 0:
            raise OrphanNode(f"Edge {list(edge)} has a negative index", [NodeRef(height, index)])
        known = by_height[height].get(index)
        if known is not None and known != parent_index:
            raise ConflictingParent(
                f"Node {height}:{index} listed with parents {known} and {parent_index}",
                [NodeRef(height, index)],
            )
        by_height[height][index] = parent_index

    roots = sorted(set(by_height[-1].values()))
    if len(roots) > 1:
        raise MultipleRoots(
            f"Stratum {num_levels - 1} must hold one root, found {len(roots)}: {roots}",
            [NodeRef(num_levels - 1, r) for r in roots],
        )
    if roots and roots != [0]:
        raise OrphanNode(f"Root must have index 0, found {roots[0]}", [NodeRef(num_levels - 1, roots[0])])

    parents = []
    referenced_here: set = set()  # indices at height h named as parents by stratum h-1
    for h in range(num_levels - 1):
        mapping = by_height[h]
        declared = set(mapping)
        size = max(max(declared, default=-1), max(referenced_here, default=-1)) + 1

        missing = sorted(set(range(size)) - declared)
        if missing:
            raise OrphanNode(
                f"Nodes at height {h} have no parent edge: {missing}",
                [NodeRef(h, i) for i in missing],
            )
        if h > 0:
            childless = sorted(declared - referenced_here)
            if childless:
                raise UnbalancedLeaves(
                    f"Nodes at height {h} have no children (leaves above height 0): {childless}",
                    [NodeRef(h, i) for i in childless],
                )
        if size == 0:
            raise UnbalancedLeaves(f"Stratum {h} is empty", [])
        parents.append(np.array([mapping[i] for i in range(size)], dtype=np.int64))
        referenced_here = set(mapping.values())

    hierarchy = Hierarchy(num_levels, parents, dict(names or {}))
    logger.debug(f"Built {hierarchy}")
    return hierarchy


def from_parent_map(parent_map: Mapping[str, Optional[str]]) -> Hierarchy:
    """Build a stratified tree from a name-keyed child -> parent map (root maps to None)"""
    nodes = set(parent_map) | {p for p in parent_map.values() if p is not None}

    depth: Dict[str, int] = {}
    for node in sorted(nodes, key=str):
        chain: List[str] = []
        current: Optional[str] = node
        while current is not None and current not in depth:
            if current in chain:
                cycle = chain[chain.index(current):]
                raise CycleDetected(f"Parent chain loops through {cycle}", cycle)
            chain.append(current)
            current = parent_map.get(current)
        base = -1 if current is None else depth[current]
        for offset, name in enumerate(reversed(chain), start=1):
            depth[name] = base + offset

    roots = sorted((n for n in nodes if parent_map.get(n) is None), key=str)
    if len(roots) != 1:
        raise MultipleRoots(f"Expected one root, found {roots}", roots)

    has_child = {p for p in parent_map.values() if p is not None}
    leaf_depths = {depth[n] for n in nodes if n not in has_child}
    if len(leaf_depths) != 1:
        shallow = sorted((n for n in nodes if n not in has_child and depth[n] < max(leaf_depths)), key=str)
        raise UnbalancedLeaves(f"Leaves sit at depths {sorted(leaf_depths)}; shallow leaves: {shallow}", shallow)

    num_levels = leaf_depths.pop() + 1
    # order each stratum by (parent index, name) so siblings are contiguous
    index_of: Dict[str, int] = {roots[0]: 0}
    by_depth: Dict[int, List[str]] = {}
    for name in nodes:
        by_depth.setdefault(depth[name], []).append(name)
    edges, names = [], {f"{num_levels - 1}:0": str(roots[0])}
    for d in range(1, num_levels):
        height = num_levels - 1 - d
        ordered = sorted(by_depth[d], key=lambda n: (index_of[parent_map[n]], str(n)))
        for i, name in enumerate(ordered):
            index_of[name] = i
            edges.append((height, i, index_of[parent_map[name]]))
            names[f"{height}:{i}"] = str(name)
    return build(num_levels, edges, names)


def load_tree(path: Union[str, Path]) -> Hierarchy:
    """Load a tree file: {"num_levels", "edges", "names"} or {"parents": {child: parent}}"""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if "edges" in data:
        return build(int(data["num_levels"]), data["edges"], data.get("names"))
    if "parents" in data:
        return from_parent_map(data["parents"])
    raise OrphanNode(f"Tree file {path} has neither 'edges' nor 'parents'", [])


def save_tree(hierarchy: Hierarchy, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(hierarchy.to_dict(), f, indent=2)
        f.write("\n")
    return path
