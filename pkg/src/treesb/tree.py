"""Finite binary-tree topologies for stick-breaking.

Nodes are identified by bit strings read from the root: 0 = left child,
1 = right child, with the empty string denoting the root.  A topology is a
complete binary tree given as its internal-node and leaf sets; the lopsided
tree (only the right piece keeps breaking) and the balanced tree (every
piece at every level breaks) are the two constructions used by the samplers.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "NodeId",
    "ROOT",
    "TreeKind",
    "TreeTopology",
    "build_lopsided",
    "build_balanced",
    "build_custom",
    "ancestors",
    "is_left_descendant",
    "adjacent_leaf_pairs",
    "choose_num_leaves",
    "TreeIndex",
    "tree_index",
]


@dataclass(frozen=True, order=True)
class NodeId:
    """A tree node addressed by its root-to-node bit path."""

    bits: tuple[int, ...] = ()

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"node bits must be 0/1, got {self.bits!r}")

    @property
    def level(self) -> int:
        return len(self.bits)

    @property
    def parent(self) -> "NodeId":
        if not self.bits:
            raise ValueError("root has no parent")
        return NodeId(self.bits[:-1])

    def child(self, side: int) -> "NodeId":
        return NodeId(self.bits + (side,))

    def is_prefix_of(self, other: "NodeId") -> bool:
        return self.bits == other.bits[: len(self.bits)]

    def serialize(self) -> str:
        """Bit-string form used in all file outputs; the root is ``"root"``."""
        return "".join(map(str, self.bits)) if self.bits else "root"

    @staticmethod
    def parse(text: str) -> "NodeId":
        if text == "root":
            return ROOT
        if not text or any(c not in "01" for c in text):
            raise ValueError(f"not a node id: {text!r}")
        return NodeId(tuple(int(c) for c in text))

    def __repr__(self):
        return f"NodeId({self.serialize()})"


ROOT = NodeId(())


class TreeKind(enum.Enum):
    LOPSIDED = "lopsided"
    BALANCED = "balanced"
    CUSTOM = "custom"


@dataclass(frozen=True)
class TreeTopology:
    """A finite rooted binary tree with every internal node fully split.

    Invariants checked at construction: internal nodes and leaves are
    disjoint, every non-root node's parent is internal, every internal node
    has both children present, ``|leaves| == |internal| + 1``, and balanced
    trees have all leaves at level ``log2(K)``.
    """

    internal_nodes: frozenset[NodeId]
    leaves: frozenset[NodeId]
    kind: TreeKind

    def __post_init__(self):
        internal, leaves = self.internal_nodes, self.leaves
        if not leaves:
            raise ValueError("a tree needs at least one leaf")
        if internal & leaves:
            raise ValueError("internal nodes and leaves must be disjoint")
        if len(leaves) != len(internal) + 1:
            raise ValueError("binary-tree identity |leaves| = |internal|+1 violated")
        members = internal | leaves
        for node in members:
            if node.bits and node.parent not in internal:
                raise ValueError(f"parent of {node!r} is not an internal node")
        for node in internal:
            for side in (0, 1):
                if node.child(side) not in members:
                    raise ValueError(f"internal node {node!r} is missing child {side}")
        if self.kind is TreeKind.BALANCED:
            k = len(leaves)
            m = k.bit_length() - 1
            if 2**m != k or any(leaf.level != m for leaf in leaves):
                raise ValueError("balanced tree requires 2^m equal-level leaves")

    @property
    def num_leaves(self) -> int:
        return len(self.leaves)

    @property
    def leaf_order(self) -> tuple[NodeId, ...]:
        """Canonical leaf ordering (lexicographic on bits).

        For the lopsided tree this is the stick-breaking order W_1..W_K;
        for the balanced tree it is the natural binary-counter order.
        """
        return tuple(sorted(self.leaves, key=lambda n: n.bits))

    @property
    def internal_order(self) -> tuple[NodeId, ...]:
        """Breadth-first ordering of the internal nodes."""
        return tuple(sorted(self.internal_nodes, key=lambda n: (n.level, n.bits)))

    @property
    def depth(self) -> int:
        return max(leaf.level for leaf in self.leaves)


def build_lopsided(num_leaves: int) -> TreeTopology:
    """Build the traditional single-piece stick-breaking tree.

    Every internal node's left child is a leaf; the right spine keeps
    splitting, so leaf k sits at level k for k < K and the final remainder
    leaf at level K-1.
    """
    if num_leaves < 1:
        raise ValueError("num_leaves must be >= 1")
    if num_leaves == 1:
        return TreeTopology(frozenset(), frozenset({ROOT}), TreeKind.LOPSIDED)
    internal = [NodeId((1,) * j) for j in range(num_leaves - 1)]
    leaves = [node.child(0) for node in internal]
    leaves.append(NodeId((1,) * (num_leaves - 1)))
    return TreeTopology(frozenset(internal), frozenset(leaves), TreeKind.LOPSIDED)


def build_balanced(num_leaves: int) -> TreeTopology:
    """Build the balanced tree with all leaves at level log2(K)."""
    if num_leaves < 1:
        raise ValueError("num_leaves must be >= 1")
    m = num_leaves.bit_length() - 1
    if 2**m != num_leaves:
        raise ValueError(f"balanced tree needs a power-of-two leaf count, got {num_leaves}")
    leaves = [NodeId(bits) for bits in itertools.product((0, 1), repeat=m)]
    internal = [
        NodeId(bits) for lev in range(m) for bits in itertools.product((0, 1), repeat=lev)
    ]
    return TreeTopology(frozenset(internal), frozenset(leaves), TreeKind.BALANCED)


def build_custom(leaves) -> TreeTopology:
    """Build a topology from an explicit leaf set, validating completeness.

    Accepted by the weight computations but not by the sampler, which only
    handles the lopsided and balanced constructions.
    """
    items = list(leaves)
    leaf_set = frozenset(
        item if isinstance(item, NodeId) else NodeId.parse(item) for item in items
    )
    internal = frozenset(
        NodeId(leaf.bits[:j]) for leaf in leaf_set for j in range(leaf.level)
    )
    return TreeTopology(internal, leaf_set, TreeKind.CUSTOM)


def ancestors(topology: TreeTopology, leaf: NodeId) -> list[NodeId]:
    """Root-to-parent path of ``leaf``; its length equals the leaf level."""
    if leaf not in topology.leaves:
        raise KeyError(f"{leaf!r} is not a leaf of this tree")
    return [NodeId(leaf.bits[:j]) for j in range(leaf.level)]


def is_left_descendant(topology: TreeTopology, node: NodeId, leaf: NodeId) -> bool:
    """True iff ``leaf`` lies in the subtree under the left child of ``node``."""
    if node not in topology.internal_nodes:
        raise ValueError(f"{node!r} is not an internal node")
    if leaf not in topology.leaves:
        raise KeyError(f"{leaf!r} is not a leaf of this tree")
    prefix = node.bits + (0,)
    return leaf.bits[: len(prefix)] == prefix


def adjacent_leaf_pairs(topology: TreeTopology) -> set[frozenset[NodeId]]:
    """Leaf pairs between which label switching has the least friction.

    Balanced tree: pairs sharing a parent (K/2 pairs).  Lopsided tree: pairs
    separated by at most one tree level.  Adjacency is not defined for
    custom topologies.
    """
    leaves = topology.leaf_order
    if topology.kind is TreeKind.BALANCED:
        return {
            frozenset((a, b))
            for a, b in itertools.combinations(leaves, 2)
            if a.bits[:-1] == b.bits[:-1]
        }
    if topology.kind is TreeKind.LOPSIDED:
        return {
            frozenset((a, b))
            for a, b in itertools.combinations(leaves, 2)
            if abs(a.level - b.level) <= 1
        }
    raise ValueError("adjacency is defined only for lopsided/balanced trees")


def choose_num_leaves(expected_clusters: int) -> int:
    """Smallest power of two at least twice the expected cluster count."""
    if expected_clusters < 1:
        raise ValueError("expected_clusters must be >= 1")
    return 1 << (2 * expected_clusters - 1).bit_length()


class TreeIndex:
    """Array form of a topology for vectorized weight computation.

    Attributes
    ----------
    leaf_order, internal_order : node tuples (canonical orders)
    anc_idx : (K, depth) int array; ``anc_idx[k, l]`` is the internal-order
        index of leaf k's level-l ancestor, -1 once past the leaf's level.
    anc_side : (K, depth) int array; the bit taken after each ancestor
        (0 = left, 1 = right), -1 padding.
    depths : (K,) leaf levels.
    desc_mask, left_mask : (n_internal, K) bool arrays marking which leaves
        descend from each internal node, and which via its left child.
    """

    def __init__(self, topology: TreeTopology):
        self.topology = topology
        self.leaf_order = topology.leaf_order
        self.internal_order = topology.internal_order
        self.leaf_pos = {leaf: i for i, leaf in enumerate(self.leaf_order)}
        self.internal_pos = {node: i for i, node in enumerate(self.internal_order)}
        K = len(self.leaf_order)
        depth = topology.depth
        self.depths = np.array([leaf.level for leaf in self.leaf_order], dtype=np.int64)
        self.anc_idx = np.full((K, max(depth, 1)), -1, dtype=np.int64)
        self.anc_side = np.full((K, max(depth, 1)), -1, dtype=np.int64)
        for k, leaf in enumerate(self.leaf_order):
            for lev in range(leaf.level):
                self.anc_idx[k, lev] = self.internal_pos[NodeId(leaf.bits[:lev])]
                self.anc_side[k, lev] = leaf.bits[lev]
        n_int = len(self.internal_order)
        self.desc_mask = np.zeros((max(n_int, 1), K), dtype=bool)
        self.left_mask = np.zeros((max(n_int, 1), K), dtype=bool)
        for j, node in enumerate(self.internal_order):
            for k, leaf in enumerate(self.leaf_order):
                if node.is_prefix_of(leaf):
                    self.desc_mask[j, k] = True
                    if leaf.bits[node.level] == 0:
                        self.left_mask[j, k] = True

    @property
    def num_leaves(self) -> int:
        return len(self.leaf_order)

    @property
    def num_internal(self) -> int:
        return len(self.internal_order)


@lru_cache(maxsize=64)
def tree_index(topology: TreeTopology) -> TreeIndex:
    return TreeIndex(topology)
