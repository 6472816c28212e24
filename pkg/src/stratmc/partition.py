"""Dyadic hierarchical partitioning of [0,1] with per-node sample logs.

Nodes are addressed by (depth h, index i); the stratum of node (h, i) is the
interval [i * 2^-h, (i+1) * 2^-h) and all strata at depth h have measure
2^-h.  Every drawn sample (x, value) is logged, in arrival order, at every
materialized node whose interval contains x, so prefix statistics are well
defined at any depth even for nodes created after the samples were drawn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigError, DepthLimitError, InsufficientDataError, InvariantError

__all__ = [
    "NodeId",
    "NodeStats",
    "PartitionTree",
    "Cut",
    "t_threshold",
    "sigma_hat",
    "sigma_tilde",
    "enumerate_cuts",
]


@dataclass(frozen=True, order=True)
class NodeId:
    """Tree address (depth, index) of the stratum [i * 2^-h, (i+1) * 2^-h)."""

    depth: int
    index: int

    def __post_init__(self):
        if self.depth < 0 or not 0 <= self.index < (1 << self.depth):
            raise ConfigError(f"invalid node address ({self.depth},{self.index})")
        # Node ids key every per-draw dict access; cache the hash.
        object.__setattr__(self, "_hash", hash((self.index << 6) | self.depth))

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if other.__class__ is not NodeId:
            return NotImplemented
        return self.depth == other.depth and self.index == other.index

    @property
    def weight(self) -> float:
        return math.ldexp(1.0, -self.depth)

    @property
    def low(self) -> float:
        return self.index * math.ldexp(1.0, -self.depth)

    @property
    def high(self) -> float:
        return (self.index + 1) * math.ldexp(1.0, -self.depth)

    @property
    def mid(self) -> float:
        return (2 * self.index + 1) * math.ldexp(1.0, -(self.depth + 1))

    def children(self) -> tuple["NodeId", "NodeId"]:
        return (_fast_node(self.depth + 1, 2 * self.index),
                _fast_node(self.depth + 1, 2 * self.index + 1))

    def parent(self) -> "NodeId":
        if self.depth == 0:
            raise ConfigError("root has no parent")
        return NodeId(self.depth - 1, self.index // 2)

    def contains(self, x: float) -> bool:
        return self.low <= x < self.high or (x == 1.0 and self.high == 1.0)

    def ancestors(self) -> list["NodeId"]:
        """Chain from the root down to this node, inclusive."""
        chain = [self]
        node = self
        while node.depth > 0:
            node = node.parent()
            chain.append(node)
        chain.reverse()
        return chain

    def is_ancestor_of(self, other: "NodeId") -> bool:
        if other.depth <= self.depth:
            return False
        return other.index >> (other.depth - self.depth) == self.index


def _fast_node(depth: int, index: int) -> NodeId:
    # Internal constructor for addresses already known to be valid.
    nid = object.__new__(NodeId)
    object.__setattr__(nid, "depth", depth)
    object.__setattr__(nid, "index", index)
    object.__setattr__(nid, "_hash", hash((index << 6) | depth))
    return nid


class NodeStats:
    """Sample log and bookkeeping for one node.

    xs / values hold every sample whose position falls in the node's
    interval, in arrival order.  Nodes deeper than the tree's value horizon
    keep positions only (they exist for sampling-balance bookkeeping and can
    never join the working partition).  is_open means the node was split by
    the algorithm.
    """

    __slots__ = ("xs", "values", "is_open", "r_value", "value_sum", "_sd_cache",
                 "track_values")

    def __init__(self, track_values: bool = True):
        self.xs: list[float] = []
        self.values: list[float] = []
        self.is_open = False
        self.r_value: Optional[float] = None
        self.value_sum = 0.0
        self._sd_cache: dict[int, float] = {}
        self.track_values = track_values

    @property
    def count(self) -> int:
        return len(self.xs)

    def add(self, x: float, value: float) -> None:
        self.xs.append(x)
        if self.track_values:
            self.values.append(value)
            self.value_sum += value

    def mean_all(self) -> float:
        if not self.values:
            raise InsufficientDataError("node holds no logged values")
        return self.value_sum / len(self.values)

    def prefix_sd(self, t: int) -> float:
        """Population standard deviation of the first t samples."""
        if t < 2:
            raise InsufficientDataError(f"prefix SD needs at least 2 samples, got t={t}")
        if t > len(self.values):
            raise InsufficientDataError(
                f"prefix SD over {t} samples requested, only {len(self.values)} logged")
        cached = self._sd_cache.get(t)
        if cached is None:
            head = np.asarray(self.values[:t])
            cached = float(np.sqrt(np.mean((head - head.mean()) ** 2)))
            self._sd_cache[t] = cached
        return cached


class PartitionTree:
    """Dyadic tree over [0,1] with lazily materialized nodes.

    The open-leaf frontier (nodes whose parents are all open but which are
    themselves closed) tiles [0,1] exactly and is the working partition of
    the refinement algorithms.
    """

    ROOT = NodeId(0, 0)

    def __init__(self, max_depth: int):
        if max_depth < 0:
            raise ConfigError("max_depth must be nonnegative")
        self.max_depth = max_depth
        self.nodes: dict[NodeId, NodeStats] = {self.ROOT: NodeStats()}
        self.frontier: set[NodeId] = {self.ROOT}
        # Memoized (left_id, left_stats, right_id, right_stats, mid) per
        # materialized parent; keeps the per-draw descent free of NodeId
        # construction and repeated dict lookups.
        self._child_refs: dict[NodeId, tuple] = {}
        self._ancestor_cache: dict[NodeId, list[NodeStats]] = {}

    def stats(self, node: NodeId) -> NodeStats:
        return self.nodes[node]

    def count(self, node: NodeId) -> int:
        st = self.nodes.get(node)
        return st.count if st is not None else 0

    def ensure_children(self, node: NodeId) -> tuple[NodeStats, NodeStats]:
        """Materialize the two children of node, attributing existing samples.

        Children inherit, in arrival order, the parent's logged samples that
        fall in their interval, so prefix statistics at the child level are
        defined retroactively.
        """
        refs = self.children_entries(node)
        return refs[1], refs[3]

    def children_entries(self, node: NodeId) -> tuple:
        """(left_id, left_stats, right_id, right_stats, mid), materializing lazily."""
        refs = self._child_refs.get(node)
        if refs is not None:
            return refs
        left, right = node.children()
        if left in self.nodes or right in self.nodes:
            raise InvariantError("children must be materialized together")
        track = left.depth <= self.max_depth
        ls, rs = NodeStats(track), NodeStats(track)
        mid = node.mid
        parent = self.nodes[node]
        if track:
            for x, v in zip(parent.xs, parent.values):
                (ls if x < mid else rs).add(x, v)
        else:
            for x in parent.xs:
                (ls if x < mid else rs).xs.append(x)
        self.nodes[left] = ls
        self.nodes[right] = rs
        refs = (left, ls, right, rs, mid)
        self._child_refs[node] = refs
        return refs

    def ancestor_stats(self, node: NodeId) -> list[NodeStats]:
        """Stats objects from the root down to node, inclusive (cached)."""
        cached = self._ancestor_cache.get(node)
        if cached is None:
            cached = [self.nodes[a] for a in node.ancestors()]
            self._ancestor_cache[node] = cached
        return cached

    def log_sample(self, x: float, value: float) -> None:
        """Append (x, value) to every materialized node containing x."""
        node = self.ROOT
        st = self.nodes[node]
        refs_map = self._child_refs
        while True:
            st.xs.append(x)
            st.values.append(value)
            st.value_sum += value
            refs = refs_map.get(node)
            if refs is None:
                return
            if x < refs[4]:
                node, st = refs[0], refs[1]
            else:
                node, st = refs[2], refs[3]

    def split(self, node: NodeId) -> tuple[NodeId, NodeId]:
        """Open a frontier node: its children join the working partition."""
        if node not in self.frontier:
            raise InvariantError(f"cannot split non-frontier node {node}")
        if node.depth >= self.max_depth:
            raise InvariantError(f"split at depth {node.depth} exceeds max depth {self.max_depth}")
        self.ensure_children(node)
        st = self.nodes[node]
        st.is_open = True
        self.frontier.discard(node)
        left, right = node.children()
        self.frontier.add(left)
        self.frontier.add(right)
        return left, right

    def leaves(self) -> list[NodeId]:
        return sorted(self.frontier)

    def explored_nodes(self) -> list[NodeId]:
        """Open nodes plus the frontier, in preorder (sorted) order."""
        out = [n for n, st in self.nodes.items() if st.is_open]
        out.extend(self.frontier)
        return sorted(out)

    def total_count(self) -> int:
        return self.nodes[self.ROOT].count

    def check_tiling(self) -> None:
        """Frontier intervals must tile [0,1] exactly (integer arithmetic)."""
        Cut(tuple(self.leaves())).validate()

    def dump_lines(self, sigma_of=None) -> list[str]:
        """Tab-separated `h i T sigma_hat r_value is_open`, preorder.

        Covers the explored tree (open nodes and the frontier).  sigma_of,
        when given, maps NodeId to the frozen sigma_hat or None.
        """
        lines = []

        def visit(node: NodeId):
            st = self.nodes.get(node)
            if st is None or (not st.is_open and node not in self.frontier):
                return
            sd = sigma_of(node) if sigma_of is not None else None
            sd_txt = "nan" if sd is None else repr(sd)
            r_txt = "nan" if st.r_value is None else repr(st.r_value)
            lines.append(f"{node.depth}\t{node.index}\t{st.count}\t{sd_txt}\t{r_txt}\t{int(st.is_open)}")
            if st.is_open:
                left, right = node.children()
                visit(left)
                visit(right)

        visit(self.ROOT)
        return lines


@dataclass(frozen=True)
class Cut:
    """An antichain of nodes whose strata tile [0,1]."""

    leaves: tuple[NodeId, ...]

    def validate(self) -> None:
        if not self.leaves:
            raise InvariantError("empty cut")
        deepest = max(n.depth for n in self.leaves)
        # Exact tiling: sum of 2^(deepest - h) must equal 2^deepest.
        total = sum(1 << (deepest - n.depth) for n in self.leaves)
        if total != (1 << deepest):
            raise InvariantError(f"cut measures sum to {total}/2^{deepest}, not 1")
        starts = sorted(n.index << (deepest - n.depth) for n in self.leaves)
        if len(set(starts)) != len(starts):
            raise InvariantError("cut contains overlapping strata")

    def __len__(self) -> int:
        return len(self.leaves)

    def __iter__(self) -> Iterator[NodeId]:
        return iter(sorted(self.leaves))


def t_threshold(h: int, a_coeff: float, n: int) -> int:
    """floor(a_coeff * 2^(-2h/3) * n^(2/3)), computed via an exact cube root.

    Evaluating the power product directly loses the floor at integer-valued
    points (e.g. a=2, n=1000); taking the integer cube root of
    a^3 * n^2 / 4^h is exact there.
    """
    if a_coeff <= 0:
        raise ConfigError("threshold coefficient must be positive")
    if n < 1:
        raise ConfigError("budget must be at least 1")
    v = (a_coeff ** 3) * (n * n) / float(1 << (2 * h))
    t = int(v ** (1.0 / 3.0))
    while (t + 1) ** 3 <= v:
        t += 1
    while t > 0 and t ** 3 > v:
        t -= 1
    return t


def sigma_hat(node: NodeId, tree: PartitionTree, a_coeff: float, n: int) -> float:
    """Population SD of the node's first t_h samples (h = node depth)."""
    t = t_threshold(node.depth, a_coeff, n)
    return tree.stats(node).prefix_sd(t)


def sigma_tilde(node: NodeId, tree: PartitionTree, a_coeff: float, n: int) -> float:
    """Population SD of the node's first 2 * t_(h+1) samples."""
    t = 2 * t_threshold(node.depth + 1, a_coeff, n)
    return tree.stats(node).prefix_sd(t)


def enumerate_cuts(tree: PartitionTree, root: NodeId = PartitionTree.ROOT,
                   depth_limit: int = 6) -> list[Cut]:
    """All cuts of the opened subtree under root (test oracle, small trees only)."""

    def subtree_depth(node: NodeId) -> int:
        st = tree.nodes.get(node)
        if st is None or not st.is_open:
            return 0
        left, right = node.children()
        return 1 + max(subtree_depth(left), subtree_depth(right))

    if subtree_depth(root) > depth_limit:
        raise DepthLimitError(f"cut enumeration refused beyond depth {depth_limit}")

    def rec(node: NodeId) -> list[tuple[NodeId, ...]]:
        st = tree.nodes.get(node)
        out = [(node,)]
        if st is not None and st.is_open:
            left, right = node.children()
            for lcut in rec(left):
                for rcut in rec(right):
                    out.append(lcut + rcut)
        return out

    return [Cut(leaves) for leaves in rec(root)]
