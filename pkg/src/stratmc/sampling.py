"""Balanced sampling schemes over the dyadic tree.

bss_draw descends toward the lesser-sampled child at every level, breaking
exact ties with a dedicated Bernoulli(1/2) draw, and samples uniformly in
the first empty region it reaches.  After t draws into a node, every
depth-l descendant region holds between floor(t/2^l) and ceil(t/2^l)
samples.  bss_a_draw instead steers, while both children carry refinement
shares (r values), toward the child with the larger share-to-count ratio,
falling back to plain balanced sampling below the explored tree.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import InvariantError
from .integrands import NoisyIntegrand
from .partition import NodeId, PartitionTree

__all__ = ["bss_draw", "bss_a_draw"]

# Hard stop for the virtual descent; the recursion terminates after about
# log2(count) levels on its own, this only guards degenerate logs.
_DESCENT_SLACK = 20


def _descend(node: NodeId, tree: PartitionTree,
             rng: np.random.Generator) -> tuple[float, list]:
    """Position of the next balanced draw plus the stats path below node."""
    cur = node
    cur_st = tree.nodes[node]
    below = []
    depth_cap = tree.max_depth + _DESCENT_SLACK
    entries = tree.children_entries
    lo, hi = cur.low, cur.high
    while cur_st.xs and cur.depth < depth_cap:
        if len(cur_st.xs) == 1:
            # One resident sample: the next draw lands uniformly in the other
            # half; no need to materialize children for that comparison.
            mid = 0.5 * (lo + hi)
            if cur_st.xs[0] < mid:
                lo = mid
            else:
                hi = mid
            x = lo + (hi - lo) * rng.random()
            if x == 0.0:
                x = (hi - lo) * 0.5 / 2 ** 53
            return x, below
        left, left_st, right, right_st, _ = entries(cur)
        lc = len(left_st.xs)
        rc = len(right_st.xs)
        if lc < rc:
            cur, cur_st = left, left_st
        elif rc < lc:
            cur, cur_st = right, right_st
        elif rng.random() < 0.5:
            # Equal positive counts: dedicated Bernoulli(1/2) child choice.
            cur, cur_st = left, left_st
        else:
            cur, cur_st = right, right_st
        below.append(cur_st)
        lo, hi = cur.low, cur.high
    x = lo + (hi - lo) * rng.random()
    if x == 0.0:
        x = (hi - lo) * 0.5 / 2 ** 53  # keep integrand domains open at 0
    return x, below


def bss_draw(node: NodeId, tree: PartitionTree, f: NoisyIntegrand,
             rng: np.random.Generator) -> tuple[float, float]:
    """Draw one balanced sample in the stratum of node; log it along the tree."""
    x, below = _descend(node, tree, rng)
    value = float(f.sample(x, rng))
    for st in tree.ancestor_stats(node):
        st.add(x, value)
    for st in below:
        st.add(x, value)
    return x, value


def bss_a_draw(node: NodeId, tree: PartitionTree, f: NoisyIntegrand,
               explored: Optional[set[NodeId]], rng: np.random.Generator,
               larger_ratio: bool = True) -> tuple[float, float]:
    """Allocation-aware draw: descend through explored children by r/T ratio.

    While both children of the current node belong to the explored tree, the
    draw recurses into the child whose ratio r/T is larger (the under-sampled
    child relative to its share); larger_ratio=False selects the smaller
    ratio instead.  Ties go to the lower-index child.  Below the explored
    tree the draw degenerates to bss_draw and consumes the same rng stream.
    """
    cur = node
    if explored:
        while True:
            left, right = cur.children()
            if left not in explored or right not in explored:
                break
            ratios = []
            for child in (left, right):
                st = tree.stats(child)
                if st.r_value is None:
                    raise InvariantError(f"explored node {child} has no r value")
                if st.count < 1:
                    raise InvariantError(f"explored node {child} has no samples")
                ratios.append(st.r_value / st.count)
            if ratios[0] == ratios[1]:
                cur = left
            elif (ratios[0] > ratios[1]) == larger_ratio:
                cur = left
            else:
                cur = right
    return bss_draw(cur, tree, f, rng)
