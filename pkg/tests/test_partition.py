"""Dyadic tree: node addressing, sample logs, prefix estimators, cuts."""

import math
import re

import numpy as np
import pytest

from stratmc.errors import (
    ConfigError,
    DepthLimitError,
    InsufficientDataError,
    InvariantError,
)
from stratmc.partition import (
    Cut,
    NodeId,
    PartitionTree,
    enumerate_cuts,
    sigma_hat,
    sigma_tilde,
    t_threshold,
)
from stratmc.sampling import bss_draw
from stratmc.integrands import synthetic_integrand


class TestNodeId:
    def test_children_and_parent(self):
        node = NodeId(2, 3)
        left, right = node.children()
        assert (left.depth, left.index) == (3, 6)
        assert (right.depth, right.index) == (3, 7)
        assert left.parent() == node and right.parent() == node

    def test_interval_geometry(self):
        node = NodeId(3, 5)
        assert node.low == 5 / 8 and node.high == 6 / 8
        assert node.mid == 11 / 16
        assert node.contains(0.7) and not node.contains(0.5)

    def test_weight_law(self):
        for h in range(8):
            node = NodeId(h, (1 << h) - 1)
            for child in node.children():
                assert child.weight == node.weight / 2

    def test_invalid_addresses(self):
        with pytest.raises(ConfigError):
            NodeId(-1, 0)
        with pytest.raises(ConfigError):
            NodeId(2, 4)

    def test_ordering_and_ancestors(self):
        assert NodeId(1, 1) < NodeId(2, 0)
        assert NodeId(1, 1).is_ancestor_of(NodeId(3, 7))
        assert not NodeId(1, 0).is_ancestor_of(NodeId(3, 7))
        chain = NodeId(2, 3).ancestors()
        assert chain == [NodeId(0, 0), NodeId(1, 1), NodeId(2, 3)]


class TestThreshold:
    def test_spec_values(self):
        assert t_threshold(0, 2.0, 1000) == 200
        assert t_threshold(1, 2.0, 1000) == 125
        assert t_threshold(0, 0.5, 1) == 0

    def test_monotone_in_depth(self):
        vals = [t_threshold(h, 3.7, 5000) for h in range(10)]
        assert vals == sorted(vals, reverse=True)

    def test_invalid(self):
        with pytest.raises(ConfigError):
            t_threshold(0, 0.0, 100)
        with pytest.raises(ConfigError):
            t_threshold(0, 1.0, 0)


def make_tree_with_root_log(values, max_depth=8):
    tree = PartitionTree(max_depth=max_depth)
    st = tree.stats(tree.ROOT)
    for i, v in enumerate(values):
        # Positions chosen to alternate halves; irrelevant for prefix SDs.
        st.add((i % 2) * 0.5 + 0.25, float(v))
    return tree


class TestSigmaEstimators:
    def test_zero_dispersion(self):
        tree = make_tree_with_root_log([3.0] * 10)
        assert sigma_hat(NodeId(0, 0), tree, 10.0, 1) == 0.0

    def test_hand_computed_prefix(self):
        # First four samples (0,0,1,1): population SD = 0.5.
        tree = make_tree_with_root_log([0, 0, 1, 1, 7, 7])
        assert sigma_hat(NodeId(0, 0), tree, 4.0, 1) == pytest.approx(0.5)

    def test_prefix_ignores_later_samples(self):
        tree = make_tree_with_root_log([1, 2, 3, 4, 5, 6])
        expected = math.sqrt(1.25)  # SD of (1,2,3,4)
        assert sigma_hat(NodeId(0, 0), tree, 4.0, 1) == pytest.approx(expected)
        tree.stats(tree.ROOT).add(0.1, 100.0)
        assert sigma_hat(NodeId(0, 0), tree, 4.0, 1) == pytest.approx(expected)

    def test_sigma_tilde_uses_2t_child_prefix(self):
        # t_1 = floor(a * 2^(-2/3)) = 2 for a = 4, n = 1: prefix 2*t_1 = 4.
        tree = make_tree_with_root_log([0, 2, 0, 2, 9, 9])
        assert sigma_tilde(NodeId(0, 0), tree, 4.0, 1) == pytest.approx(1.0)

    def test_sigma_hat_and_tilde_differ_on_crafted_log(self):
        # sigma_hat reads t_0 = 6 samples, sigma_tilde reads 2 t_1 = 6... use
        # a = 5: t_0 = 5, t_1 = 3, so prefixes are 5 vs 6 and must differ.
        tree = make_tree_with_root_log([0, 0, 0, 0, 0, 10])
        a = 5.0
        assert t_threshold(0, a, 1) == 5
        assert 2 * t_threshold(1, a, 1) == 6
        assert sigma_hat(NodeId(0, 0), tree, a, 1) == 0.0
        assert sigma_tilde(NodeId(0, 0), tree, a, 1) > 0.0

    def test_insufficient_data(self):
        tree = make_tree_with_root_log([1.0, 2.0])
        with pytest.raises(InsufficientDataError):
            sigma_hat(NodeId(0, 0), tree, 5.0, 1)
        with pytest.raises(InsufficientDataError):
            sigma_hat(NodeId(0, 0), tree, 1.0, 1)  # t = 1 < 2


class TestTreeStructure:
    def test_tiling_through_random_splits(self):
        rng = np.random.default_rng(5)
        tree = PartitionTree(max_depth=6)
        for _ in range(40):
            frontier = tree.leaves()
            node = frontier[rng.integers(len(frontier))]
            if node.depth < tree.max_depth:
                tree.split(node)
            tree.check_tiling()
        leaves = tree.leaves()
        deepest = max(x.depth for x in leaves)
        assert sum(1 << (deepest - x.depth) for x in leaves) == 1 << deepest

    def test_split_guards(self):
        tree = PartitionTree(max_depth=1)
        tree.split(tree.ROOT)
        with pytest.raises(InvariantError):
            tree.split(tree.ROOT)  # no longer frontier
        with pytest.raises(InvariantError):
            tree.split(NodeId(1, 0))  # would exceed max depth

    def test_sample_conservation_across_cuts(self):
        f = synthetic_integrand("smooth_hetero")
        rng = np.random.default_rng(9)
        tree = PartitionTree(max_depth=6)
        for _ in range(300):
            bss_draw(tree.ROOT, tree, f, rng)
        tree.split(tree.ROOT)
        tree.split(NodeId(1, 1))
        for _ in range(100):
            bss_draw(NodeId(2, 2), tree, f, rng)
        assert tree.total_count() == 400
        for cut in enumerate_cuts(tree):
            total = sum(tree.count(x) for x in cut)
            assert total == 400

    def test_retroactive_child_attribution_preserves_order(self):
        tree = PartitionTree(max_depth=4)
        st = tree.stats(tree.ROOT)
        xs = [0.1, 0.7, 0.2, 0.9, 0.4, 0.6]
        for i, x in enumerate(xs):
            st.add(x, float(i))
        left_stats, right_stats = tree.ensure_children(tree.ROOT)
        assert left_stats.xs == [0.1, 0.2, 0.4]
        assert left_stats.values == [0.0, 2.0, 4.0]
        assert right_stats.xs == [0.7, 0.9, 0.6]
        assert right_stats.values == [1.0, 3.0, 5.0]


class TestCut:
    def test_validate_good_and_bad(self):
        Cut((NodeId(1, 0), NodeId(2, 2), NodeId(2, 3))).validate()
        with pytest.raises(InvariantError):
            Cut((NodeId(1, 0), NodeId(2, 2))).validate()  # hole
        with pytest.raises(InvariantError):
            Cut((NodeId(0, 0), NodeId(1, 1))).validate()  # overlap
        with pytest.raises(InvariantError):
            Cut(()).validate()


class TestEnumerateCuts:
    def test_leaf_only(self):
        tree = PartitionTree(max_depth=3)
        cuts = enumerate_cuts(tree)
        assert len(cuts) == 1 and list(cuts[0]) == [NodeId(0, 0)]

    def test_one_split(self):
        tree = PartitionTree(max_depth=3)
        tree.split(tree.ROOT)
        assert len(enumerate_cuts(tree)) == 2

    def test_full_depth_two_gives_five(self):
        tree = PartitionTree(max_depth=3)
        tree.split(tree.ROOT)
        tree.split(NodeId(1, 0))
        tree.split(NodeId(1, 1))
        assert len(enumerate_cuts(tree)) == 5

    def test_full_depth_three_count(self):
        # c(d) = 1 + c(d-1)^2 gives 26 at depth 3.
        tree = PartitionTree(max_depth=4)
        tree.split(tree.ROOT)
        for h in (1, 2):
            for i in range(1 << h):
                tree.split(NodeId(h, i))
        assert len(enumerate_cuts(tree)) == 26

    def test_depth_refusal(self):
        tree = PartitionTree(max_depth=8)
        node = tree.ROOT
        for _ in range(7):
            tree.split(node)
            node = node.children()[0]
        with pytest.raises(DepthLimitError):
            enumerate_cuts(tree)


class TestDumpFormat:
    def test_dump_lines(self):
        f = synthetic_integrand("step")
        rng = np.random.default_rng(1)
        tree = PartitionTree(max_depth=4)
        for _ in range(50):
            bss_draw(tree.ROOT, tree, f, rng)
        tree.split(tree.ROOT)
        tree.stats(NodeId(1, 0)).r_value = 0.25
        lines = tree.dump_lines(sigma_of=lambda node: 0.5 if node.depth == 0 else None)
        pattern = re.compile(r"^\d+\t\d+\t\d+\t\S+\t\S+\t[01]$")
        assert all(pattern.match(line) for line in lines)
        assert lines[0].startswith("0\t0\t50\t0.5\t")
        # Preorder: root, then left subtree, then right subtree.
        assert [line.split("\t")[:2] for line in lines] == \
            [["0", "0"], ["1", "0"], ["1", "1"]]
