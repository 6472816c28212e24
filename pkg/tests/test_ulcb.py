"""Adaptive-partition allocator: constants, share recursion, phases, runs."""

import math

import numpy as np
import pytest

from stratmc.errors import BudgetError, ConfigError, InsufficientDataError
from stratmc.integrands import NoisyIntegrand, synthetic_integrand
from stratmc.partition import Cut, NodeId, PartitionTree, enumerate_cuts, t_threshold
from stratmc.ulcb import (
    UlcbConstants,
    UlcbOptions,
    _RunState,
    compute_constants,
    compute_r,
    final_estimate,
    initial_r,
    run_mc_ulcb,
    run_record,
    select_partition,
)

STEP = synthetic_integrand("step")
SMOOTH = synthetic_integrand("smooth_hetero")
CONST = synthetic_integrand("constant", [0.5])


def make_constants(**overrides) -> UlcbConstants:
    base = dict(n=1000, delta=0.1, f_max=1.0, b=0.0, mode="experiment",
                A=4.0, H=5, t_coeff=1.0, sigma_hat_root=1.0,
                sigma_tilde_global=1.2, c=21.2, B=100.0, C_max_prime=120.0,
                radius_coeff=1.0, split_coeff=2.0, select_coeff=1.0,
                r_init_variant="plus", index_variant="theorem",
                bssa_larger_ratio=True, explore_cap_fraction=0.5)
    base.update(overrides)
    return UlcbConstants(**base)


class TestComputeConstants:
    def test_theory_depth_cap_formula(self):
        # f_max = 1/3 makes (3 f_max)^3 = 1, so H = floor(log2 n) + 1 = 11.
        f = synthetic_integrand("step", [1.0 / 3.0, 0.0, 0.5])
        assert f.f_max == pytest.approx(1.0 / 3.0)
        k = compute_constants(f, 1024, 0.1, sigma_hat_root=0.2,
                              options=UlcbOptions(mode="theory", t_coeff=1.0))
        assert k.H == 11
        assert k.A == pytest.approx(
            2 * math.sqrt(2 * (1 + 4.0 / 3.0) * math.log(4 * 1024 ** 2 / 0.1)))

    def test_experiment_mode_meta_parameters(self):
        k = compute_constants(STEP, 2000, 0.1, sigma_hat_root=0.5)
        assert k.A == pytest.approx(15.2018, abs=1e-4)
        assert k.H == 2
        assert k.t_coeff == 1.0

    def test_sigma_tilde_and_c_arithmetic(self):
        k = compute_constants(STEP, 1000, 0.1, sigma_hat_root=1.0,
                              options=UlcbOptions(A=4.0))
        assert k.sigma_tilde_global == pytest.approx(1.2, rel=1e-9)
        assert k.c == pytest.approx(21.2, rel=1e-9)
        assert k.B == pytest.approx(38 * math.sqrt(8.0) * 21.2 * (1 + 1 / 1.2), rel=1e-9)
        assert k.C_max_prime == pytest.approx(
            max(k.B, 14 * k.H * 21.2 * 2.0) + 4.0, rel=1e-9)

    def test_b_factor_variant(self):
        k38 = compute_constants(STEP, 1000, 0.1, 1.0, UlcbOptions(A=4.0))
        k16 = compute_constants(STEP, 1000, 0.1, 1.0, UlcbOptions(A=4.0, b_factor=16.0))
        assert k16.B == pytest.approx(k38.B * 16.0 / 38.0, rel=1e-12)

    def test_theory_mode_coefficients(self):
        f = synthetic_integrand("step", [1.0 / 3.0, 0.0, 0.5])
        k = compute_constants(f, 4096, 0.1, 0.7, UlcbOptions(mode="theory", t_coeff=2.0))
        assert k.radius_coeff == pytest.approx(k.c * math.sqrt(k.A))
        assert k.split_coeff == pytest.approx(6 * k.H * k.c * math.sqrt(k.A))
        assert k.select_coeff == pytest.approx(k.C_max_prime - math.sqrt(k.A))

    def test_guards(self):
        with pytest.raises(ConfigError):
            compute_constants(STEP, 1000, 1.5, 0.5)
        with pytest.raises(ConfigError):
            compute_constants(STEP, 1000, 0.1, -0.5)
        with pytest.raises(ConfigError):
            compute_constants(STEP, 1000, 0.1, 0.5, UlcbOptions(t_coeff=0.001))
        with pytest.raises(ConfigError):
            compute_constants(STEP, 1000, 0.1, 0.5, UlcbOptions(mode="bogus"))


class TestInitialR:
    def test_plus_variant_clamps_to_sigma_tilde(self):
        k = make_constants(sigma_hat_root=1.0, sigma_tilde_global=1.2,
                           radius_coeff=21.2 * 2.0)
        assert initial_r(k) == pytest.approx(1.2)

    def test_plus_variant_unclamped_when_radius_small(self):
        k = make_constants(radius_coeff=0.1)
        assert initial_r(k) == pytest.approx(1.0 + 0.1 / 10.0, rel=1e-9)

    def test_minus_variant_floor_at_zero(self):
        k = make_constants(r_init_variant="minus", sigma_hat_root=0.01,
                           radius_coeff=10.0)
        assert initial_r(k) == 0.0


class TestComputeR:
    def test_clear_gap_upper_and_lower(self):
        # Hand example: w_child = 1/2, radius = 0.01, sigma~ = 0.6, parent r = 1.
        n = 1000
        rad_unit = 0.01 * n ** (1.0 / 3.0) / 0.5 ** (2.0 / 3.0)
        k = make_constants(radius_coeff=rad_unit, n=n)
        rad = k.radius(0.5)
        r_left, r_right = compute_r(NodeId(0, 0), (1.0, 0.1), 0.6, 1.0, k)
        assert r_right == pytest.approx((0.05 + rad) / 0.6, rel=1e-9)
        assert r_left == pytest.approx((0.5 - rad) / 0.6, rel=1e-9)
        assert r_left + r_right <= 1.0

    def test_close_case_symmetric(self):
        n = 1000
        rad_unit = 0.05 * n ** (1.0 / 3.0) / 0.5 ** (2.0 / 3.0)
        k = make_constants(radius_coeff=rad_unit, n=n)
        rad = k.radius(0.5)
        r_left, r_right = compute_r(NodeId(0, 0), (0.4, 0.4), 0.8, 0.9, k)
        expected = min((0.5 * 0.4 + rad) / 0.8, 0.5) * 0.9
        assert r_left == pytest.approx(expected) and r_right == pytest.approx(expected)

    def test_zero_sigma_tilde_halves_parent(self):
        k = make_constants()
        r_left, r_right = compute_r(NodeId(0, 0), (0.0, 0.0), 0.0, 0.8, k)
        assert r_left == pytest.approx(0.4) and r_right == pytest.approx(0.4)

    def test_additivity_on_consistent_inputs(self):
        # sigma-hat pairs and sigma~ generated from actual sample prefixes so
        # the estimator inequality holds; shares must sum below the parent's.
        rng = np.random.default_rng(8)
        for _ in range(300):
            t = int(rng.integers(2, 40))
            left = rng.normal(rng.normal(), abs(rng.normal()) + 0.1, t)
            right = rng.normal(rng.normal(), abs(rng.normal()) + 0.1, t)
            merged = np.empty(2 * t)
            merged[0::2], merged[1::2] = left, right
            s_l = float(np.sqrt(np.mean((left - left.mean()) ** 2)))
            s_r = float(np.sqrt(np.mean((right - right.mean()) ** 2)))
            s_tilde = float(np.sqrt(np.mean((merged - merged.mean()) ** 2)))
            k = make_constants(radius_coeff=float(abs(rng.normal()) + 0.01))
            parent_r = float(abs(rng.normal()) + 0.1)
            parent = NodeId(int(rng.integers(0, 4)), 0)
            r_l, r_r = compute_r(parent, (s_l, s_r), s_tilde, parent_r, k)
            assert r_l >= 0 and r_r >= 0
            assert r_l + r_r <= parent_r * (1 + 1e-9)

    def test_negative_parent_rejected(self):
        with pytest.raises(ConfigError):
            compute_r(NodeId(0, 0), (0.1, 0.1), 0.5, -1.0, make_constants())


class TestPhases:
    def test_constant_integrand_no_splits(self):
        res = run_mc_ulcb(CONST, 1000, 0.1, UlcbOptions(), np.random.default_rng(0))
        assert res.estimate == 0.5
        assert list(res.explored_cut) == [NodeId(0, 0)]
        assert res.report.pseudo_risk == 0.0
        assert res.t_explore <= 1000 // 4 + 1

    def test_constant_minus_variant_stops_immediately(self):
        opts = UlcbOptions(r_init_variant="minus")
        res = run_mc_ulcb(CONST, 1000, 0.1, opts, np.random.default_rng(0))
        assert res.t_explore == t_threshold(0, 1.0, 1000)  # init only

    def test_step_splits_root_once(self):
        res = run_mc_ulcb(STEP, 10_000, 0.1, UlcbOptions(), np.random.default_rng(1))
        assert list(res.explored_cut) == [NodeId(1, 0), NodeId(1, 1)]
        state = _RunState(res.tree, res.constants)
        assert state.frozen_sigma(NodeId(1, 0)) == 0.0
        assert state.frozen_sigma(NodeId(1, 1)) == 0.0
        assert res.estimate == pytest.approx(0.5)

    def test_explored_depth_within_cap(self):
        opts = UlcbOptions(H=3, split_scale=0.5)
        res = run_mc_ulcb(SMOOTH, 20_000, 0.1, opts, np.random.default_rng(2))
        assert max(x.depth for x in res.explored_cut) <= 3

    def test_budget_conservation(self):
        calls = {"n": 0}

        def sample(x, rng):
            calls["n"] += 1
            return SMOOTH.sample(x, rng)

        wrapped = NoisyIntegrand(sample=sample, f_max=1.0, b=2.0, label="count",
                                 stratum_mean=SMOOTH.stratum_mean,
                                 stratum_sd=SMOOTH.stratum_sd)
        for seed in (0, 1, 2):
            calls["n"] = 0
            n = 700 + 137 * seed
            run_mc_ulcb(wrapped, n, 0.1, UlcbOptions(), np.random.default_rng(seed))
            assert calls["n"] == n

    def test_seed_determinism(self):
        a = run_mc_ulcb(SMOOTH, 3000, 0.1, UlcbOptions(), np.random.default_rng(42))
        b = run_mc_ulcb(SMOOTH, 3000, 0.1, UlcbOptions(), np.random.default_rng(42))
        assert a.estimate == b.estimate
        assert a.report.allocation == b.report.allocation
        assert list(a.selected_cut) == list(b.selected_cut)

    def test_budget_errors(self):
        with pytest.raises(BudgetError):
            run_mc_ulcb(STEP, 100, 0.1, UlcbOptions(t_coeff=50.0),
                        np.random.default_rng(0))
        with pytest.raises(ConfigError):
            run_mc_ulcb(STEP, 100, 0.1, UlcbOptions(t_coeff=0.01),
                        np.random.default_rng(0))


def build_structured_tree(depths):
    """Split the listed nodes (structure only, no samples needed)."""
    tree = PartitionTree(max_depth=8)
    for node in depths:
        tree.split(node)
    return tree


class StubState:
    def __init__(self, sigma_map):
        self.sigma_map = sigma_map

    def frozen_sigma(self, node):
        return self.sigma_map[node]


class TestSelectPartition:
    def test_root_only(self):
        tree = PartitionTree(max_depth=4)
        k = make_constants(select_coeff=1.0)
        cut = select_partition(tree, k, StubState({NodeId(0, 0): 1.0}))
        assert list(cut) == [NodeId(0, 0)]

    def test_concrete_cost_comparison(self):
        # Root sigma 1, children sigma 0: children win iff the penalty of one
        # extra leaf stays below the dispersion gain.
        tree = build_structured_tree([NodeId(0, 0)])
        sigma = {NodeId(0, 0): 1.0, NodeId(1, 0): 0.0, NodeId(1, 1): 0.0}
        n = 8  # n^(1/3) = 2
        cheap = make_constants(n=n, select_coeff=1.0)
        cut = select_partition(tree, cheap, StubState(sigma))
        assert list(cut) == [NodeId(1, 0), NodeId(1, 1)]
        dear = make_constants(n=n, select_coeff=20.0)
        cut = select_partition(tree, dear, StubState(sigma))
        assert list(cut) == [NodeId(0, 0)]

    def test_tie_keeps_shallower(self):
        tree = build_structured_tree([NodeId(0, 0)])
        # Zero penalty and children sigmas summing exactly to the root's:
        # equal costs, so the shallower option must win.
        sigma = {NodeId(0, 0): 1.0, NodeId(1, 0): 1.0, NodeId(1, 1): 1.0}
        k = make_constants(select_coeff=1e-300)
        cut = select_partition(tree, k, StubState(sigma))
        assert list(cut) == [NodeId(0, 0)]

    def test_matches_bruteforce_on_random_trees(self):
        rng = np.random.default_rng(3)
        k = make_constants(select_coeff=0.3, n=64)
        pen = k.select_coeff / k.n ** (1.0 / 3.0)
        for _ in range(200):
            tree = PartitionTree(max_depth=5)
            sigma = {NodeId(0, 0): float(rng.random())}
            for _ in range(int(rng.integers(0, 12))):
                frontier = [x for x in tree.leaves() if x.depth < 5]
                if not frontier:
                    break
                node = frontier[rng.integers(len(frontier))]
                for child in tree.split(node):
                    sigma[child] = float(rng.random())
            state = StubState(sigma)
            cut = select_partition(tree, k, state)

            def cost(leaves):
                return math.fsum(
                    x.weight * sigma[x] + pen * x.weight ** (2.0 / 3.0)
                    for x in leaves)

            best = min(cost(list(c)) for c in enumerate_cuts(tree))
            assert cost(list(cut)) == best


class TestFinalEstimateAndRecord:
    def test_piecewise_constant_exact(self):
        res = run_mc_ulcb(STEP, 5000, 0.1, UlcbOptions(), np.random.default_rng(3))
        assert res.estimate == pytest.approx(0.5, abs=1e-12)

    def test_final_estimate_requires_samples(self):
        tree = PartitionTree(max_depth=2)
        with pytest.raises(InsufficientDataError):
            final_estimate(tree, Cut((NodeId(0, 0),)))

    def test_run_record_schema(self):
        res = run_mc_ulcb(SMOOTH, 2000, 0.1, UlcbOptions(), np.random.default_rng(4))
        rec = run_record(res, seed=[1, 2, 3])
        assert set(rec) == {"seed", "n", "delta", "mode", "constants", "T_explore",
                            "selected_cut", "explored_cut", "estimate",
                            "allocation", "tree"}
        assert set(rec["constants"]) == {"A", "H", "c", "sigma_tilde", "B",
                                         "C_max_prime"}
        assert rec["n"] == 2000
        assert all(len(item) == 3 for item in rec["allocation"])
        total = sum(t for _, _, t in rec["allocation"])
        assert total == 2000
        import json
        json.dumps(rec)  # must be JSON-serializable
