"""Adaptive-partition allocator: exploration with refinement shares, cut
selection by penalized empirical dispersion, and share-steered exploitation.

A run consumes exactly n evaluations: an initialization block of balanced
draws at the root, an exploration loop that samples frontier nodes while
their share-to-count ratio stays above 4*Sigma~/n and splits nodes whose
weighted dispersion passes the gate, a bottom-up selection of the cut
minimizing estimated dispersion plus a width penalty, and an exploitation
loop allocating the remainder by upper-confidence indices with
allocation-aware balanced draws.  The final estimate is the stratified mean
over the deepest explored partition.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import BudgetError, ConfigError, InvariantError
from .integrands import NoisyIntegrand
from .partition import Cut, NodeId, PartitionTree, sigma_hat, sigma_tilde, t_threshold
from .sampling import bss_a_draw, bss_draw
from .ucb import theory_confidence_constant, ucb_index
from .evaluation import RiskReport, oracle_risk, pseudo_risk

__all__ = [
    "UlcbOptions",
    "UlcbConstants",
    "UlcbResult",
    "compute_constants",
    "compute_r",
    "exploration_phase",
    "select_partition",
    "exploitation_phase",
    "final_estimate",
    "run_mc_ulcb",
    "run_record",
]

_ADDITIVITY_RTOL = 1e-9


@dataclass
class UlcbOptions:
    """User-facing knobs for one run.

    theory mode derives every constant from (f_max, b, delta); experiment
    mode takes the confidence constant A and depth cap H directly (defaults
    2*log n and floor(0.3*log n)) and uses desk-calibrated sampling
    thresholds: t_coeff scales t_h = floor(t_coeff * w^(2/3) * n^(2/3)), the
    confidence radius unit is radius_scale * Sigma~, and the split gate is
    split_scale * Sigma~ * w^(2/3) / n^(1/3).  The theoretical thresholds
    exceed any desk-scale budget (see README), so experiment mode is the one
    that actually refines partitions at the benchmark sizes.
    """

    mode: str = "experiment"
    A: Optional[float] = None
    H: Optional[int] = None
    t_coeff: Optional[float] = None
    radius_scale: float = 1.0
    split_scale: float = 2.0
    select_scale: float = 1.0
    r_init_variant: str = "plus"  # "plus" | "minus"
    b_factor: float = 38.0        # 16.0 selects the appendix value
    index_variant: str = "theorem"
    bssa_larger_ratio: bool = True
    explore_cap_fraction: float = 0.5

    def validate(self):
        if self.mode not in ("theory", "experiment"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.r_init_variant not in ("plus", "minus"):
            raise ConfigError(f"unknown r-init variant {self.r_init_variant!r}")
        if self.index_variant not in ("theorem", "footnote", "exploitation"):
            raise ConfigError(f"unknown index variant {self.index_variant!r}")
        if not 0.0 < self.explore_cap_fraction <= 1.0:
            raise ConfigError("explore_cap_fraction must lie in (0,1]")


@dataclass
class UlcbConstants:
    """Frozen constants of one run (data-dependent once sigma_hat_root is in)."""

    n: int
    delta: float
    f_max: float
    b: float
    mode: str
    A: float
    H: int
    t_coeff: float
    sigma_hat_root: float
    sigma_tilde_global: float      # Sigma~ = sigma_hat_root + sqrt(A)/n^(1/3)
    c: float                       # (8 Sigma~ + 1) sqrt(A)
    B: float                       # b_factor * sqrt(2A) * c * (1 + 1/Sigma~)
    C_max_prime: float             # max(B, 14 H c sqrt(A)) + 2 sqrt(A)
    radius_coeff: float            # rho in radius(w) = rho * w^(2/3) / n^(1/3)
    split_coeff: float             # gate(w) = split_coeff * w^(2/3) / n^(1/3)
    select_coeff: float            # selection penalty per leaf: coeff * w^(2/3)/n^(1/3)
    r_init_variant: str
    index_variant: str
    bssa_larger_ratio: bool
    explore_cap_fraction: float

    def radius(self, weight: float) -> float:
        return self.radius_coeff * weight ** (2.0 / 3.0) / self.n ** (1.0 / 3.0)

    def split_gate(self, weight: float) -> float:
        return self.split_coeff * weight ** (2.0 / 3.0) / self.n ** (1.0 / 3.0)


def resolve_meta(f: NoisyIntegrand, n: int, delta: float,
                 options: UlcbOptions) -> tuple[float, int, float]:
    """Resolve (A, H, t_coeff) before any sampling."""
    options.validate()
    if n < 2:
        raise ConfigError("budget too small")
    if options.mode == "theory":
        a = options.A if options.A is not None else theory_confidence_constant(
            f.f_max, f.b, delta, n)
        h_cap = options.H if options.H is not None else (
            int(math.floor(math.log((3.0 * f.f_max) ** 3 * n) / math.log(2.0))) + 1)
        t_coeff = options.t_coeff if options.t_coeff is not None else a
    else:
        a = options.A if options.A is not None else 2.0 * math.log(n)
        h_cap = options.H if options.H is not None else int(math.floor(0.3 * math.log(n)))
        t_coeff = options.t_coeff if options.t_coeff is not None else 1.0
    if a <= 0 or t_coeff <= 0:
        raise ConfigError("confidence constant and threshold coefficient must be positive")
    if h_cap < 0:
        raise ConfigError("depth cap must be nonnegative")
    return a, h_cap, t_coeff


def compute_constants(f: NoisyIntegrand, n: int, delta: float,
                      sigma_hat_root: float,
                      options: Optional[UlcbOptions] = None) -> UlcbConstants:
    """Freeze all run constants once the root dispersion estimate is known."""
    if sigma_hat_root < 0:
        raise ConfigError("sigma_hat_root must be nonnegative")
    if not 0 < delta < 1:
        raise ConfigError("delta must lie in (0,1)")
    options = options or UlcbOptions()
    a, h_cap, t_coeff = resolve_meta(f, n, delta, options)
    if t_threshold(0, t_coeff, n) < 2:
        raise ConfigError("budget too small for a 2-sample root estimate")

    n_third = n ** (1.0 / 3.0)
    sqrt_a = math.sqrt(a)
    sigma_tilde_g = sigma_hat_root + sqrt_a / n_third
    c = (8.0 * sigma_tilde_g + 1.0) * sqrt_a
    big_b = options.b_factor * math.sqrt(2.0 * a) * c * (1.0 + 1.0 / sigma_tilde_g)
    c_max = max(big_b, 14.0 * h_cap * c * sqrt_a) + 2.0 * sqrt_a

    if options.mode == "theory":
        radius_coeff = c * sqrt_a
        split_coeff = 6.0 * h_cap * c * sqrt_a
        select_coeff = c_max - sqrt_a
    else:
        radius_coeff = options.radius_scale * sigma_tilde_g
        split_coeff = options.split_scale * sigma_tilde_g
        select_coeff = options.select_scale * sigma_tilde_g

    return UlcbConstants(
        n=n, delta=delta, f_max=f.f_max, b=f.b, mode=options.mode,
        A=a, H=h_cap, t_coeff=t_coeff,
        sigma_hat_root=sigma_hat_root, sigma_tilde_global=sigma_tilde_g,
        c=c, B=big_b, C_max_prime=c_max,
        radius_coeff=radius_coeff, split_coeff=split_coeff,
        select_coeff=select_coeff,
        r_init_variant=options.r_init_variant,
        index_variant=options.index_variant,
        bssa_larger_ratio=options.bssa_larger_ratio,
        explore_cap_fraction=options.explore_cap_fraction,
    )


def initial_r(k: UlcbConstants) -> float:
    """Root refinement share, clamped to [0, Sigma~]."""
    rad = k.radius(1.0)
    if k.r_init_variant == "plus":
        raw = k.sigma_hat_root + rad
    else:
        raw = k.sigma_hat_root - rad
    return min(max(raw, 0.0), k.sigma_tilde_global)


def compute_r(parent: NodeId, child_sigmas: tuple[float, float],
              parent_sigma_tilde: float, parent_r: float,
              k: UlcbConstants) -> tuple[float, float]:
    """Children refinement shares from the three-case confidence recursion.

    The child with clearly smaller dispersion receives a proportional upper
    confidence factor, the other a lower one; close calls give both the
    capped upper factor of the smaller estimate.  Shares are clamped at 0
    and must sum to at most the parent share.
    """
    if parent_r < 0:
        raise ConfigError("parent share must be nonnegative")
    w_child = math.ldexp(1.0, -(parent.depth + 1))
    w_parent = math.ldexp(1.0, -parent.depth)
    rad = k.radius(w_child)
    denom = w_parent * parent_sigma_tilde

    out = []
    pair = (child_sigmas[0], child_sigmas[1])
    for j in (0, 1):
        s_j, s_o = pair[j], pair[1 - j]
        gap = w_child * s_o - w_child * s_j
        if gap >= 2.0 * rad:
            factor = (w_child * s_j + rad) / denom if denom > 0 else math.inf
        elif gap <= -2.0 * rad:
            factor = (w_child * s_j - rad) / denom if denom > 0 else math.inf
        else:
            upper = (w_child * min(s_j, s_o) + rad) / denom if denom > 0 else math.inf
            factor = min(upper, 0.5)
        out.append(max(factor, 0.0) * parent_r)

    r_left, r_right = out
    if r_left + r_right > parent_r * (1.0 + _ADDITIVITY_RTOL) + 1e-300:
        raise InvariantError(
            f"share additivity violated at {parent}: "
            f"{r_left} + {r_right} > {parent_r}")
    return r_left, r_right


class _RunState:
    """Mutable companion of one run: tree plus split bookkeeping."""

    def __init__(self, tree: PartitionTree, k: UlcbConstants):
        self.tree = tree
        self.k = k
        self.t_child_cache: dict[int, int] = {}

    def t_h(self, depth: int) -> int:
        t = self.t_child_cache.get(depth)
        if t is None:
            t = t_threshold(depth, self.k.t_coeff, self.k.n)
            self.t_child_cache[depth] = t
        return t

    def frozen_sigma(self, node: NodeId) -> float:
        return sigma_hat(node, self.tree, self.k.t_coeff, self.k.n)

    def splittable(self, node: NodeId) -> bool:
        k, tree = self.k, self.tree
        if node.depth >= k.H or node not in tree.frontier:
            return False
        t_child = self.t_h(node.depth + 1)
        if t_child < 2:
            return False
        t_own = self.t_h(node.depth)
        if t_own < 2 or tree.count(node) < max(2 * t_child, t_own):
            return False
        w = node.weight
        return w * self.frozen_sigma(node) >= k.split_gate(w)

    def split_with_shares(self, node: NodeId) -> list[NodeId]:
        """Split node (and cascade on floor-rounding edge cases)."""
        tree, k = self.tree, self.k
        opened = []
        queue = [node]
        while queue:
            cur = queue.pop(0)
            if not self.splittable(cur):
                continue
            t_child = self.t_h(cur.depth + 1)
            parent_stats = tree.stats(cur)
            if parent_stats.r_value is None:
                raise InvariantError(f"splitting {cur} before its share is set")
            left, right = tree.split(cur)
            s_left = tree.stats(left).prefix_sd(t_child)
            s_right = tree.stats(right).prefix_sd(t_child)
            s_tilde = parent_stats.prefix_sd(2 * t_child)
            r_left, r_right = compute_r(cur, (s_left, s_right), s_tilde,
                                        parent_stats.r_value, k)
            tree.stats(left).r_value = r_left
            tree.stats(right).r_value = r_right
            opened.extend((left, right))
            queue.extend((left, right))
        return opened


def exploration_phase(f: NoisyIntegrand, state: _RunState,
                      rng: np.random.Generator, already_used: int) -> int:
    """Sample eligible frontier nodes in (depth, index) order; split on the way.

    A node is eligible while share/(count+1) >= 4*Sigma~/n; eligibility only
    decays, so each node is processed at most once.  Stops early at the
    budget guard min(floor(n * cap_fraction), n - |frontier|).
    """
    tree, k = state.tree, state.k
    thr = 4.0 * k.sigma_tilde_global / k.n
    drawn = 0

    def cap() -> int:
        return min(int(k.n * k.explore_cap_fraction), k.n - len(tree.frontier))

    heap = list(tree.frontier)
    heapq.heapify(heap)

    def push_children(nodes):
        for child in nodes:
            heapq.heappush(heap, child)

    while heap:
        node = heapq.heappop(heap)
        if node not in tree.frontier:
            continue
        st = tree.stats(node)
        if st.r_value is None:
            raise InvariantError(f"frontier node {node} has no share")
        while (already_used + drawn) < cap() and st.r_value / (st.count + 1) >= thr:
            bss_draw(node, tree, f, rng)
            drawn += 1
            if state.splittable(node):
                push_children(state.split_with_shares(node))
                break
        if (already_used + drawn) >= cap():
            break
    return drawn


def select_partition(tree: PartitionTree, k: UlcbConstants,
                     state: Optional[_RunState] = None) -> Cut:
    """Cut of the explored tree minimizing Sigma^ + (C'_max - sqrt(A)) * penalty.

    Bottom-up dynamic program; each node's candidate costs are exact sums
    over its implied leaf set, and ties keep the shallower option.
    """
    state = state or _RunState(tree, k)
    pen = k.select_coeff / k.n ** (1.0 / 3.0)

    def leaf_cost(node: NodeId) -> float:
        w = node.weight
        return w * state.frozen_sigma(node) + pen * w ** (2.0 / 3.0)

    def rec(node: NodeId) -> tuple[float, tuple[NodeId, ...]]:
        st = tree.nodes.get(node)
        own = (leaf_cost(node), (node,))
        if st is None or not st.is_open:
            return own
        left, right = node.children()
        lc, lleaves = rec(left)
        rc, rleaves = rec(right)
        leaves = lleaves + rleaves
        combined = math.fsum(leaf_cost(x) for x in leaves)
        if combined < own[0]:
            return combined, leaves
        return own

    _, leaves = rec(tree.ROOT)
    cut = Cut(leaves)
    cut.validate()
    return cut


def exploitation_phase(f: NoisyIntegrand, state: _RunState, cut: Cut,
                       remaining: int, rng: np.random.Generator) -> None:
    """Spend the remaining budget on cut members by largest index.

    Draws go through the share-steered scheme: descend by the larger (or,
    when configured, smaller) share-to-count ratio while both children are
    explored, then balanced sampling below.
    """
    if remaining <= 0:
        return
    tree, k = state.tree, state.k
    leaves = list(cut)
    kk = len(leaves)

    # Steering table over explored internal nodes: parent -> child entries.
    steer: dict[NodeId, tuple] = {}
    for node, st in tree.nodes.items():
        if st.r_value is None or node.depth == 0:
            continue
        parent = node.parent()
        left, right = parent.children()
        lst = tree.nodes.get(left)
        rst = tree.nodes.get(right)
        if (lst is not None and rst is not None
                and lst.r_value is not None and rst.r_value is not None):
            steer[parent] = (left, lst, lst.r_value, right, rst, rst.r_value)
    larger = k.bssa_larger_ratio

    def steered_draw(leaf: NodeId) -> tuple[float, float]:
        cur = leaf
        entry = steer.get(cur)
        while entry is not None:
            left, lst, rl, right, rst, rr = entry
            if not lst.xs or not rst.xs:
                raise InvariantError("explored node without samples")
            ratio_l = rl / len(lst.xs)
            ratio_r = rr / len(rst.xs)
            if ratio_l == ratio_r:
                cur = left  # tie toward the lower-index child
            elif (ratio_l > ratio_r) == larger:
                cur = left
            else:
                cur = right
            entry = steer.get(cur)
        return bss_draw(cur, tree, f, rng)

    if kk == 1:
        for _ in range(remaining):
            steered_draw(leaves[0])
        return

    # The footnote index tracks the running deviation estimate sigma_{x,t};
    # the theorem and fig-style indices use the frozen prefix estimate.
    running = k.index_variant == "footnote"
    counts = [tree.count(x) for x in leaves]
    weights = [x.weight for x in leaves]
    leaf_stats = [tree.stats(x) for x in leaves]
    if running:
        sums = [st.value_sum for st in leaf_stats]
        sqs = [math.fsum(v * v for v in st.values) for st in leaf_stats]

        def sigma_of(j: int) -> float:
            m = sums[j] / counts[j]
            return math.sqrt(max(sqs[j] / counts[j] - m * m, 0.0))
    else:
        frozen = [state.frozen_sigma(x) for x in leaves]

        def sigma_of(j: int) -> float:
            return frozen[j]

    indices = [ucb_index(weights[j], counts[j], sigma_of(j), k.A, k.n,
                         k.index_variant) for j in range(kk)]
    index_range = range(kk)
    for _ in range(remaining):
        j = max(index_range, key=indices.__getitem__)  # first max: lowest (h,i)
        _, value = steered_draw(leaves[j])
        counts[j] += 1
        if running:
            sums[j] += value
            sqs[j] += value * value
        indices[j] = ucb_index(weights[j], counts[j], sigma_of(j), k.A, k.n,
                               k.index_variant)


def final_estimate(tree: PartitionTree, explored_cut: Cut) -> float:
    """Stratified mean over the deepest explored partition, all samples."""
    return math.fsum(x.weight * tree.stats(x).mean_all() for x in explored_cut)


@dataclass
class UlcbResult:
    estimate: float
    report: RiskReport
    selected_cut: Cut
    explored_cut: Cut
    constants: UlcbConstants
    t_explore: int
    tree: PartitionTree


def run_mc_ulcb(f: NoisyIntegrand, n: int, delta: float = 0.1,
                options: Optional[UlcbOptions] = None,
                rng: Optional[np.random.Generator] = None) -> UlcbResult:
    """Full run: initialize, explore, select, exploit; exactly n draws."""
    options = options or UlcbOptions()
    rng = rng if rng is not None else np.random.default_rng()
    _, _, t_coeff = resolve_meta(f, n, delta, options)
    t0 = t_threshold(0, t_coeff, n)
    if t0 < 2:
        raise ConfigError("budget too small for a 2-sample root estimate")
    if t0 > n:
        raise BudgetError(f"initialization needs {t0} samples but the budget is {n}")

    # resolve_meta is deterministic, so H here matches compute_constants below.
    tree = PartitionTree(max_depth=resolve_meta(f, n, delta, options)[1])
    root = tree.ROOT
    for _ in range(t0):
        bss_draw(root, tree, f, rng)

    sigma_root = sigma_hat(root, tree, t_coeff, n)
    k = compute_constants(f, n, delta, sigma_root, options)
    state = _RunState(tree, k)
    tree.stats(root).r_value = initial_r(k)

    state.split_with_shares(root)
    t_explore = t0 + exploration_phase(f, state, rng, already_used=t0)
    selected = select_partition(tree, k, state)
    exploitation_phase(f, state, selected, n - t_explore, rng)

    explored = Cut(tuple(tree.leaves()))
    explored.validate()
    estimate = final_estimate(tree, explored)

    if tree.total_count() != n:
        raise InvariantError(
            f"budget conservation violated: drew {tree.total_count()} of {n}")

    if f.stratum_sd is not None:
        sigmas = {x: f.stratum_sd(x.low, x.high) for x in explored}
        sigma_used = "true_sigma"
    else:
        sigmas = {x: state.frozen_sigma(x) for x in explored}
        sigma_used = "estimated_sigma"
    counts = {x: tree.count(x) for x in explored}
    p_risk = pseudo_risk(explored, sigmas, counts)
    o_risk, _ = oracle_risk(explored, sigmas, n)
    report = RiskReport(pseudo_risk=p_risk, oracle_risk=o_risk,
                        allocation=sorted(counts.items()), sigma_used=sigma_used)

    return UlcbResult(estimate=estimate, report=report, selected_cut=selected,
                      explored_cut=explored, constants=k, t_explore=t_explore,
                      tree=tree)


def run_record(result: UlcbResult, seed=None) -> dict:
    """JSON-serializable record of one run."""
    k = result.constants
    state = _RunState(result.tree, k)

    def maybe_sigma(node: NodeId):
        try:
            return state.frozen_sigma(node)
        except Exception:
            return None

    return {
        "seed": seed,
        "n": k.n,
        "delta": k.delta,
        "mode": k.mode,
        "constants": {
            "A": k.A, "H": k.H, "c": k.c,
            "sigma_tilde": k.sigma_tilde_global,
            "B": k.B, "C_max_prime": k.C_max_prime,
        },
        "T_explore": result.t_explore,
        "selected_cut": [[x.depth, x.index] for x in result.selected_cut],
        "explored_cut": [[x.depth, x.index] for x in result.explored_cut],
        "estimate": result.estimate,
        "allocation": [[x.depth, x.index, t] for x, t in result.report.allocation],
        "tree": result.tree.dump_lines(sigma_of=maybe_sigma),
    }
