"""Risk metrics and the statistical harness.

Pseudo-risk sums w^2 sigma^2 / T over a partition; its minimum over
allocations at total budget n is the oracle risk (sum of w*sigma)^2 / n,
attained by the proportional allocation lambda = w*sigma / Sigma.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .integrands import NoisyIntegrand
from .partition import Cut, NodeId

__all__ = [
    "RiskReport",
    "pseudo_risk",
    "pseudo_risk_arrays",
    "oracle_risk",
    "oracle_risk_arrays",
    "theorem1_bound",
    "confidence_width",
    "mse_harness",
    "interval_sigma",
    "stratum_sd_table",
]


@dataclass
class RiskReport:
    """Risk summary for one run (or aggregated over runs)."""

    pseudo_risk: float
    oracle_risk: float
    allocation: list[tuple[NodeId, int]]
    sigma_used: str  # "true_sigma" | "estimated_sigma"
    mse: Optional[float] = None


def pseudo_risk_arrays(weights: Sequence[float], sigmas: Sequence[float],
                       counts: Sequence[float]) -> float:
    # counts may be real (e.g. the ideal allocation lambda * n).
    total = 0.0
    for w, s, t in zip(weights, sigmas, counts):
        if t <= 0:
            raise DomainError("pseudo-risk needs a positive sample count per stratum")
        total += (w * s) ** 2 / t
    return total


def pseudo_risk(cut: Cut, sigmas: Mapping[NodeId, float],
                counts: Mapping[NodeId, int]) -> float:
    """Sum over the cut of w^2 sigma^2 / T."""
    leaves = list(cut)
    return pseudo_risk_arrays([n.weight for n in leaves],
                              [sigmas[n] for n in leaves],
                              [counts[n] for n in leaves])


def oracle_risk_arrays(weights: Sequence[float], sigmas: Sequence[float],
                       n: int) -> tuple[float, list[float]]:
    if n < 1:
        raise DomainError("budget must be at least 1")
    parts = [w * s for w, s in zip(weights, sigmas)]
    total = math.fsum(parts)
    if total <= 0.0:
        k = len(parts)
        return 0.0, [1.0 / k] * k
    return total * total / n, [p / total for p in parts]


def oracle_risk(cut: Cut, sigmas: Mapping[NodeId, float],
                n: int) -> tuple[float, dict[NodeId, float]]:
    """Oracle risk (sum w*sigma)^2/n and the optimal allocation fractions."""
    leaves = list(cut)
    risk, lams = oracle_risk_arrays([x.weight for x in leaves],
                                    [sigmas[x] for x in leaves], n)
    return risk, dict(zip(leaves, lams))


def theorem1_bound(weights: Sequence[float], sigma_total: float, n: int,
                   c_const: float) -> float:
    """Sigma^2/n + C * Sigma * sum(w^(2/3)) / n^(4/3)."""
    if n < 1:
        raise DomainError("budget must be at least 1")
    wsum = math.fsum(w ** (2.0 / 3.0) for w in weights)
    return sigma_total ** 2 / n + c_const * sigma_total * wsum / n ** (4.0 / 3.0)


def confidence_width(t: int, variance: float, b: float, delta: float) -> float:
    """2 * sqrt((1 + 3b + 4V) * log(2/delta) / t), bounding |sd_hat - sd|."""
    if t < 1:
        raise DomainError("need at least one sample")
    if delta <= 0:
        raise DomainError("delta must be positive")
    return 2.0 * math.sqrt((1.0 + 3.0 * b + 4.0 * variance) * math.log(2.0 / delta) / t)


def interval_sigma(f: NoisyIntegrand, lo: float, hi: float) -> float:
    if f.stratum_sd is None:
        raise ConfigError(f"{f.label} exposes no analytic stratum sd")
    return f.stratum_sd(lo, hi)


def _run_one(args):
    runner, f, n, seed = args
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return seed, float(runner(f, n, rng))


def mse_harness(runner: Callable[[NoisyIntegrand, int, np.random.Generator], float],
                f: NoisyIntegrand,
                reference: float,
                reps: int,
                n: int,
                seeds: Sequence[int],
                jobs: int = 1) -> tuple[float, float]:
    """Mean squared error of `runner` estimates against a reference value.

    Returns (mse, stderr of the mse).  Results are reduced in seed order with
    exact summation, so the output is invariant under permutation of the seed
    list and under the degree of parallelism.
    """
    if reps < 2:
        raise ConfigError("need at least two repetitions")
    if len(seeds) < reps:
        raise ConfigError("not enough seeds for the requested repetitions")
    tasks = [(runner, f, n, int(s)) for s in seeds[:reps]]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_run_one, tasks, chunksize=max(1, reps // (4 * jobs))))
    else:
        results = dict(map(_run_one, tasks))
    sq_errors = [(results[int(s)] - reference) ** 2 for s in sorted(seeds[:reps])]
    mse = math.fsum(sq_errors) / reps
    var = math.fsum((e - mse) ** 2 for e in sq_errors) / (reps - 1)
    return mse, math.sqrt(var / reps)


def stratum_sd_table(f: NoisyIntegrand, depth: int, n_per_stratum: int,
                     seed: int, cache_path: Optional[str] = None) -> dict[NodeId, float]:
    """Brute-force per-stratum standard deviations for all nodes to `depth`.

    One batch pass over the deepest level; coarser levels are aggregated
    exactly from per-leaf first and second moments.  Cached as JSON when a
    path is given.
    """
    if cache_path and os.path.exists(cache_path):
        with open(cache_path) as fh:
            raw = json.load(fh)
        return {NodeId(h, i): s for h, i, s in raw}

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    k = 1 << depth
    means = np.empty(k)
    seconds = np.empty(k)
    for i in range(k):
        lo = i / k
        xs = lo + rng.random(n_per_stratum) / k
        xs[xs == 0.0] = 0.5 / 2 ** 53 / k
        vals = f.batch(xs, rng)
        means[i] = vals.mean()
        seconds[i] = np.mean(vals * vals)

    table: dict[NodeId, float] = {}
    level_mean, level_second = means, seconds
    for h in range(depth, -1, -1):
        for i in range(1 << h):
            var = level_second[i] - level_mean[i] ** 2
            table[NodeId(h, i)] = math.sqrt(max(var, 0.0))
        if h:
            level_mean = 0.5 * (level_mean[0::2] + level_mean[1::2])
            level_second = 0.5 * (level_second[0::2] + level_second[1::2])

    if cache_path:
        raw = [[node.depth, node.index, sd] for node, sd in sorted(table.items())]
        with open(cache_path, "w") as fh:
            json.dump(raw, fh)
    return table
