"""Noisy integrands on [0,1]: synthetic test functions and the Asian-option model.

An integrand is a function that, queried at a point x in [0,1] with a random
source, returns one noisy evaluation.  Synthetic integrands expose analytic
per-stratum means and standard deviations so that allocation and risk
computations can be checked against closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "NoisyIntegrand",
    "AsianOptionParams",
    "normal_inverse_cdf",
    "normal_cdf",
    "synthetic_integrand",
    "asian_option_integrand",
    "reference_price",
    "PAPER_ASIAN_PARAMS",
    "ASIAN_REFERENCE_PRICE",
    "ASIAN_REFERENCE_STDERR",
    "ASIAN_REFERENCE_SAMPLES",
]


# ---------------------------------------------------------------------------
# Standard normal CDF / inverse CDF


def normal_cdf(z: float) -> float:
    """Standard normal CDF, accurate to double precision via erfc."""
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


# Acklam's rational approximation coefficients for the inverse normal CDF.
_ACK_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
          1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ACK_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
          6.680131188771972e+01, -1.328068155288572e+01)
_ACK_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
          -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ACK_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
          3.754408661907416e+00)

_ACK_LOW = 0.02425
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _acklam(u: float) -> float:
    if u < _ACK_LOW:
        q = math.sqrt(-2.0 * math.log(u))
        return ((((((_ACK_C[0] * q + _ACK_C[1]) * q + _ACK_C[2]) * q + _ACK_C[3]) * q
                  + _ACK_C[4]) * q + _ACK_C[5])
                / ((((_ACK_D[0] * q + _ACK_D[1]) * q + _ACK_D[2]) * q + _ACK_D[3]) * q + 1.0))
    if u > 1.0 - _ACK_LOW:
        q = math.sqrt(-2.0 * math.log(1.0 - u))
        return -((((((_ACK_C[0] * q + _ACK_C[1]) * q + _ACK_C[2]) * q + _ACK_C[3]) * q
                   + _ACK_C[4]) * q + _ACK_C[5])
                 / ((((_ACK_D[0] * q + _ACK_D[1]) * q + _ACK_D[2]) * q + _ACK_D[3]) * q + 1.0))
    q = u - 0.5
    r = q * q
    return ((((((_ACK_A[0] * r + _ACK_A[1]) * r + _ACK_A[2]) * r + _ACK_A[3]) * r
              + _ACK_A[4]) * r + _ACK_A[5]) * q
            / (((((_ACK_B[0] * r + _ACK_B[1]) * r + _ACK_B[2]) * r + _ACK_B[3]) * r
                + _ACK_B[4]) * r + 1.0))


def normal_inverse_cdf(u: float) -> float:
    """Inverse standard normal CDF with |CDF(z) - u| <= 1e-9.

    Rational approximation followed by one Newton step against the
    erfc-based CDF.  Raises DomainError outside the open interval (0,1).
    """
    if not 0.0 < u < 1.0:
        raise DomainError(f"quantile argument must lie in (0,1), got {u}")
    z = _acklam(u)
    # One Newton refinement: z -= (CDF(z) - u) / pdf(z).
    err = normal_cdf(z) - u
    pdf = math.exp(-0.5 * z * z) / _SQRT_2PI
    if pdf > 0.0:
        z -= err / pdf
    return z


_erfc_vec = np.frompyfunc(math.erfc, 1, 1)


def _normal_inverse_cdf_vec(u: np.ndarray) -> np.ndarray:
    """Vectorized inverse normal CDF (same rational + Newton scheme)."""
    u = np.asarray(u, dtype=float)
    z = np.empty_like(u)
    lo = u < _ACK_LOW
    hi = u > 1.0 - _ACK_LOW
    mid = ~(lo | hi)

    def _tail(q):
        num = ((((_ACK_C[0] * q + _ACK_C[1]) * q + _ACK_C[2]) * q + _ACK_C[3]) * q + _ACK_C[4]) * q + _ACK_C[5]
        den = (((_ACK_D[0] * q + _ACK_D[1]) * q + _ACK_D[2]) * q + _ACK_D[3]) * q + 1.0
        return num / den

    if lo.any():
        z[lo] = _tail(np.sqrt(-2.0 * np.log(u[lo])))
    if hi.any():
        z[hi] = -_tail(np.sqrt(-2.0 * np.log(1.0 - u[hi])))
    if mid.any():
        q = u[mid] - 0.5
        r = q * q
        num = (((((_ACK_A[0] * r + _ACK_A[1]) * r + _ACK_A[2]) * r + _ACK_A[3]) * r + _ACK_A[4]) * r + _ACK_A[5]) * q
        den = ((((_ACK_B[0] * r + _ACK_B[1]) * r + _ACK_B[2]) * r + _ACK_B[3]) * r + _ACK_B[4]) * r + 1.0
        z[mid] = num / den
    cdf = 0.5 * _erfc_vec(-z / math.sqrt(2.0)).astype(float)
    pdf = np.exp(-0.5 * z * z) / _SQRT_2PI
    return z - (cdf - u) / pdf


# ---------------------------------------------------------------------------
# Integrand abstraction


@dataclass(frozen=True)
class NoisyIntegrand:
    """A sampleable noisy function x in [0,1] -> real.

    sample(x, rng) returns one noisy evaluation; it is deterministic given
    (x, rng state).  f_max bounds |g| and s (the conditional mean and noise
    scale), b is the sub-Gaussian noise scale.  stratum_mean / stratum_sd,
    when present, give the analytic mean and standard deviation of a sample
    drawn uniformly in [lo, hi) and are used as test oracles.
    """

    sample: Callable[[float, np.random.Generator], float]
    f_max: float
    b: float
    label: str = "integrand"
    stratum_mean: Optional[Callable[[float, float], float]] = None
    stratum_sd: Optional[Callable[[float, float], float]] = None
    sample_batch: Optional[Callable[[np.ndarray, np.random.Generator], np.ndarray]] = None

    def __post_init__(self):
        if self.f_max <= 0:
            raise ConfigError("f_max must be positive")
        if self.b < 0:
            raise ConfigError("b must be nonnegative")

    def integral(self) -> float:
        """Analytic value of the integral, when stratum_mean is available."""
        if self.stratum_mean is None:
            raise ConfigError(f"{self.label} has no analytic mean")
        return self.stratum_mean(0.0, 1.0)

    def batch(self, xs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Evaluate at many points, vectorized when the integrand supports it."""
        if self.sample_batch is not None:
            return self.sample_batch(xs, rng)
        return np.array([self.sample(float(x), rng) for x in xs])


# ---------------------------------------------------------------------------
# Synthetic integrands with closed-form per-stratum statistics


def _step_fraction(lo: float, hi: float, cut: float) -> float:
    # Fraction of [lo, hi) lying below the jump point.
    if hi <= lo:
        raise DomainError("empty stratum")
    return min(max((cut - lo) / (hi - lo), 0.0), 1.0)


def synthetic_integrand(kind: str, params: Optional[list] = None) -> NoisyIntegrand:
    """Build a synthetic test integrand with analytically known statistics.

    kinds:
      constant       params [value]                        g == value, no noise
      step           params [left, right, cut, noise_left, noise_right]
                     g = left on [0,cut), right on [cut,1]; Gaussian noise with
                     per-side standard deviation
      smooth_hetero  params [noise_sd]                     g(x) = x plus Gaussian noise
    """
    params = list(params) if params is not None else []

    if kind == "constant":
        if len(params) > 1:
            raise ConfigError("constant takes at most [value]")
        v = float(params[0]) if params else 0.5

        def sample(x, rng, _v=v):
            return _v

        def sample_batch(xs, rng, _v=v):
            return np.full(len(xs), _v)

        return NoisyIntegrand(
            sample=sample, f_max=max(abs(v), 1.0), b=0.0, label=f"constant({v})",
            stratum_mean=lambda lo, hi: v,
            stratum_sd=lambda lo, hi: 0.0,
            sample_batch=sample_batch,
        )

    if kind == "step":
        defaults = [1.0, 0.0, 0.5, 0.0, 0.0]
        if len(params) > 5:
            raise ConfigError("step takes [left, right, cut, noise_left, noise_right]")
        left, right, cut, nl, nr = (params + defaults[len(params):])
        left, right, cut, nl, nr = map(float, (left, right, cut, nl, nr))
        if not 0.0 < cut < 1.0:
            raise ConfigError("step cut point must lie strictly inside (0,1)")
        if nl < 0 or nr < 0:
            raise ConfigError("noise levels must be nonnegative")
        noisy = nl > 0 or nr > 0

        def sample(x, rng):
            if x < cut:
                g, s = left, nl
            else:
                g, s = right, nr
            return g + s * rng.standard_normal() if s > 0 else g

        def sample_batch(xs, rng):
            below = xs < cut
            out = np.where(below, left, right)
            if noisy:
                out = out + np.where(below, nl, nr) * rng.standard_normal(len(xs))
            return out

        def stratum_mean(lo, hi):
            p = _step_fraction(lo, hi, cut)
            return p * left + (1.0 - p) * right

        def stratum_sd(lo, hi):
            p = _step_fraction(lo, hi, cut)
            g_var = p * (1.0 - p) * (left - right) ** 2
            n_var = p * nl ** 2 + (1.0 - p) * nr ** 2
            return math.sqrt(g_var + n_var)

        f_max = max(abs(left), abs(right), nl, nr)
        return NoisyIntegrand(
            sample=sample, f_max=f_max if f_max > 0 else 1.0,
            b=2.0 if noisy else 0.0, label="step",
            stratum_mean=stratum_mean, stratum_sd=stratum_sd,
            sample_batch=sample_batch,
        )

    if kind == "smooth_hetero":
        if len(params) > 1:
            raise ConfigError("smooth_hetero takes at most [noise_sd]")
        noise = float(params[0]) if params else 0.1
        if noise < 0:
            raise ConfigError("noise_sd must be nonnegative")

        def sample(x, rng):
            return x + noise * rng.standard_normal() if noise > 0 else x

        def sample_batch(xs, rng):
            out = np.asarray(xs, dtype=float).copy()
            if noise > 0:
                out += noise * rng.standard_normal(len(xs))
            return out

        return NoisyIntegrand(
            sample=sample, f_max=max(1.0, noise), b=2.0 if noise > 0 else 0.0,
            label="smooth_hetero",
            stratum_mean=lambda lo, hi: 0.5 * (lo + hi),
            stratum_sd=lambda lo, hi: math.sqrt((hi - lo) ** 2 / 12.0 + noise ** 2),
            sample_batch=sample_batch,
        )

    raise ConfigError(f"unknown synthetic integrand kind {kind!r}")


# ---------------------------------------------------------------------------
# Asian option priced by stratifying on the terminal Brownian quantile


@dataclass(frozen=True)
class AsianOptionParams:
    """Black-Scholes Asian call parameters with a discrete averaging grid."""

    s0_price: float = 100.0
    rate: float = 0.05
    vol: float = 0.30
    maturity: float = 1.0
    strike: float = 90.0
    bridge_steps: int = 16

    def __post_init__(self):
        if self.s0_price <= 0:
            raise ConfigError("s0_price must be positive")
        if self.vol < 0:
            raise ConfigError("vol must be nonnegative")
        if self.maturity <= 0:
            raise ConfigError("maturity must be positive")
        if self.bridge_steps < 1:
            raise ConfigError("bridge_steps must be at least 1")


PAPER_ASIAN_PARAMS = AsianOptionParams(
    s0_price=100.0, rate=0.05, vol=0.30, maturity=1.0, strike=90.0, bridge_steps=16
)

# Reference price for PAPER_ASIAN_PARAMS, computed once by crude Monte Carlo
# with 1e7 paths (reference_price(PAPER_ASIAN_PARAMS, 10_000_000, seed=20240601)).
ASIAN_REFERENCE_PRICE = 14.311741701252604
ASIAN_REFERENCE_STDERR = 0.004869746841870498
ASIAN_REFERENCE_SAMPLES = 10_000_000


def asian_option_integrand(params: AsianOptionParams,
                           f_max: float = 60.0,
                           b: float = 10.0) -> NoisyIntegrand:
    """Discounted Asian-call payoff as a noisy integrand of the W_T quantile.

    The stratification variable x in (0,1) fixes the terminal Brownian value
    W_T = sqrt(T) * InvCDF(x); the remaining path is filled by a Brownian
    bridge on the equispaced grid t_k = kT/d, and the time integral in the
    payoff is approximated by the plain average of the d grid values.
    """
    d = params.bridge_steps
    T = params.maturity
    dt = T / d
    sqrt_t = math.sqrt(T)
    sqrt_dt = math.sqrt(dt)
    times = np.arange(1, d + 1) * dt
    drift = (params.rate - 0.5 * params.vol ** 2) * times
    ratio = times / T
    disc = math.exp(-params.rate * T)
    s0, vol, strike = params.s0_price, params.vol, params.strike
    drift_list = drift.tolist()
    ratio_list = ratio.tolist()
    exp = math.exp

    def sample(x: float, rng: np.random.Generator) -> float:
        # Hot path of the sequential allocators; plain floats beat numpy here.
        if not 0.0 < x < 1.0:
            raise DomainError(f"quantile x must lie in (0,1), got {x}")
        w_end = sqrt_t * normal_inverse_cdf(x)
        gauss = rng.standard_normal(d).tolist()
        acc = 0.0
        cum = []
        for g in gauss:
            acc += g
            cum.append(acc)
        shift = w_end - acc * sqrt_dt
        total = 0.0
        for i in range(d):
            total += exp(drift_list[i] + vol * (cum[i] * sqrt_dt + ratio_list[i] * shift))
        gain = s0 * total / d - strike
        return disc * gain if gain > 0.0 else 0.0

    def sample_batch(xs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        if np.any((xs <= 0.0) | (xs >= 1.0)):
            raise DomainError("quantiles must lie in (0,1)")
        w_end = sqrt_t * _normal_inverse_cdf_vec(xs)
        w = np.cumsum(rng.standard_normal((len(xs), d)), axis=1) * sqrt_dt
        w += ratio[None, :] * (w_end - w[:, -1])[:, None]
        avg = s0 * np.exp(drift[None, :] + vol * w).mean(axis=1)
        return disc * np.maximum(avg - strike, 0.0)

    return NoisyIntegrand(
        sample=sample, f_max=f_max, b=b,
        label=f"asian(S0={s0},C={strike},d={d})",
        sample_batch=sample_batch,
    )


def reference_price(params: AsianOptionParams,
                    n_samples: int,
                    seed: int,
                    chunk: int = 200_000) -> tuple[float, float]:
    """Brute-force crude Monte-Carlo price with its standard error."""
    f = asian_option_integrand(params)
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        xs = rng.random(m)
        xs[xs == 0.0] = 0.5 / 2 ** 53
        vals = f.sample_batch(xs, rng)
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals * vals))
        done += m
    mean = total / n_samples
    var = total_sq / n_samples - mean * mean
    return mean, math.sqrt(max(var, 0.0) / n_samples)
