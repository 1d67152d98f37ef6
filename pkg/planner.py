"""
Closed-form sample-ratio planning and finite-population Bernstein tail bounds.

xi_univote / xi_simvote turn an error tolerance epsilon and a failure base l
into the smallest sample ratio the voting guarantees certify; the tail
functions evaluate the underlying bounds for a concrete sample size.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Union

import pandas as pd

from errors import ConfigError
from voting import Thresholds

BERNOULLI_MAX_VARIANCE = 0.25


@dataclass(frozen=True)
class PlannerParams:
    epsilon: float
    l: float = 0.9996
    sigma_hat_sq: float = BERNOULLI_MAX_VARIANCE
    v: float = 2.0
    n: int = 0
    r_bound: float = 1.0

    def validate(self) -> "PlannerParams":
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if not 0.0 < self.l <= 1.0:
            raise ConfigError(f"failure base l must be in (0, 1], got {self.l}")
        if not 0.0 <= self.sigma_hat_sq <= BERNOULLI_MAX_VARIANCE:
            raise ConfigError(f"sigma_hat_sq must be in [0, 0.25], got {self.sigma_hat_sq}")
        if self.v < 1.0:
            raise ConfigError(f"weight-skew v must be >= 1, got {self.v}")
        if self.n < 0 or self.r_bound <= 0:
            raise ConfigError("n must be >= 0 and r_bound > 0")
        return self


@dataclass(frozen=True)
class Infeasible:
    """No sub-full sample certifies the bound: relax epsilon, raise l, or scan linearly."""

    radicand: float
    reason: str = "negative radicand"


SampleRatio = Union[float, Infeasible]


def _ratio_from_radicand(radicand: float) -> SampleRatio:
    if radicand < 0:
        return Infeasible(radicand)
    xi = 0.5 - math.sqrt(radicand)
    # xi == 0 only for l == 1, where any positive ratio satisfies the bound
    return min(1.0, max(0.0, xi))


def xi_univote(p: PlannerParams) -> SampleRatio:
    """xi >= 1/2 - sqrt(1/4 + ln(l) * (2 sigma^2 / eps^2 + 2 / (3 eps)))"""
    p.validate()
    eps = p.epsilon
    radicand = 0.25 + math.log(p.l) * (2 * p.sigma_hat_sq / eps**2 + 2 / (3 * eps))
    return _ratio_from_radicand(radicand)


def xi_simvote(p: PlannerParams) -> SampleRatio:
    """xi >= 1/2 - sqrt(1/4 + v ln(l) (6 sigma^2 + 2 eps) / (3 eps^2))"""
    p.validate()
    eps = p.epsilon
    radicand = 0.25 + p.v * math.log(p.l) * (6 * p.sigma_hat_sq + 2 * eps) / (3 * eps**2)
    return _ratio_from_radicand(radicand)


def _finite_population_factor(k: int, n: int) -> float:
    if not 1 <= k <= n:
        raise ConfigError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n == 1:
        return 0.0
    return (n - k) / (n - 1)


def bernstein_tail(k: int, n: int, epsilon: float, sigma_hat_sq: float, r_bound: float = 1.0) -> float:
    """Pr[|mean_hat - mean| >= eps] <= 2 exp(-k eps^2 / (2 sigma^2 + 2 R eps / 3) * (n - k) / (n - 1))"""
    factor = _finite_population_factor(k, n)
    exponent = k * epsilon**2 / (2 * sigma_hat_sq + 2 * r_bound * epsilon / 3) * factor
    return min(1.0, 2.0 * math.exp(-exponent))


def weighted_bernstein_tail(k: int, n: int, epsilon: float, sigma_hat_sq: float, v: float = 2.0) -> float:
    """Same bound for a weighted mean with max weight <= v / k."""
    if v < 1.0:
        raise ConfigError(f"weight-skew v must be >= 1, got {v}")
    factor = _finite_population_factor(k, n)
    exponent = 3 * k * epsilon**2 / ((6 * sigma_hat_sq + 2 * epsilon) * v) * factor
    return min(1.0, 2.0 * math.exp(-exponent))


def error_ceiling(th: Thresholds, epsilon: float) -> float:
    """Per-tuple voting error guaranteed by the thresholds: max(lb + eps, 1 - (ub - eps))."""
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError(f"epsilon must be in [0, 1), got {epsilon}")
    return max(th.lb + epsilon, 1.0 - (th.ub - epsilon))


def failure_probability(l: float, n: int) -> float:
    return min(1.0, 2.0 * l**n)


def sample_size(n: int, xi: float, min_sample: int) -> int:
    """s = min(n, max(ceil(xi * n), min_sample))"""
    # rounding guards ceil against representation error such as 0.1 * 30
    return min(n, max(math.ceil(round(xi * n, 9)), min_sample))


def plan_sweep(
    epsilons: Iterable[float],
    sigma_hat_sq: float,
    l: float,
    v: float,
    th: Thresholds,
    n: int = 0,
) -> pd.DataFrame:
    """One row per epsilon: both planned ratios (NaN when infeasible) and the error ceiling."""
    rows = []
    for eps in epsilons:
        params = PlannerParams(epsilon=eps, l=l, sigma_hat_sq=sigma_hat_sq, v=v, n=n)
        uni, sim = xi_univote(params), xi_simvote(params)
        rows.append({
            "epsilon": eps,
            "xi_uni": math.nan if isinstance(uni, Infeasible) else uni,
            "xi_sim": math.nan if isinstance(sim, Infeasible) else sim,
            "ceiling": error_ceiling(th, eps),
        })
    return pd.DataFrame(rows, columns=["epsilon", "xi_uni", "xi_sim", "ceiling"])
