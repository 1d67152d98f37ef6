import math

import numpy as np
import pytest

from errors import ConfigError
from planner import (
    Infeasible,
    PlannerParams,
    bernstein_tail,
    error_ceiling,
    failure_probability,
    plan_sweep,
    sample_size,
    weighted_bernstein_tail,
    xi_simvote,
    xi_univote,
)
from voting import Thresholds

EPSILONS = [0.10, 0.15, 0.20, 0.25, 0.30]
SIGMA_SQ = 0.005766


def test_univote_ratio_is_non_increasing_in_epsilon():
    ratios = [xi_univote(PlannerParams(epsilon=e, l=0.9996, sigma_hat_sq=SIGMA_SQ)) for e in EPSILONS]
    assert all(isinstance(r, float) and 0 < r < 1 for r in ratios)
    assert all(b <= a for a, b in zip(ratios, ratios[1:]))


@pytest.mark.parametrize("epsilon", EPSILONS)
def test_simvote_needs_about_twice_the_samples(epsilon):
    params = PlannerParams(epsilon=epsilon, l=0.9996, sigma_hat_sq=SIGMA_SQ, v=2.0)
    ratio = xi_simvote(params) / xi_univote(params)
    assert 1.8 <= ratio <= 2.2


def test_closed_form_value():
    params = PlannerParams(epsilon=0.1, l=0.9996, sigma_hat_sq=0.25)
    expected = 0.5 - math.sqrt(0.25 + math.log(0.9996) * (2 * 0.25 / 0.01 + 2 / 0.3))
    assert xi_univote(params) == pytest.approx(expected)


def test_infeasible_when_radicand_negative():
    result = xi_univote(PlannerParams(epsilon=0.01, l=0.9, sigma_hat_sq=0.25))
    assert isinstance(result, Infeasible)
    assert result.radicand < 0


def test_l_equal_one_gives_zero_ratio():
    assert xi_univote(PlannerParams(epsilon=0.1, l=1.0)) == 0.0
    assert xi_simvote(PlannerParams(epsilon=0.1, l=1.0)) == 0.0


@pytest.mark.parametrize(
    "kwargs",
    [{"epsilon": 0.0}, {"epsilon": 1.0}, {"epsilon": 0.1, "l": 0.0}, {"epsilon": 0.1, "l": 1.5},
     {"epsilon": 0.1, "sigma_hat_sq": 0.3}, {"epsilon": 0.1, "v": 0.5}],
)
def test_invalid_params(kwargs):
    with pytest.raises(ConfigError):
        xi_univote(PlannerParams(**kwargs))


def test_bernstein_tail_shrinks_with_sample_size():
    tails = [bernstein_tail(k, 1000, 0.1, 0.25) for k in (10, 50, 100, 500)]
    assert all(b < a for a, b in zip(tails, tails[1:]))


def test_full_sample_zeroes_the_exponent():
    # (n - k) / (n - 1) = 0 when the sample is the population
    assert bernstein_tail(1000, 1000, 0.1, 0.25) == 1.0
    assert bernstein_tail(1, 1, 0.1, 0.25) == 1.0


def test_weighted_tail_is_looser():
    assert weighted_bernstein_tail(100, 1000, 0.1, 0.25, v=2.0) > bernstein_tail(100, 1000, 0.1, 0.25)


def test_tail_rejects_bad_sample_size():
    with pytest.raises(ConfigError):
        bernstein_tail(0, 10, 0.1, 0.25)
    with pytest.raises(ConfigError):
        bernstein_tail(11, 10, 0.1, 0.25)


def test_error_ceiling():
    assert error_ceiling(Thresholds(lb=0.15), 0.10) == pytest.approx(0.25)
    assert error_ceiling(Thresholds(lb=0.1, ub=0.7), 0.05) == pytest.approx(0.35)


def test_failure_probability():
    assert failure_probability(0.9996, 14_608) == pytest.approx(2 * 0.9996**14_608)
    assert failure_probability(1.0, 10) == 1.0


def test_sample_size():
    assert sample_size(12_500, 0.005, 101) == 101
    assert sample_size(50, 0.005, 101) == 50
    assert sample_size(100_000, 0.005, 101) == 500
    assert sample_size(30, 0.1, 1) == 3


def test_plan_sweep_frame():
    frame = plan_sweep(EPSILONS, SIGMA_SQ, 0.9996, 2.0, Thresholds(lb=0.15))
    assert list(frame.columns) == ["epsilon", "xi_uni", "xi_sim", "ceiling"]
    assert len(frame) == 5
    assert frame["xi_uni"].is_monotonic_decreasing
    assert frame["ceiling"].tolist() == pytest.approx([0.25, 0.30, 0.35, 0.40, 0.45])


@pytest.mark.parametrize("sigma_sq", [SIGMA_SQ, 0.25])
@pytest.mark.parametrize("epsilon", EPSILONS)
def test_planned_sample_meets_the_failure_probability(sigma_sq, epsilon):
    n, l = 14_608, 0.9996
    xi = xi_univote(PlannerParams(epsilon=epsilon, l=l, sigma_hat_sq=sigma_sq))
    k = math.ceil(xi * n)

    assert bernstein_tail(k, n, epsilon, sigma_sq) <= failure_probability(l, n) * (1 + 1e-9)


@pytest.mark.parametrize("epsilon", [0.1, 0.15, 0.2])
@pytest.mark.parametrize("mu", [0.5, 0.8])
def test_weighted_tail_bounds_skewed_weighted_means(mu, epsilon):
    n, k, v, resamples = 400, 80, 1.5, 5000
    rng = np.random.default_rng(17)
    population = np.zeros(n)
    population[: round(mu * n)] = 1.0
    mean = population.mean()
    weights = np.where(np.arange(k) % 2 == 0, 1.5, 0.5) / k

    picks = rng.random((resamples, n)).argsort(axis=1)[:, :k]
    estimates = population[picks] @ weights
    frequency = float((np.abs(estimates - mean) >= epsilon - 1e-12).mean())

    bound = weighted_bernstein_tail(k, n, epsilon, mean * (1 - mean), v=v)
    assert weights.max() <= v / k
    assert frequency <= bound + 3 * math.sqrt(0.25 / resamples)
