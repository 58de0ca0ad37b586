"""Inter-pixel variance and its trajectory under progressive noising."""

import numpy as np
import pytest

from synthscan.errors import ParameterError
from synthscan.variance import (
    distribution_summary,
    inter_pixel_variance,
    variance_trajectory,
)
from synthscan.schedule import linear_betas


# ---------------------------------------------------------------- oracles


def two_pass_variance(values):
    """Textbook population variance: mean first, then squared deviations."""
    vals = [float(v) for v in np.ravel(values)]
    mean = sum(vals) / len(vals)
    return sum((v - mean) ** 2 for v in vals) / len(vals)


# ---------------------------------------------------------------- scalar


def test_constant_tensor_has_zero_variance():
    assert inter_pixel_variance(np.full((5, 5, 3), 0.7)) == 0.0


def test_fair_binary_tensor_variance():
    x = np.array([0.0, 1.0, 0.0, 1.0])
    assert inter_pixel_variance(x) == pytest.approx(0.25, abs=1e-15)


def test_variance_matches_two_pass_oracle():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(13, 7, 3))
    assert inter_pixel_variance(x) == pytest.approx(two_pass_variance(x), abs=1e-10)


def test_variance_shift_and_scale_laws():
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(10, 10))
    v = inter_pixel_variance(x)
    assert inter_pixel_variance(x + 3.0) == pytest.approx(v, abs=1e-12)
    assert inter_pixel_variance(2.0 * x) == pytest.approx(4.0 * v, rel=1e-12)


def test_variance_needs_two_elements():
    with pytest.raises(ParameterError):
        inter_pixel_variance(np.array([1.0]))


# ------------------------------------------------------------ trajectory


def test_trajectory_starts_at_raw_variance():
    rng = np.random.default_rng(2)
    x0 = rng.uniform(size=(20, 20))
    sched = linear_betas(24)
    traj = variance_trajectory(x0, sched, [0, 6, 12], seed=5)
    assert traj.timesteps == (0, 6, 12)
    assert traj.values[0] == inter_pixel_variance(x0)


def test_trajectory_reaches_unit_variance_at_deep_noise():
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal((64, 64))
    x0 = (x0 - x0.mean()) / x0.std()
    # crank beta so alpha_bar_T is essentially zero
    sched = linear_betas(24, 0.3, 0.6)
    assert sched.alpha_bars[-1] < 1e-4
    draws = [
        variance_trajectory(x0, sched, [24], seed=s).values[0] for s in range(200)
    ]
    draws = np.asarray(draws)
    se = draws.std(ddof=1) / np.sqrt(len(draws))
    assert abs(draws.mean() - 1.0) <= 3.0 * se


def test_trajectory_tracks_mixture_variance_mid_chain():
    rng = np.random.default_rng(4)
    x0 = rng.uniform(size=(48, 48))
    sched = linear_betas(24)
    t = 12
    abar = sched.alpha_bars[t]
    expected = abar * inter_pixel_variance(x0) + (1.0 - abar)
    draws = np.asarray(
        [variance_trajectory(x0, sched, [t], seed=s).values[0] for s in range(1000)]
    )
    se = draws.std(ddof=1) / np.sqrt(len(draws))
    assert abs(draws.mean() - expected) <= 3.0 * se


def test_trajectory_rejects_out_of_range_steps():
    sched = linear_betas(8)
    with pytest.raises(ParameterError):
        variance_trajectory(np.zeros((4, 4)), sched, [0, 9], seed=0)


def test_trajectory_deterministic_per_seed():
    rng = np.random.default_rng(5)
    x0 = rng.uniform(size=(16, 16))
    sched = linear_betas(12)
    a = variance_trajectory(x0, sched, [0, 4, 8, 12], seed=7)
    b = variance_trajectory(x0, sched, [0, 4, 8, 12], seed=7)
    assert a == b


# --------------------------------------------------------------- summary


def test_summary_single_value():
    s = distribution_summary([2.5], nbins=4)
    assert s.mean == 2.5 and s.std == 0.0


def test_summary_symmetric_pair():
    s = distribution_summary([1.0, 3.0], nbins=2)
    assert s.mean == pytest.approx(2.0)


def test_summary_recovers_generator_parameters():
    rng = np.random.default_rng(6)
    draws = rng.normal(5.0, 2.0, size=1000)
    s = distribution_summary(draws, nbins=30)
    # standard errors: sigma/sqrt(n) for the mean, sigma/sqrt(2n) for the std
    assert abs(s.mean - 5.0) <= 5 * 2.0 / np.sqrt(1000)
    assert abs(s.std - 2.0) <= 5 * 2.0 / np.sqrt(2 * 1000)
    assert s.edges[0] <= s.peak <= s.edges[-1]


def test_summary_rejects_empty():
    with pytest.raises(ParameterError):
        distribution_summary([], nbins=3)
