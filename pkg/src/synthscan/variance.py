"""Inter-pixel variance trajectories across noising timesteps.

Natural and synthetic images tend to differ in how pixel variance evolves as
noise is layered on, so the trajectory itself is the diagnostic. Variance is
the population variant over all scalar elements (channels flattened in).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .schedule import NoiseSchedule, forward_noise


@dataclass(frozen=True)
class VarianceTrajectory:
    timesteps: tuple
    values: tuple

    def __post_init__(self):
        ts = tuple(int(t) for t in self.timesteps)
        vs = tuple(float(v) for v in self.values)
        if len(ts) != len(vs):
            raise ParameterError("timesteps and values lengths differ")
        if any(v < 0.0 for v in vs):
            raise ParameterError("variance values must be >= 0")
        object.__setattr__(self, "timesteps", ts)
        object.__setattr__(self, "values", vs)


def inter_pixel_variance(x) -> float:
    """Population variance over every scalar element of x."""
    arr = np.asarray(getattr(x, "pixels", x), dtype=np.float64).ravel()
    if arr.size < 2:
        raise ParameterError(f"variance needs >= 2 elements, got {arr.size}")
    if arr.min() == arr.max():  # keep the constant case exactly zero
        return 0.0
    return float(np.var(arr))


def variance_trajectory(x0, sched: NoiseSchedule, steps, seed: int) -> VarianceTrajectory:
    """Variance of the noised image at each requested step.

    One eps draw per step (including t=0, to keep the stream aligned across
    step lists) from a generator seeded with `seed`.
    """
    arr = np.asarray(getattr(x0, "pixels", x0), dtype=np.float64)
    steps = [int(t) for t in steps]
    for t in steps:
        if not 0 <= t <= sched.T:
            raise ParameterError(f"step {t} outside [0, {sched.T}]")
    rng = np.random.default_rng(seed)
    values = []
    for t in steps:
        eps = rng.standard_normal(arr.shape)
        x_t = forward_noise(arr, t, sched, eps)
        values.append(inter_pixel_variance(x_t))
    return VarianceTrajectory(tuple(steps), tuple(values))


@dataclass(frozen=True)
class DistributionSummary:
    mean: float
    std: float
    edges: np.ndarray
    counts: np.ndarray
    peak: float  # center of the most-populated bin


def distribution_summary(values, nbins: int) -> DistributionSummary:
    """Mean, population std, histogram, and mode-bin center of a value list."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ParameterError("distribution summary needs at least one value")
    if nbins < 1:
        raise ParameterError(f"nbins must be >= 1, got {nbins}")
    counts, edges = np.histogram(arr, bins=nbins)
    mode = int(np.argmax(counts))
    peak = 0.5 * (edges[mode] + edges[mode + 1])
    return DistributionSummary(float(arr.mean()), float(arr.std()), edges, counts, float(peak))
