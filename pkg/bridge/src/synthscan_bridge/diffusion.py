"""Noise schedules, deterministic inversion chains, and checkpoint registry.

The inversion runs the deterministic (sigma = 0) sampler update in reverse:
from the state at step t it first reconstructs the clean-image estimate
implied by the noise predictor, then re-noises that estimate to step t+1.
With the zero predictor this is a pure per-step rescaling, which is the
x-independent case for which invert followed by denoise is an exact inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, JobFormatError


@dataclass(frozen=True)
class Schedule:
    """Per-step noise variances and cumulative signal retention products."""

    betas: np.ndarray  # (T,) float64, strictly positive
    alpha_bars: np.ndarray  # (T+1,) float64, alpha_bars[0] == 1, decreasing

    @property
    def T(self) -> int:
        return len(self.betas)


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> Schedule:
    if T < 1:
        raise JobFormatError(f"schedule needs T >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise JobFormatError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T)
    alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return Schedule(betas, alpha_bars)


class ZeroPredictor:
    """Predicts zero noise everywhere: the x-independent reference predictor."""

    def __call__(self, x: np.ndarray, t: int) -> np.ndarray:
        return np.zeros_like(x)


def invert_to(x0: np.ndarray, timesteps, sched: Schedule, predictor=None) -> dict:
    """Map a clean plane to its inverted state at each requested timestep.

    Returns {t: plane}; t=0 is the input itself, untouched.
    """
    predictor = predictor if predictor is not None else ZeroPredictor()
    wanted = sorted(set(int(t) for t in timesteps))
    if wanted and (wanted[0] < 0 or wanted[-1] > sched.T):
        raise JobFormatError(f"timesteps {wanted} outside schedule range 0..{sched.T}")
    out = {}
    x = np.array(x0, dtype=np.float64)
    if wanted and wanted[0] == 0:
        out[0] = x.copy()
    top = wanted[-1] if wanted else 0
    for t in range(top):
        eps = predictor(x, t)
        abar_t = sched.alpha_bars[t]
        abar_next = sched.alpha_bars[t + 1]
        x0_hat = (x - math.sqrt(1.0 - abar_t) * eps) / math.sqrt(abar_t)
        x = math.sqrt(abar_next) * x0_hat + math.sqrt(1.0 - abar_next) * eps
        if (t + 1) in wanted:
            out[t + 1] = x.copy()
    return out


@dataclass(frozen=True)
class CheckpointSpec:
    """What a resolvable checkpoint id pins down: schedule and encoder seed."""

    name: str
    T: int
    beta_start: float
    beta_end: float
    encoder_seed: int
    dim: int = 768

    def schedule(self) -> Schedule:
        return linear_schedule(self.T, self.beta_start, self.beta_end)


CHECKPOINTS = {
    "pixel-ddpm-24": CheckpointSpec("pixel-ddpm-24", 24, 1e-4, 0.02, encoder_seed=1405),
    "pixel-ddpm-48": CheckpointSpec("pixel-ddpm-48", 48, 1e-4, 0.02, encoder_seed=2741),
}


def resolve_checkpoint(name: str) -> CheckpointSpec:
    try:
        return CHECKPOINTS[name]
    except KeyError:
        known = ", ".join(sorted(CHECKPOINTS))
        raise CheckpointError(f"unknown checkpoint id {name!r} (known: {known})") from None
