"""Diffusion noise schedules and deterministic noising/denoising steps.

A schedule holds the per-step noise variances beta_t and the cumulative
signal-retention products alpha_bar_t = prod_{i<=t}(1 - beta_i), with the
convention alpha_bar_0 = 1 so timestep 0 is the clean image. All step
functions are pure; the sigma-noise branch of the sampler is fixed to 0,
so both directions of the chain are deterministic given the predictor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, runtime_checkable

import numpy as np

from .errors import ParameterError


@runtime_checkable
class NoisePredictor(Protocol):
    """Callable estimating the Gaussian noise component of a noised input.

    Implementations must be deterministic for fixed (x, t) and return an
    array of the same shape. `concurrency_safe` declares whether the
    predictor may be invoked from several threads at once; the library
    never does so unless this is True.
    """

    concurrency_safe: bool

    def __call__(self, x: np.ndarray, t: int) -> np.ndarray: ...


@dataclass(frozen=True)
class ZeroPredictor:
    """Predicts zero noise everywhere; turns both steps into pure rescales."""

    concurrency_safe: bool = True

    def __call__(self, x: np.ndarray, t: int) -> np.ndarray:
        return np.zeros_like(x)


@dataclass(frozen=True)
class ConstantPredictor:
    """Returns a fixed field regardless of (x, t).

    Because the same epsilon is used by an inversion step and the
    denoising step that undoes it, the round trip is algebraically exact.
    """

    value: np.ndarray
    concurrency_safe: bool = True

    def __call__(self, x: np.ndarray, t: int) -> np.ndarray:
        if self.value.shape != x.shape:
            raise ParameterError(
                f"predictor field shape {self.value.shape} != input shape {x.shape}"
            )
        return self.value


@dataclass(frozen=True)
class NoiseSchedule:
    """T steps of beta values plus the T+1 cumulative alpha_bar array."""

    betas: np.ndarray
    alpha_bars: np.ndarray  # length T+1, alpha_bars[0] == 1
    kind: str = "linear"
    beta_start: float = 0.0
    beta_end: float = 0.0

    @property
    def T(self) -> int:
        return len(self.betas)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        abars = np.asarray(self.alpha_bars, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 1:
            raise ParameterError("schedule needs at least one beta")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ParameterError("every beta must lie in (0, 1)")
        if len(abars) != len(betas) + 1 or abars[0] != 1.0:
            raise ParameterError("alpha_bars must have length T+1 with alpha_bars[0] = 1")
        if np.any(np.diff(abars) >= 0.0):
            raise ParameterError("alpha_bar must be strictly decreasing")
        if np.any(abars <= 0.0) or np.any(abars > 1.0):
            raise ParameterError("alpha_bar values must lie in (0, 1]")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", abars)
        self.betas.setflags(write=False)
        self.alpha_bars.setflags(write=False)


def linear_betas(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly spaced betas (inclusive endpoints) and their alpha_bar products."""
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bars = np.concatenate(([1.0], np.cumprod(1.0 - betas)))
    return NoiseSchedule(
        betas=betas,
        alpha_bars=alpha_bars,
        kind="linear",
        beta_start=float(beta_start),
        beta_end=float(beta_end),
    )


def _as_array(x) -> np.ndarray:
    # accepts plain arrays or anything carrying a .pixels array (Raster)
    pixels = getattr(x, "pixels", None)
    arr = np.asarray(pixels if pixels is not None else x, dtype=np.float64)
    if arr.size == 0:
        raise ParameterError("empty input")
    return arr


def forward_noise(x0, t: int, sched: NoiseSchedule, eps: np.ndarray) -> np.ndarray:
    """Closed-form noising: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    arr = _as_array(x0)
    eps = np.asarray(eps, dtype=np.float64)
    if not (0 <= t <= sched.T):
        raise ParameterError(f"t={t} outside [0, {sched.T}]")
    if eps.shape != arr.shape:
        raise ParameterError(f"eps shape {eps.shape} != x0 shape {arr.shape}")
    abar = sched.alpha_bars[t]
    return np.sqrt(abar) * arr + np.sqrt(1.0 - abar) * eps


def ddim_denoise_step(x_t, t: int, pred: NoisePredictor, sched: NoiseSchedule) -> np.ndarray:
    """One deterministic reverse step t -> t-1 (sigma = 0)."""
    arr = _as_array(x_t)
    if not (1 <= t <= sched.T):
        raise ParameterError(f"denoise step needs 1 <= t <= T, got t={t}")
    abar_t = sched.alpha_bars[t]
    abar_prev = sched.alpha_bars[t - 1]
    eps_hat = np.asarray(pred(arr, t), dtype=np.float64)
    if eps_hat.shape != arr.shape:
        raise ParameterError("predictor output shape mismatch")
    x0_hat = (arr - np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(abar_t)
    return np.sqrt(abar_prev) * x0_hat + np.sqrt(1.0 - abar_prev) * eps_hat


def ddim_invert_step(x_t, t: int, pred: NoisePredictor, sched: NoiseSchedule) -> np.ndarray:
    """One deterministic inversion step t -> t+1, the algebraic inverse of
    the reverse step under a state-independent predictor."""
    arr = _as_array(x_t)
    if not (0 <= t <= sched.T - 1):
        raise ParameterError(f"invert step needs 0 <= t <= T-1, got t={t}")
    abar_t = sched.alpha_bars[t]
    abar_next = sched.alpha_bars[t + 1]
    eps_hat = np.asarray(pred(arr, t), dtype=np.float64)
    if eps_hat.shape != arr.shape:
        raise ParameterError("predictor output shape mismatch")
    x0_hat = (arr - np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(abar_t)
    return np.sqrt(abar_next) * x0_hat + np.sqrt(1.0 - abar_next) * eps_hat


def invert_chain(x0, sched: NoiseSchedule, pred: NoisePredictor) -> list[np.ndarray]:
    """All T+1 states x_0 .. x_T produced by chained inversion steps."""
    states = [_as_array(x0)]
    for t in range(sched.T):
        states.append(ddim_invert_step(states[-1], t, pred, sched))
    return states


def save_schedule(sched: NoiseSchedule, path) -> None:
    """Plain-text key-value serialization for reproducibility manifests."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"schedule_kind = {sched.kind}\n")
        f.write(f"T = {sched.T}\n")
        f.write(f"beta_start = {sched.beta_start!r}\n")
        f.write(f"beta_end = {sched.beta_end!r}\n")


def load_schedule(path) -> NoiseSchedule:
    from .errors import CorruptDataError

    fields = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CorruptDataError(f"bad schedule line: {line!r}")
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    try:
        kind = fields["schedule_kind"]
        T = int(fields["T"])
        beta_start = float(fields["beta_start"])
        beta_end = float(fields["beta_end"])
    except (KeyError, ValueError) as exc:
        raise CorruptDataError(f"incomplete schedule file: {exc}") from exc
    if kind != "linear":
        raise CorruptDataError(f"unknown schedule_kind {kind!r}")
    return linear_betas(T, beta_start, beta_end)
