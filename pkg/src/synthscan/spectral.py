"""Fourier power-spectrum diagnostics: peak detection, suppression, histograms.

All spectra are stored DC-centered (shifted layout). The forward transform is
unnormalized, so Parseval reads  sum |F|^2 = W*H * sum x^2.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .raster import Raster


@dataclass(frozen=True)
class Spectrum:
    """Complex coefficients in shifted layout; DC sits at (h//2, w//2)."""

    coefficients: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.coefficients, dtype=np.complex128)
        if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] < 2:
            raise ParameterError(f"spectrum must be 2D with dims >= 2, got {arr.shape}")
        object.__setattr__(self, "coefficients", arr)
        self.coefficients.setflags(write=False)

    @property
    def height(self) -> int:
        return self.coefficients.shape[0]

    @property
    def width(self) -> int:
        return self.coefficients.shape[1]


@dataclass(frozen=True)
class PeakSet:
    """Distinct (row, col) bins in shifted layout, all outside the axis mask."""

    bins: tuple

    def __post_init__(self):
        bins = tuple((int(r), int(c)) for r, c in self.bins)
        if len(set(bins)) != len(bins):
            raise ParameterError("peak set contains duplicate bins")
        object.__setattr__(self, "bins", bins)

    def __len__(self) -> int:
        return len(self.bins)


def fft2_plane(plane) -> Spectrum:
    """Forward 2D FFT of any real plane, shifted to DC-centered layout."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2 or plane.shape[0] < 2 or plane.shape[1] < 2:
        raise ParameterError(f"plane dims must be 2D and >= 2, got {plane.shape}")
    if not np.isfinite(plane).all():
        raise ParameterError("plane contains non-finite values")
    return Spectrum(np.fft.fftshift(np.fft.fft2(plane)))


def fft2(r: Raster) -> Spectrum:
    """Forward 2D FFT of the grayscale image, shifted to DC-centered layout."""
    return fft2_plane(r.gray())


def ifft2(s: Spectrum) -> Raster:
    """Inverse transform; takes the real part and clamps to [0, 1]."""
    plane = np.fft.ifft2(np.fft.ifftshift(s.coefficients))
    return Raster(np.clip(plane.real, 0.0, 1.0))


def ifft2_raw(s: Spectrum) -> np.ndarray:
    """Inverse transform without realification, for symmetry checks."""
    return np.fft.ifft2(np.fft.ifftshift(s.coefficients))


def power_grid(s: Spectrum) -> np.ndarray:
    """Per-bin energy |coef|^2."""
    return np.abs(s.coefficients) ** 2


def log_power_display(power: np.ndarray) -> np.ndarray:
    """log(1 + power), the usual display transform for spectrum plots."""
    return np.log1p(power)


def axis_mask(w: int, h: int, bandwidth: float) -> np.ndarray:
    """Boolean grid, True where a bin lies within the protected axis band.

    A bin is protected when |row - h//2| <= bandwidth*h or
    |col - w//2| <= bandwidth*w.
    """
    if not 0.0 <= bandwidth <= 0.5:
        raise ParameterError(f"bandwidth must be in [0, 0.5], got {bandwidth}")
    rows = np.abs(np.arange(h) - h // 2) <= bandwidth * h
    cols = np.abs(np.arange(w) - w // 2) <= bandwidth * w
    return rows[:, None] | cols[None, :]


def top_percentile_peaks(power: np.ndarray, percentile: float, mask: np.ndarray) -> PeakSet:
    """Bins among the top `percentile` fraction of unprotected powers.

    The threshold is the k-th largest unprotected power with
    k = ceil(percentile * #unprotected); every bin tying the threshold is
    included, so the result can exceed k.
    """
    if not 0.0 < percentile < 1.0:
        raise ParameterError(f"percentile must be in (0, 1), got {percentile}")
    power = np.asarray(power, dtype=np.float64)
    if power.shape != mask.shape:
        raise ParameterError(f"power {power.shape} and mask {mask.shape} differ")
    free = ~np.asarray(mask, dtype=bool)
    values = power[free]
    if values.size == 0:
        warnings.warn("all bins are axis-protected; no peaks selectable", stacklevel=2)
        return PeakSet(())
    k = int(np.ceil(percentile * values.size))
    threshold = np.partition(values, values.size - k)[values.size - k]
    selected = free & (power >= threshold)
    rows, cols = np.nonzero(selected)
    return PeakSet(tuple(zip(rows.tolist(), cols.tolist())))


def _conjugate_partner(row: int, col: int, h: int, w: int) -> tuple:
    # map shifted -> unshifted, negate mod n, map back
    ur = (row - h // 2) % h
    uc = (col - w // 2) % w
    pr = ((-ur) % h + h // 2) % h
    pc = ((-uc) % w + w // 2) % w
    return pr, pc


def suppress(s: Spectrum, peaks: PeakSet, ratio: float) -> Spectrum:
    """Scale peak energies (and their conjugate partners) down to `ratio`.

    Energy scales by `ratio`, so the coefficient magnitude scales by
    sqrt(ratio); phase is untouched. Each affected bin is scaled exactly
    once even when a peak and its partner are both listed.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ParameterError(f"suppression ratio must be in [0, 1], got {ratio}")
    h, w = s.height, s.width
    targets = set()
    for row, col in peaks.bins:
        if not (0 <= row < h and 0 <= col < w):
            raise ParameterError(f"peak ({row}, {col}) outside {h}x{w} grid")
        targets.add((row, col))
        targets.add(_conjugate_partner(row, col, h, w))
    coef = np.array(s.coefficients, dtype=np.complex128)
    scale = np.sqrt(ratio)
    for row, col in targets:
        coef[row, col] *= scale
    return Spectrum(coef)


def energy_histogram(power: np.ndarray, mask: np.ndarray, nbins: int) -> tuple:
    """Histogram of log10(power + 1e-12) over unprotected bins.

    Returns (edges, counts) with len(edges) == nbins + 1.
    """
    if nbins < 1:
        raise ParameterError(f"nbins must be >= 1, got {nbins}")
    free = ~np.asarray(mask, dtype=bool)
    logs = np.log10(np.asarray(power, dtype=np.float64)[free] + 1e-12)
    counts, edges = np.histogram(logs, bins=nbins)
    return edges, counts
