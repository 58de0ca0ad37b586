"""Image I/O, normalization, and the robustness perturbations.

Pixels live in [0, 1] as float64, shape (height, width, channels) with
channels interleaved (C-order = row-major). PGM/PPM are written by hand so
the 8-bit round trip is byte-identical; PNG goes through Pillow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptDataError, DataFormatError, ParameterError


@dataclass(frozen=True)
class Raster:
    pixels: np.ndarray  # (h, w, c) float64 in [0, 1]

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ParameterError(f"raster must be (h, w, 1|3), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ParameterError("raster must be non-empty")
        if not np.isfinite(arr).all():
            raise ParameterError("raster contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ParameterError("raster values must lie in [0, 1]")
        object.__setattr__(self, "pixels", arr)
        self.pixels.setflags(write=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def gray(self) -> np.ndarray:
        """Rec.601 luma as a 2D array (identity for single-channel)."""
        if self.channels == 1:
            return self.pixels[:, :, 0]
        r, g, b = self.pixels[:, :, 0], self.pixels[:, :, 1], self.pixels[:, :, 2]
        return np.clip(0.299 * r + 0.587 * g + 0.114 * b, 0.0, 1.0)


def _quantize(values: np.ndarray) -> np.ndarray:
    # round-half-up so save inverts the v/255 mapping exactly on 8-bit data
    return np.floor(values * 255.0 + 0.5).astype(np.uint8)


def _read_pnm(data: bytes, path) -> Raster:
    if len(data) < 2 or data[:2] not in (b"P5", b"P6"):
        raise BadPnmHeader(f"{path}: not a binary PGM/PPM file")
    channels = 1 if data[:2] == b"P5" else 3
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # comments (#...) allowed between them
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise BadPnmHeader(f"{path}: truncated header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise BadPnmHeader(f"{path}: non-numeric header fields") from None
    if width < 1 or height < 1 or width * height * channels > 2**31:
        raise CorruptDataError(f"{path}: implausible dimensions {width}x{height}")
    if maxval != 255:
        raise CorruptDataError(f"{path}: only maxval 255 supported, got {maxval}")
    n = width * height * channels
    payload = data[pos : pos + n]
    if len(payload) != n:
        raise CorruptDataError(f"{path}: expected {n} pixel bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return Raster(arr.reshape(height, width, channels))


class BadPnmHeader(CorruptDataError):
    pass


def load_raster(path) -> Raster:
    """Load a PNG or binary PGM/PPM image, mapping 8-bit samples to [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"no such image file: {path}")
    data = path.read_bytes()
    if data[:2] in (b"P5", b"P6"):
        return _read_pnm(data, path)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image, UnidentifiedImageError

        try:
            with Image.open(path) as im:
                if im.mode not in ("L", "RGB"):
                    im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
                arr = np.asarray(im, dtype=np.float64) / 255.0
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise CorruptDataError(f"{path}: corrupt PNG ({exc})") from exc
        return Raster(arr)
    raise DataFormatError(f"{path}: unsupported format (want PNG or binary PGM/PPM)")


def save_raster(r: Raster, path) -> None:
    """Write PGM (1 channel) / PPM (3 channels) or PNG, chosen by extension."""
    path = Path(path)
    suffix = path.suffix.lower()
    bytes8 = _quantize(r.pixels)
    if suffix in (".pgm", ".ppm", ".pnm"):
        if r.channels == 1:
            header = f"P5\n{r.width} {r.height}\n255\n".encode()
        else:
            header = f"P6\n{r.width} {r.height}\n255\n".encode()
        path.write_bytes(header + bytes8.tobytes())
    elif suffix == ".png":
        from PIL import Image

        arr = bytes8[:, :, 0] if r.channels == 1 else bytes8
        Image.fromarray(arr, mode="L" if r.channels == 1 else "RGB").save(path, format="PNG")
    else:
        raise ParameterError(f"unsupported output extension {suffix!r}")


def _gauss_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(r: Raster, sigma: float) -> Raster:
    """Separable Gaussian blur, radius ceil(3*sigma), clamp-to-edge borders."""
    if sigma <= 0.0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    k = _gauss_kernel(sigma)
    radius = (len(k) - 1) // 2
    out = np.empty_like(r.pixels)
    for c in range(r.channels):
        plane = r.pixels[:, :, c]
        padded = np.pad(plane, radius, mode="edge")
        # rows then columns; np.convolve per line keeps this dependency-free
        tmp = np.apply_along_axis(lambda row: np.convolve(row, k, mode="valid"), 1, padded)
        out[:, :, c] = np.apply_along_axis(lambda col: np.convolve(col, k, mode="valid"), 0, tmp)
    return Raster(np.clip(out, 0.0, 1.0))


def rotate(r: Raster, theta: float) -> Raster:
    """Rotate about the image center with bilinear sampling.

    Output keeps the input dimensions; samples falling outside are 0.
    Positive theta turns the content counterclockwise on screen.
    """
    if abs(theta) > 180.0:
        raise ParameterError(f"|theta| must be <= 180 degrees, got {theta}")
    h, w = r.height, r.width
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rad = math.radians(theta)
    cos_t, sin_t = math.cos(rad), math.sin(rad)

    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dx, dy = xs - cx, ys - cy
    # inverse map: rotate output coords by +theta (y axis points down)
    src_x = cos_t * dx - sin_t * dy + cx
    src_y = sin_t * dx + cos_t * dy + cy

    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = src_x - x0
    fy = src_y - y0

    def sample(yy, xx):
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        yc = np.clip(yy, 0, h - 1)
        xc = np.clip(xx, 0, w - 1)
        return valid, yc, xc

    out = np.zeros_like(r.pixels)
    corners = [(y0, x0, (1 - fy) * (1 - fx)), (y0, x0 + 1, (1 - fy) * fx),
               (y0 + 1, x0, fy * (1 - fx)), (y0 + 1, x0 + 1, fy * fx)]
    for c in range(r.channels):
        plane = r.pixels[:, :, c]
        acc = np.zeros((h, w), dtype=np.float64)
        for yy, xx, weight in corners:
            valid, yc, xc = sample(yy, xx)
            acc += weight * np.where(valid, plane[yc, xc], 0.0)
        out[:, :, c] = acc
    return Raster(np.clip(out, 0.0, 1.0))


def brightness(r: Raster, alpha: float) -> Raster:
    """Scale pixel values by alpha and clamp back to [0, 1]."""
    if alpha <= 0.0:
        raise ParameterError(f"brightness factor must be positive, got {alpha}")
    return Raster(np.clip(alpha * r.pixels, 0.0, 1.0))


BLUR_SIGMA_RANGE = (0.5, 2.5)
ROTATE_THETA_RANGE = (-45.0, 45.0)
BRIGHTNESS_RANGE = (0.3, 1.8)


@dataclass(frozen=True)
class PerturbParams:
    sigma: float
    theta: float
    alpha: float
    seed: int


def draw_perturb_params(seed: int) -> PerturbParams:
    """Sample one (sigma, theta, alpha) triple; draw order fixed for replay."""
    rng = np.random.default_rng(seed)
    sigma = rng.uniform(*BLUR_SIGMA_RANGE)
    theta = rng.uniform(*ROTATE_THETA_RANGE)
    alpha = rng.uniform(*BRIGHTNESS_RANGE)
    return PerturbParams(float(sigma), float(theta), float(alpha), int(seed))


def perturb_suite(r: Raster, seed: int) -> Raster:
    """Apply the seeded blur -> rotate -> brightness chain."""
    p = draw_perturb_params(seed)
    return brightness(rotate(gaussian_blur(r, p.sigma), p.theta), p.alpha)
