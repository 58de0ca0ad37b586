"""Image loading and the deterministic projection encoder.

The sandbox ships no pretrained vision encoder, so `ProjectionEncoder` is a
drop-in stand-in with the same contract a frozen CLIP-style image tower
would have: pixels in, a fixed-dimension unit-norm vector out, fully
determined by a seed (the analogue of fixed pretrained weights, which the
checkpoint registry supplies). A real encoder can replace it behind
`embed_batch` without touching anything downstream.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import ImageFormatError

_PATCH = 32  # encoder input resolution (square)


def load_plane(path) -> np.ndarray:
    """Load an image file as a (h, w) float64 luma plane in [0, 1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"{path}: cannot decode image: {exc}") from exc
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ImageFormatError(f"{path}: image too small {arr.shape[:2]}")
    return 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]


def resample(plane: np.ndarray, size: int = _PATCH) -> np.ndarray:
    """Bilinear resample to (size, size) by sampling at target pixel centers.

    Hand-rolled so the bytes of every downstream file are reproducible
    independent of imaging-library versions.
    """
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    ys = (np.arange(size) + 0.5) * h / size - 0.5
    xs = (np.arange(size) + 0.5) * w / size - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = plane[np.ix_(y0, x0)] * (1 - fx) + plane[np.ix_(y0, x1)] * fx
    bot = plane[np.ix_(y1, x0)] * (1 - fx) + plane[np.ix_(y1, x1)] * fx
    return top * (1 - fy[:, 0])[:, None] + bot * fy[:, 0][:, None]


class ProjectionEncoder:
    """Deterministic image embedder: resample, flatten, project, normalize."""

    def __init__(self, dim: int = 768, seed: int = 0):
        if dim < 1:
            raise ImageFormatError(f"encoder dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self.seed = int(seed)
        rng = np.random.default_rng([int(seed), _PATCH])
        self._proj = rng.standard_normal((_PATCH * _PATCH, self.dim)) / np.sqrt(
            _PATCH * _PATCH
        )

    def embed_batch(self, planes) -> np.ndarray:
        """Embed a sequence of (h, w) float planes to (n, dim) unit rows."""
        flat = np.stack([resample(p).ravel() for p in planes])
        out = flat @ self._proj
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        zero = norms[:, 0] == 0.0
        if zero.any():
            out[zero] = 0.0
            out[zero, 0] = 1.0
            norms[zero] = 1.0
        return out / norms

    def embed(self, plane: np.ndarray) -> np.ndarray:
        return self.embed_batch([plane])[0]
