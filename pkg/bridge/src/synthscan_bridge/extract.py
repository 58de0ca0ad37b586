"""Extraction jobs: per-timestep feature sets and region embedding files.

A job lists images with labels and tags, names a checkpoint (which pins the
noise schedule and the encoder weights/seed), and a timestep grid. For each
image the clean plane is deterministically inverted to every requested
timestep, each inverted state is handed to the encoder in pixel space, and
the resulting vectors are written as one ESF1 file the detection core loads
directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import CheckpointSpec, ZeroPredictor, invert_to, resolve_checkpoint
from .encode import ProjectionEncoder, load_plane
from .errors import JobFormatError
from .formats import FeatureSet, write_esf, write_ere

REQUIRED_DIM = 768  # contract with the detection core's feature consumers


@dataclass(frozen=True)
class ImageEntry:
    path: Path
    label: int  # +1 synthetic, -1 natural
    tag: str = ""


@dataclass(frozen=True)
class ExtractionJob:
    images: tuple
    checkpoint: str
    timesteps: tuple
    out_path: Path
    batch_size: int = 16
    device: str = "cpu"

    def __post_init__(self):
        if not self.images:
            raise JobFormatError("job lists no images")
        ts = tuple(int(t) for t in self.timesteps)
        if not ts or ts[0] != 0 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise JobFormatError(f"timesteps must start at 0 and increase: {ts}")
        if self.batch_size < 1:
            raise JobFormatError(f"batch size must be >= 1, got {self.batch_size}")
        object.__setattr__(self, "timesteps", ts)
        object.__setattr__(self, "out_path", Path(self.out_path))


def parse_job_file(path) -> tuple:
    """Read a job image table: one `path<TAB>label[<TAB>tag]` line per image."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise JobFormatError(f"no such job file: {path}") from None
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise JobFormatError(f"{path}:{lineno}: want path<TAB>label[<TAB>tag]")
        try:
            label = int(parts[1])
        except ValueError:
            raise JobFormatError(f"{path}:{lineno}: label {parts[1]!r} is not an integer") from None
        if label not in (-1, 1):
            raise JobFormatError(f"{path}:{lineno}: label must be +1 or -1, got {label}")
        img = Path(parts[0])
        if not img.is_absolute():
            img = path.parent / img
        entries.append(ImageEntry(img, label, parts[2] if len(parts) == 3 else ""))
    if not entries:
        raise JobFormatError(f"{path}: no image entries")
    return tuple(entries)


def _embed_with_backoff(encoder, planes, batch_size: int) -> np.ndarray:
    """Encode in batches; halve the batch on memory exhaustion, then fail."""
    size = batch_size
    while True:
        try:
            chunks = [
                encoder.embed_batch(planes[i : i + size]) for i in range(0, len(planes), size)
            ]
            return np.concatenate(chunks, axis=0)
        except MemoryError:
            if size <= 1:
                raise
            size = size // 2


def make_encoder(spec: CheckpointSpec) -> ProjectionEncoder:
    return ProjectionEncoder(dim=spec.dim, seed=spec.encoder_seed)


def extract_features(job: ExtractionJob, encoder=None, predictor=None) -> FeatureSet:
    """Run the job and write its ESF1 output; returns the in-memory set."""
    spec = resolve_checkpoint(job.checkpoint)
    if job.timesteps[-1] > spec.T:
        raise JobFormatError(
            f"timestep {job.timesteps[-1]} exceeds checkpoint horizon T={spec.T}"
        )
    encoder = encoder if encoder is not None else make_encoder(spec)
    if encoder.dim != REQUIRED_DIM:
        raise JobFormatError(
            f"feature dim must be {REQUIRED_DIM} per the core contract, got {encoder.dim}"
        )
    sched = spec.schedule()
    predictor = predictor if predictor is not None else ZeroPredictor()

    planes, owners = [], []
    for i, entry in enumerate(job.images):
        try:
            clean = load_plane(entry.path)
        except FileNotFoundError:
            raise JobFormatError(f"no such image: {entry.path}") from None
        states = invert_to(clean, job.timesteps, sched, predictor)
        for t in job.timesteps:
            planes.append(states[t])
            owners.append((i, t))

    vectors = _embed_with_backoff(encoder, planes, job.batch_size)
    n, n_ts = len(job.images), len(job.timesteps)
    cube = np.empty((n, n_ts, encoder.dim), dtype=np.float32)
    ts_index = {t: j for j, t in enumerate(job.timesteps)}
    for row, (i, t) in enumerate(owners):
        cube[i, ts_index[t]] = vectors[row].astype(np.float32)

    fs = FeatureSet(
        job.timesteps,
        cube,
        np.array([e.label for e in job.images], dtype=np.int8),
        tuple(e.tag for e in job.images),
    )
    write_esf(fs, job.out_path)
    return fs


@dataclass(frozen=True)
class RegionConfig:
    """Grid-proposal detector stand-in: score patches by local variance."""

    grid: int = 4  # grid x grid candidate patches
    max_regions: int = 4
    min_variance: float = 5e-4

    def __post_init__(self):
        if self.grid < 1 or self.max_regions < 0:
            raise JobFormatError("region config needs grid >= 1 and max_regions >= 0")


def propose_regions(plane: np.ndarray, cfg: RegionConfig) -> list:
    """Return up to max_regions high-variance patch crops, best first."""
    h, w = plane.shape
    scored = []
    for gy in range(cfg.grid):
        for gx in range(cfg.grid):
            y0, y1 = h * gy // cfg.grid, h * (gy + 1) // cfg.grid
            x0, x1 = w * gx // cfg.grid, w * (gx + 1) // cfg.grid
            patch = plane[y0:y1, x0:x1]
            if patch.shape[0] < 2 or patch.shape[1] < 2:
                continue
            var = float(patch.var())
            if var >= cfg.min_variance:
                scored.append((var, gy, gx, patch))
    scored.sort(key=lambda item: (-item[0], item[1], item[2]))
    return [patch for _, _, _, patch in scored[: cfg.max_regions]]


def extract_regions(image_path, out_path, checkpoint: str, cfg: RegionConfig = RegionConfig(),
                    encoder=None) -> int:
    """Write whole-image + region embeddings as ERE1; returns the row count.

    With zero qualifying detections the file holds only the whole-image row.
    """
    spec = resolve_checkpoint(checkpoint)
    encoder = encoder if encoder is not None else make_encoder(spec)
    if encoder.dim != REQUIRED_DIM:
        raise JobFormatError(
            f"region dim must be {REQUIRED_DIM} per the core contract, got {encoder.dim}"
        )
    try:
        plane = load_plane(image_path)
    except FileNotFoundError:
        raise JobFormatError(f"no such image: {image_path}") from None
    crops = propose_regions(plane, cfg)
    rows = encoder.embed_batch([plane] + crops)
    write_ere(rows, out_path)
    return rows.shape[0]
