"""Per-timestep feature datasets: the ESF1 container, a synthetic generator,
and stratified train/eval splitting.

The heavy extraction side (encoder + inversion) lives in a separate package;
everything downstream of it talks through ESF1 files, and `synth_features`
stands in for the extractor so the trainable core is testable offline.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    CorruptDataError,
    DataFormatError,
    FormatVersionError,
    ParameterError,
)

ESF_MAGIC = b"ESF1"
ESF_VERSION = 1


@dataclass(frozen=True)
class FeatureDataset:
    """Feature vectors indexed [image][timestep][dim], labels +1/-1, tags."""

    timesteps: tuple
    vectors: np.ndarray  # (n, n_t, dim) float32
    labels: np.ndarray  # (n,) int8, +1 synthetic / -1 natural
    tags: tuple

    def __post_init__(self):
        ts = tuple(int(t) for t in self.timesteps)
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ParameterError(f"timesteps must be strictly increasing: {ts}")
        vec = np.asarray(self.vectors, dtype=np.float32)
        if vec.ndim != 3:
            raise ParameterError(f"vectors must be (n, n_t, dim), got {vec.shape}")
        if vec.shape[1] != len(ts):
            raise ParameterError(f"{vec.shape[1]} timestep slots vs {len(ts)} ids")
        if not np.isfinite(vec).all():
            raise ParameterError("vectors contain non-finite values")
        lab = np.asarray(self.labels, dtype=np.int8)
        if lab.shape != (vec.shape[0],):
            raise ParameterError(f"labels shape {lab.shape} vs {vec.shape[0]} images")
        if not np.isin(lab, (-1, 1)).all():
            raise ParameterError("labels must be +1 or -1")
        tags = tuple(str(t) for t in self.tags)
        if len(tags) != vec.shape[0]:
            raise ParameterError(f"{len(tags)} tags vs {vec.shape[0]} images")
        object.__setattr__(self, "timesteps", ts)
        object.__setattr__(self, "vectors", vec)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "tags", tags)
        self.vectors.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def n_images(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[2]

    def subset(self, indices) -> "FeatureDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureDataset(
            self.timesteps,
            self.vectors[idx],
            self.labels[idx],
            tuple(self.tags[i] for i in idx),
        )


def write_esf(ds: FeatureDataset, path) -> None:
    buf = bytearray()
    buf += ESF_MAGIC
    buf += struct.pack("<IIII", ESF_VERSION, ds.n_images, ds.dim, len(ds.timesteps))
    buf += struct.pack(f"<{len(ds.timesteps)}I", *ds.timesteps)
    for i in range(ds.n_images):
        tag = ds.tags[i].encode("utf-8")
        if len(tag) > 0xFFFF:
            raise ParameterError(f"tag for image {i} exceeds 65535 bytes")
        buf += struct.pack("<bH", int(ds.labels[i]), len(tag))
        buf += tag
        buf += ds.vectors[i].astype("<f4").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def read_esf(path) -> FeatureDataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 24:
        raise CorruptDataError(f"{path}: too short to be a feature file")
    if data[:4] != ESF_MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}, want {ESF_MAGIC!r}")
    version, n_images, dim, n_ts = struct.unpack_from("<IIII", data, 4)
    if version != ESF_VERSION:
        raise FormatVersionError(f"{path}: version {version}, this reader wants {ESF_VERSION}")
    stored_crc = struct.unpack_from("<I", data, len(data) - 4)[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumError(f"{path}: CRC mismatch (stored {stored_crc:#x}, actual {actual_crc:#x})")
    pos = 20
    end = len(data) - 4
    if dim < 1 or n_ts < 1:
        raise CorruptDataError(f"{path}: implausible header (dim={dim}, timesteps={n_ts})")
    if pos + 4 * n_ts > end:
        raise CorruptDataError(f"{path}: truncated timestep table")
    timesteps = struct.unpack_from(f"<{n_ts}I", data, pos)
    pos += 4 * n_ts
    vec_bytes = 4 * n_ts * dim
    vectors = np.empty((n_images, n_ts, dim), dtype=np.float32)
    labels = np.empty(n_images, dtype=np.int8)
    tags = []
    for i in range(n_images):
        if pos + 3 > end:
            raise CorruptDataError(f"{path}: record {i} truncated ({n_images} promised)")
        label, tag_len = struct.unpack_from("<bH", data, pos)
        pos += 3
        if pos + tag_len + vec_bytes > end:
            raise CorruptDataError(f"{path}: record {i} truncated ({n_images} promised)")
        tags.append(data[pos : pos + tag_len].decode("utf-8"))
        pos += tag_len
        vectors[i] = np.frombuffer(data, dtype="<f4", count=n_ts * dim, offset=pos).reshape(n_ts, dim)
        labels[i] = label
        pos += vec_bytes
    if pos != end:
        raise CorruptDataError(f"{path}: {end - pos} unexpected trailing payload bytes")
    if not np.isfinite(vectors).all():
        raise CorruptDataError(f"{path}: non-finite feature values")
    try:
        return FeatureDataset(timesteps, vectors, labels, tuple(tags))
    except ParameterError as exc:
        raise CorruptDataError(f"{path}: {exc}") from exc


def synth_features(
    n_per_class: int,
    dim: int,
    timesteps,
    gap: float,
    overlap_frac: float,
    seed: int,
) -> FeatureDataset:
    """Two Gaussian classes whose means sit `gap` apart along a random unit
    direction per timestep.

    A fraction `overlap_frac` of each class is drawn from the opposing mean
    at a random subset of at most half the timesteps (at least one), so no
    single timestep classifies every image but a majority vote across
    timesteps can. Those images are tagged "hard", the rest "original".
    """
    if n_per_class < 1:
        raise ParameterError(f"n_per_class must be >= 1, got {n_per_class}")
    if gap < 0.0:
        raise ParameterError(f"gap must be >= 0, got {gap}")
    if not 0.0 <= overlap_frac <= 1.0:
        raise ParameterError(f"overlap_frac must be in [0, 1], got {overlap_frac}")
    ts = tuple(int(t) for t in timesteps)
    n_t = len(ts)
    rng = np.random.default_rng(seed)

    directions = rng.standard_normal((n_t, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    half = 0.5 * gap * directions  # class mean offsets, +half vs -half

    n = 2 * n_per_class
    labels = np.empty(n, dtype=np.int8)
    labels[:n_per_class] = 1
    labels[n_per_class:] = -1
    noise = rng.standard_normal((n, n_t, dim))
    vectors = noise + labels[:, None, None].astype(np.float64) * half[None, :, :]

    n_hard = int(np.floor(n_per_class * overlap_frac + 0.5))
    max_flips = max(1, (n_t - 1) // 2)
    tags = ["original"] * n
    for cls_start in (0, n_per_class):
        hard_idx = rng.choice(n_per_class, size=n_hard, replace=False) + cls_start
        for i in sorted(hard_idx.tolist()):
            k = int(rng.integers(1, max_flips + 1))
            flip_ts = rng.choice(n_t, size=k, replace=False)
            for t_idx in flip_ts:
                vectors[i, t_idx] -= 2.0 * labels[i] * half[t_idx]
            tags[i] = "hard"

    return FeatureDataset(ts, vectors.astype(np.float32), labels, tuple(tags))


def split(ds: FeatureDataset, train_frac: float, seed: int):
    """Stratified split into (train, eval) by seeded shuffle within class.

    Each side preserves original image order. Per class the train side gets
    floor(n_c * train_frac + 0.5) images.
    """
    if not 0.0 < train_frac < 1.0:
        raise ParameterError(f"train_frac must be in (0, 1), got {train_frac}")
    rng = np.random.default_rng(seed)
    train_mask = np.zeros(ds.n_images, dtype=bool)
    for cls in (1, -1):
        cls_idx = np.nonzero(ds.labels == cls)[0]
        if cls_idx.size == 0:
            continue
        n_train = int(np.floor(cls_idx.size * train_frac + 0.5))
        order = rng.permutation(cls_idx.size)
        train_mask[cls_idx[order[:n_train]]] = True
    n_train = int(train_mask.sum())
    if n_train == 0 or n_train == ds.n_images:
        raise ParameterError(
            f"split {train_frac} leaves a side empty ({n_train}/{ds.n_images - n_train})"
        )
    train_idx = np.nonzero(train_mask)[0]
    eval_idx = np.nonzero(~train_mask)[0]
    return ds.subset(train_idx), ds.subset(eval_idx)


def load_feature_file(path) -> FeatureDataset:
    """read_esf with filesystem errors folded into the data-error family."""
    try:
        return read_esf(path)
    except FileNotFoundError as exc:
        raise DataFormatError(f"no such feature file: {path}") from exc
