"""Writers (and checking readers) for the detection core's byte formats.

These are independent implementations of the published container layouts —
the formats are the interface between the two packages, so the bridge owns
its own codec rather than importing the core's.

ESF1 (feature sets), little-endian throughout:

    "ESF1"
    u32 version (=1), u32 n_images, u32 dim, u32 n_timesteps
    u32 x n_timesteps          strictly increasing timestep ids
    per image:
        i8 label (+1/-1), u16 tag byte length, tag utf-8 bytes
        f32 x (n_timesteps * dim)   vectors, timestep-major
    u32 CRC-32 (zlib) of everything above

ERE1 (embedding matrices):

    "ERE1"
    u32 version (=1), u32 count, u32 dim
    f32 x (count * dim)
    u32 CRC-32 of everything above
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import JobFormatError

ESF_MAGIC = b"ESF1"
ESF_VERSION = 1
ERE_MAGIC = b"ERE1"
ERE_VERSION = 1


@dataclass(frozen=True)
class FeatureSet:
    """One extraction result: vectors[image][timestep][dim] plus labels/tags."""

    timesteps: tuple
    vectors: np.ndarray  # (n, n_t, dim) float32
    labels: np.ndarray  # (n,) int8 of +1/-1
    tags: tuple

    def __post_init__(self):
        ts = tuple(int(t) for t in self.timesteps)
        if any(b <= a for a, b in zip(ts, ts[1:])) or any(t < 0 for t in ts):
            raise JobFormatError(f"timesteps must be increasing and non-negative: {ts}")
        vec = np.asarray(self.vectors, dtype=np.float32)
        if vec.ndim != 3 or vec.shape[1] != len(ts):
            raise JobFormatError(f"vectors shape {vec.shape} vs {len(ts)} timesteps")
        if not np.isfinite(vec).all():
            raise JobFormatError("vectors contain non-finite values")
        lab = np.asarray(self.labels, dtype=np.int8)
        if lab.shape != (vec.shape[0],) or not np.isin(lab, (-1, 1)).all():
            raise JobFormatError("labels must be one +1/-1 per image")
        tags = tuple(str(t) for t in self.tags)
        if len(tags) != vec.shape[0]:
            raise JobFormatError(f"{len(tags)} tags vs {vec.shape[0]} images")
        object.__setattr__(self, "timesteps", ts)
        object.__setattr__(self, "vectors", vec)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "tags", tags)


def write_esf(fs: FeatureSet, path) -> None:
    buf = bytearray()
    buf += ESF_MAGIC
    n, n_ts, dim = fs.vectors.shape
    buf += struct.pack("<IIII", ESF_VERSION, n, dim, n_ts)
    buf += struct.pack(f"<{n_ts}I", *fs.timesteps)
    for i in range(n):
        tag = fs.tags[i].encode("utf-8")
        if len(tag) > 0xFFFF:
            raise JobFormatError(f"tag for image {i} exceeds 65535 bytes")
        buf += struct.pack("<bH", int(fs.labels[i]), len(tag))
        buf += tag
        buf += fs.vectors[i].astype("<f4").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def read_esf(path) -> FeatureSet:
    """Read back an ESF1 file (self-check use; the core has its own loader)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 24 or data[:4] != ESF_MAGIC:
        raise JobFormatError(f"{path}: not an ESF1 file")
    version, n, dim, n_ts = struct.unpack_from("<IIII", data, 4)
    if version != ESF_VERSION:
        raise JobFormatError(f"{path}: unsupported version {version}")
    stored = struct.unpack_from("<I", data, len(data) - 4)[0]
    if stored != zlib.crc32(data[:-4]) & 0xFFFFFFFF:
        raise JobFormatError(f"{path}: CRC mismatch")
    pos = 20
    timesteps = struct.unpack_from(f"<{n_ts}I", data, pos)
    pos += 4 * n_ts
    vectors = np.empty((n, n_ts, dim), dtype=np.float32)
    labels = np.empty(n, dtype=np.int8)
    tags = []
    row_bytes = 4 * n_ts * dim
    for i in range(n):
        labels[i], tag_len = struct.unpack_from("<bH", data, pos)
        pos += 3
        tags.append(data[pos : pos + tag_len].decode("utf-8"))
        pos += tag_len
        vectors[i] = np.frombuffer(data, dtype="<f4", count=n_ts * dim, offset=pos).reshape(
            n_ts, dim
        )
        pos += row_bytes
    if pos != len(data) - 4:
        raise JobFormatError(f"{path}: trailing bytes after image records")
    return FeatureSet(timesteps, vectors, labels, tuple(tags))


def write_ere(vectors: np.ndarray, path) -> None:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise JobFormatError(f"need a (count, dim) matrix, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise JobFormatError("embedding matrix contains non-finite values")
    buf = bytearray()
    buf += ERE_MAGIC
    buf += struct.pack("<III", ERE_VERSION, arr.shape[0], arr.shape[1])
    buf += arr.astype("<f4").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def read_ere(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 20 or data[:4] != ERE_MAGIC:
        raise JobFormatError(f"{path}: not an ERE1 file")
    version, count, dim = struct.unpack_from("<III", data, 4)
    if version != ERE_VERSION:
        raise JobFormatError(f"{path}: unsupported version {version}")
    stored = struct.unpack_from("<I", data, len(data) - 4)[0]
    if stored != zlib.crc32(data[:-4]) & 0xFFFFFFFF:
        raise JobFormatError(f"{path}: CRC mismatch")
    if len(data) != 16 + 4 * count * dim + 4:
        raise JobFormatError(f"{path}: length does not match header")
    return (
        np.frombuffer(data, dtype="<f4", count=count * dim, offset=16)
        .astype(np.float64)
        .reshape(count, dim)
    )
