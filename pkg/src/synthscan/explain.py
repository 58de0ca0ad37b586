"""Phrase-to-region relevance ratings and the explanation refinement loop.

A phrase is scored by softly attending over the image's region embeddings
(full image first, then each region) with the phrase's clamped, normalized
cosine similarities as attention logits, then taking the cosine between the
phrase and the attended vector. Text quality is tracked with type-token
ratio and normalized Shannon entropy. The rewriter that rewrites the
explanation between iterations is injected; the default keeps text as is,
which makes the loop a metrics fixpoint.
"""

from __future__ import annotations

import json
import math
import re
import struct
import warnings
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    CorruptDataError,
    FormatVersionError,
    ParameterError,
)

ERE_MAGIC = b"ERE1"
ERE_VERSION = 1
DEFAULT_LAMBDA = 9.0
DEFAULT_TOPK = 10
DEFAULT_ITERATIONS = 3


# ================================================================ containers


@dataclass(frozen=True)
class RegionEmbeddings:
    """Unit row vectors, full-image embedding first, then each region."""

    vectors: np.ndarray  # (n_regions + 1, dim)

    def __post_init__(self):
        arr = np.asarray(self.vectors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ParameterError(f"region embeddings must be (n+1, dim), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ParameterError("region embeddings contain non-finite values")
        norms = np.linalg.norm(arr, axis=1)
        if np.any(norms == 0.0):
            raise ParameterError("zero-length region embedding cannot be normalized")
        arr = arr / norms[:, None]
        object.__setattr__(self, "vectors", arr)
        self.vectors.setflags(write=False)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class PhraseRating:
    phrase_id: int
    text: str
    rating: float

    def __post_init__(self):
        if not -1.0 - 1e-9 <= self.rating <= 1.0 + 1e-9:
            raise ParameterError(f"rating {self.rating} outside [-1, 1]")


@dataclass(frozen=True)
class RefineRecord:
    image_id: str
    iteration: int
    text: str
    top5: float
    top10: float
    overall: float
    ttr: float
    se: float
    status: str = "ok"


# ==================================================================== ratings


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ParameterError("cosine with a zero vector is undefined")
    return float(a @ b / (na * nb))


def normalize_sims(p, regions: RegionEmbeddings) -> np.ndarray:
    """Clamped-cosine similarity profile over all region vectors, normalized
    to sum 1; uniform when every cosine is non-positive."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (regions.dim,):
        raise ParameterError(f"phrase dim {p.shape} vs region dim {regions.dim}")
    norm = np.linalg.norm(p)
    if norm == 0.0:
        raise ParameterError("cannot rate a zero phrase embedding")
    cos = regions.vectors @ (p / norm)
    clamped = np.maximum(cos, 0.0)
    total = clamped.sum()
    if total == 0.0:
        return np.full(regions.count, 1.0 / regions.count)
    return clamped / total


def attend(regions: RegionEmbeddings, sims, lam: float) -> np.ndarray:
    """Softmax-weighted combination of region vectors, logits = lam * sims."""
    s = np.asarray(sims, dtype=np.float64)
    if s.shape != (regions.count,):
        raise ParameterError(f"{s.shape} similarities vs {regions.count} regions")
    if lam < 0.0:
        raise ParameterError(f"inverse temperature must be >= 0, got {lam}")
    logits = lam * s
    logits -= logits.max()  # shift-invariant, keeps exp in range
    weights = np.exp(logits)
    weights /= weights.sum()
    return weights @ regions.vectors


def rate_phrase(p, regions: RegionEmbeddings, lam: float = DEFAULT_LAMBDA) -> float:
    """Cosine between the phrase and its attended region mixture."""
    p = np.asarray(p, dtype=np.float64)
    a = attend(regions, normalize_sims(p, regions), lam)
    if np.linalg.norm(a) == 0.0:
        warnings.warn("attended vector vanished; rating defined as 0", stacklevel=2)
        return 0.0
    return _cosine(p, a)


def rank_topk(ratings, k: int = DEFAULT_TOPK) -> list:
    """Descending by rating, ties by ascending phrase id, truncated to k."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    ordered = sorted(ratings, key=lambda r: (-r.rating, r.phrase_id))
    return ordered[:k]


def sim_summary(ratings) -> tuple:
    """(top-5 mean, top-10 mean, overall mean) of the rating values."""
    if not ratings:
        raise ParameterError("similarity summary of an empty rating list")
    values = sorted((r.rating for r in ratings), reverse=True)
    top5 = values[:5]
    top10 = values[:10]
    return (
        sum(top5) / len(top5),
        sum(top10) / len(top10),
        sum(values) / len(values),
    )


# ====================================================================== text


def tokenize(text: str) -> list:
    """Whitespace tokens, lowercased."""
    return text.lower().split()


def ttr(tokens) -> float:
    """Distinct tokens over total tokens."""
    tokens = list(tokens)
    if not tokens:
        raise ParameterError("type-token ratio of an empty token list")
    return len(set(tokens)) / len(tokens)


def shannon_entropy_norm(tokens) -> float:
    """Token-distribution entropy over log2(#types); 0 for a single type."""
    tokens = list(tokens)
    if not tokens:
        raise ParameterError("entropy of an empty token list")
    counts = {}
    for tok in tokens:
        counts[tok] = counts.get(tok, 0) + 1
    n_types = len(counts)
    if n_types == 1:
        return 0.0
    total = len(tokens)
    h = -sum((c / total) * math.log2(c / total) for c in counts.values())
    return h / math.log2(n_types)


# =============================================================== refine loop


@dataclass(frozen=True)
class Phrase:
    phrase_id: int
    text: str
    embedding: np.ndarray

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1 or emb.size == 0 or not np.isfinite(emb).all():
            raise ParameterError(f"phrase {self.phrase_id} has a bad embedding")
        object.__setattr__(self, "embedding", emb)


def default_segmenter(text: str) -> list:
    """Sentence-punctuation split, then comma-separated chunks."""
    chunks = []
    for sentence in re.split(r"[.!?;]+", text):
        for part in sentence.split(","):
            part = part.strip()
            if part:
                chunks.append(part)
    return chunks


def _rate_all(phrases, regions, lam):
    return [
        PhraseRating(p.phrase_id, p.text, rate_phrase(p.embedding, regions, lam))
        for p in phrases
    ]


def _metrics_record(image_id, iteration, text, ratings, status="ok"):
    top5, top10, overall = sim_summary(ratings)
    toks = tokenize(text)
    return RefineRecord(
        image_id=image_id,
        iteration=iteration,
        text=text,
        top5=top5,
        top10=top10,
        overall=overall,
        ttr=ttr(toks),
        se=shannon_entropy_norm(toks),
        status=status,
    )


def refine_loop(
    image_id: str,
    regions: RegionEmbeddings,
    text: str,
    phrases,
    rewriter=None,
    segmenter=None,
    embed_phrase=None,
    iterations: int = DEFAULT_ITERATIONS,
    k: int = DEFAULT_TOPK,
    lam: float = DEFAULT_LAMBDA,
) -> list:
    """Iterative rate -> retain top-k -> rewrite -> re-segment loop.

    Returns one record per state: the original text (iteration 0) and one
    per completed rewrite. `rewriter(text, retained_texts) -> new text` is
    injected; None keeps the text unchanged, in which case every iteration
    reuses the original phrase list and the metrics are a fixpoint. When the
    rewriter changes the text, `segmenter` (default: punctuation/comma
    chunks) and `embed_phrase(text) -> vector` produce the new phrase list.
    A rewriter exception ends the loop early with a failure-status record.
    """
    if iterations < 0:
        raise ParameterError(f"iterations must be >= 0, got {iterations}")
    if not phrases:
        raise ParameterError("refine loop needs at least one phrase")
    if not text.strip():
        raise ParameterError("refine loop needs non-empty explanation text")
    phrases = list(phrases)
    segmenter = segmenter or default_segmenter
    ratings = _rate_all(phrases, regions, lam)
    records = [_metrics_record(image_id, 0, text, ratings)]
    for it in range(1, iterations + 1):
        retained = rank_topk(ratings, k)
        retained_texts = [r.text for r in retained]
        if rewriter is None:
            new_text = text
        else:
            try:
                new_text = rewriter(text, retained_texts)
            except Exception as exc:  # outside code: anything can go wrong
                records.append(
                    RefineRecord(
                        image_id=image_id,
                        iteration=it,
                        text=text,
                        top5=records[-1].top5,
                        top10=records[-1].top10,
                        overall=records[-1].overall,
                        ttr=records[-1].ttr,
                        se=records[-1].se,
                        status=f"rewriter_failed: {exc}",
                    )
                )
                return records
        if new_text == text:
            # unchanged text keeps the existing phrase list and ratings
            records.append(_metrics_record(image_id, it, text, ratings))
            continue
        if embed_phrase is None:
            raise ParameterError(
                "rewriter changed the text but no embed_phrase callable was given"
            )
        chunks = segmenter(new_text)
        if not chunks:
            raise ParameterError(f"segmenter produced no phrases for {new_text!r}")
        phrases = [
            Phrase(pid, chunk, np.asarray(embed_phrase(chunk), dtype=np.float64))
            for pid, chunk in enumerate(chunks)
        ]
        text = new_text
        ratings = _rate_all(phrases, regions, lam)
        records.append(_metrics_record(image_id, it, text, ratings))
    return records


# ==================================================================== file IO


def write_ere(vectors: np.ndarray, path) -> None:
    """ERE1 container: count x dim float32 rows with a CRC32 trailer."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ParameterError(f"need a (count, dim) matrix, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ParameterError("embedding matrix contains non-finite values")
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
    if len(data) < 20:
        raise CorruptDataError(f"{path}: too short to be an embedding file")
    if data[:4] != ERE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}, want {ERE_MAGIC!r}")
    version, count, dim = struct.unpack_from("<III", data, 4)
    if version != ERE_VERSION:
        raise FormatVersionError(f"{path}: version {version}, this reader wants {ERE_VERSION}")
    stored = struct.unpack_from("<I", data, len(data) - 4)[0]
    actual = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored != actual:
        raise ChecksumError(f"{path}: CRC mismatch (stored {stored:#x}, actual {actual:#x})")
    expected = 16 + 4 * count * dim + 4
    if len(data) != expected:
        raise CorruptDataError(f"{path}: {len(data)} bytes, header implies {expected}")
    vec = np.frombuffer(data, dtype="<f4", count=count * dim, offset=16)
    vec = vec.astype(np.float64).reshape(count, dim)
    if not np.isfinite(vec).all():
        raise CorruptDataError(f"{path}: non-finite embedding values")
    return vec


def load_regions(path) -> RegionEmbeddings:
    """Read an ERE1 file as region embeddings (full image first)."""
    try:
        return RegionEmbeddings(read_ere(path))
    except ParameterError as exc:
        raise CorruptDataError(f"{path}: {exc}") from exc


def write_phrases(phrases, path) -> None:
    """Tab-separated `phrase_id<TAB>text` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in phrases:
            pid = p.phrase_id if isinstance(p, Phrase) else int(p[0])
            text = p.text if isinstance(p, Phrase) else str(p[1])
            if "\t" in text or "\n" in text:
                raise ParameterError(f"phrase {pid} contains tab or newline")
            fh.write(f"{pid}\t{text}\n")


def read_phrases(path) -> list:
    """[(phrase_id, text)] from a tab-separated phrase file."""
    out = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            pid_text = line.split("\t", 1)
            if len(pid_text) != 2 or not pid_text[0].strip().isdigit():
                raise CorruptDataError(f"{path}:{lineno}: bad phrase line {line!r}")
            pid = int(pid_text[0])
            if pid in seen:
                raise CorruptDataError(f"{path}:{lineno}: duplicate phrase id {pid}")
            seen.add(pid)
            out.append((pid, pid_text[1]))
    return out


def write_records_jsonl(records, path) -> None:
    """One JSON object per record: image_id, iter, text, metrics, status."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "image_id": r.image_id,
                        "iter": r.iteration,
                        "text": r.text,
                        "top5": r.top5,
                        "top10": r.top10,
                        "overall": r.overall,
                        "ttr": r.ttr,
                        "se": r.se,
                        "status": r.status,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
