"""Line-delimited JSON workers speaking the detection core's protocols.

Rewriter protocol: each request line is an object with `image_id`,
`flaw_category`, `text`, and `retained_phrases`; each response line carries
`image_id` and the rewritten `text`. Embedder protocol: request `{"text"}`,
response `{"embedding"}`.

Two offline rewrite modes ship:

    identity  echo the text unchanged (useful as a guaranteed fixpoint)
    retain    compose a fresh single paragraph from the retained phrases

A hosted-model mode would slot in beside them, taking its credentials from
environment variables; none ships because this build is offline. A
malformed request produces a one-line `{"error": ...}` response and
processing continues; the worker exits nonzero only when every line failed.
"""

from __future__ import annotations

import json
import zlib

import numpy as np

from .errors import JobFormatError

REWRITE_MODES = ("identity", "retain")
_REQUIRED = ("image_id", "flaw_category", "text", "retained_phrases")


def one_paragraph(text: str) -> str:
    """Collapse any whitespace runs so the output is a single paragraph."""
    return " ".join(str(text).split())


def compose_retained(flaw_category: str, retained, original: str) -> str:
    """Build a fresh explanation paragraph around the retained phrases."""
    kept = [one_paragraph(p) for p in retained if one_paragraph(p)]
    if not kept:
        return one_paragraph(original)
    topic = one_paragraph(flaw_category) or "suspected generation artifacts"
    listing = "; ".join(kept)
    return f"Evidence of {topic}: {listing}."


def rewrite_request(req: dict, mode: str) -> dict:
    missing = [k for k in _REQUIRED if k not in req]
    if missing:
        raise JobFormatError(f"request missing fields: {', '.join(missing)}")
    retained = req["retained_phrases"]
    if not isinstance(retained, list):
        raise JobFormatError("retained_phrases must be a list")
    if mode == "identity":
        text = one_paragraph(req["text"])
    elif mode == "retain":
        text = compose_retained(req["flaw_category"], retained, req["text"])
    else:
        raise JobFormatError(f"unknown rewrite mode {mode!r}")
    return {"image_id": req["image_id"], "text": text}


def run_rewriter(stdin, stdout, mode: str) -> int:
    """Serve rewrite requests line by line; returns the process exit code."""
    if mode not in REWRITE_MODES:
        raise JobFormatError(f"unknown rewrite mode {mode!r}")
    lines = successes = 0
    for line in stdin:
        if not line.strip():
            continue
        lines += 1
        try:
            req = json.loads(line)
            if not isinstance(req, dict):
                raise JobFormatError("request must be a JSON object")
            resp = rewrite_request(req, mode)
            successes += 1
        except (json.JSONDecodeError, JobFormatError) as exc:
            resp = {"error": f"{type(exc).__name__}: {exc}"}
        stdout.write(json.dumps(resp, sort_keys=True) + "\n")
        stdout.flush()
    return 0 if lines == 0 or successes > 0 else 1


def embed_text(text: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic unit-norm text embedding: sum of seeded token vectors."""
    if dim < 1:
        raise JobFormatError(f"embedding dim must be >= 1, got {dim}")
    acc = np.zeros(dim)
    for token in str(text).lower().split():
        token_key = zlib.crc32(token.encode("utf-8")) & 0xFFFFFFFF
        acc += np.random.default_rng([int(seed), token_key]).standard_normal(dim)
    norm = float(np.linalg.norm(acc))
    if norm == 0.0:
        acc[0] = 1.0
        norm = 1.0
    return acc / norm


def run_embedder(stdin, stdout, dim: int, seed: int) -> int:
    """Serve text-embedding requests line by line; mirrors run_rewriter."""
    lines = successes = 0
    for line in stdin:
        if not line.strip():
            continue
        lines += 1
        try:
            req = json.loads(line)
            if not isinstance(req, dict) or "text" not in req:
                raise JobFormatError("request must be an object with a text field")
            vec = embed_text(req["text"], dim, seed)
            resp = {"embedding": [float(v) for v in vec]}
            successes += 1
        except (json.JSONDecodeError, JobFormatError) as exc:
            resp = {"error": f"{type(exc).__name__}: {exc}"}
        stdout.write(json.dumps(resp) + "\n")
        stdout.flush()
    return 0 if lines == 0 or successes > 0 else 1
