"""Extraction bridge for the synthscan toolchain.

This package produces the files the detection core consumes and speaks the
core's worker protocols, but it talks to the core exclusively through those
external interfaces: the ESF1/ERE1 byte formats and the `synthscan` command
line. It never imports the core package.

Modules:

    formats    ESF1 feature-set and ERE1 embedding-matrix writers/readers
    diffusion  noise schedules, deterministic inversion chains, checkpoints
    encode     image loading and the deterministic projection encoder
    extract    extraction jobs: per-timestep features and region embeddings
    rewrite    JSONL rewriter and text-embedder workers
    cli        synthscan-bridge command line
"""

__version__ = "0.1.0"

from . import cli, diffusion, encode, extract, formats, rewrite  # noqa: F401
