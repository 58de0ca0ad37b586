"""Timestep-ensemble synthetic-image detection toolkit.

Subpackages by responsibility:

- `schedule`: diffusion noising schedules, forward noising, deterministic
  inversion/denoising steps.
- `raster`: image containers, PNM/PNG IO, blur/rotate/brightness
  perturbations.
- `spectral`: DC-centered FFT analysis, peak picking, frequency
  suppression, energy histograms.
- `variance`: inter-pixel variance trajectories across noising steps.
- `features`: per-timestep feature datasets (ESF1 files), synthetic
  two-class generator, stratified splits.
- `mlp`: the batch-normalized MLP, exact gradients, AdamW training,
  exact-match and average-precision metrics, EMLP model files.
- `ensemble`: per-timestep boosted members, weighted voting, evaluation,
  ensemble manifests.
- `explain`: region-attention phrase ratings, text-diversity metrics, the
  refinement loop, ERE1/phrase/JSONL files.
- `report`: matplotlib figure emission and delimited tables.
- `cli`: the `synthscan` command with per-run reproducibility manifests.
"""

__version__ = "0.1.0"

from . import (  # noqa: E402,F401
    config,
    ensemble,
    errors,
    explain,
    features,
    mlp,
    raster,
    report,
    schedule,
    spectral,
    variance,
)
