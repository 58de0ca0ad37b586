"""Command-line entry point: the pipeline as reproducible subcommands.

Every subcommand resolves its options from (defaults < config file < flags),
runs deterministically from an explicit seed, and writes a manifest file
recording the fully resolved configuration plus file-format versions. `run
MANIFEST` replays such a manifest and reproduces the outputs byte for byte.

Exit codes: 0 success, 2 usage error, 3 data-format error, 4 numeric
failure. Errors are a single `synthscan: error: <Class>: <message>` line on
standard error.
"""

from __future__ import annotations

import argparse
import glob as globmod
import json
import shlex
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    REQUIRED,
    Option,
    canonical,
    conv_bool,
    conv_int_tuple,
    read_kv,
    resolve,
    to_text,
    write_kv,
)
from .ensemble import EnsembleConfig, evaluate, load_ensemble, predict_batch, save_ensemble, train_ensemble
from .errors import (
    DataFormatError,
    EXIT_DATA,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_USAGE,
    NumericError,
    ParameterError,
    SynthscanError,
)
from .explain import (
    ERE_VERSION,
    Phrase,
    PhraseRating,
    load_regions,
    rank_topk,
    rate_phrase,
    read_ere,
    read_phrases,
    refine_loop,
    sim_summary,
    write_records_jsonl,
)
from .features import ESF_VERSION, load_feature_file, synth_features, write_esf
from .mlp import EMLP_VERSION, TrainConfig
from .raster import Raster, draw_perturb_params, load_raster, perturb_suite, save_raster
from .schedule import forward_noise, linear_betas
from .spectral import (
    axis_mask,
    energy_histogram,
    fft2,
    fft2_plane,
    ifft2,
    log_power_display,
    power_grid,
    suppress,
    top_percentile_peaks,
)
from .variance import variance_trajectory
from . import report

MANIFEST_BASENAME = "manifest.txt"
FORMAT_VERSIONS = {
    "format_esf": ESF_VERSION,
    "format_emlp": EMLP_VERSION,
    "format_ere": ERE_VERSION,
}


def _spun(seed: int, *path) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, path)]).generate_state(1)[0])


# ------------------------------------------------------------------ schemas


def _opt(name, conv, default=REQUIRED, help=""):
    return Option(name=name, conv=conv, default=default, help=help)


SCHEMAS = {
    "synth-features": {
        "out": _opt("out", str, help="output feature file (ESF1)"),
        "n": _opt("n", int, help="images per class"),
        "dim": _opt("dim", int, help="feature dimension"),
        "gap": _opt("gap", float, help="class-mean separation"),
        "overlap": _opt("overlap", float, help="hard-image fraction per class"),
        "timesteps": _opt(
            "timesteps", conv_int_tuple, default=tuple(range(0, 25, 3)),
            help="comma-separated timestep ids",
        ),
        "seed": _opt("seed", int, default=42, help="generator seed"),
    },
    "train": {
        "features": _opt("features", str, help="training feature file"),
        "out": _opt("out", str, help="output ensemble directory"),
        "T": _opt("T", int, default=24, help="last timestep"),
        "stride": _opt("stride", int, default=3, help="timestep stride"),
        "eta": _opt("eta", float, default=0.25, help="reweighting rate"),
        "eps_lo": _opt("eps_lo", float, default=0.001, help="error clamp floor"),
        "eps_hi": _opt("eps_hi", float, default=0.5, help="error clamp ceiling"),
        "chain_weights": _opt(
            "chain_weights", conv_bool, default=False,
            help="carry sample weights across members",
        ),
        "hidden": _opt(
            "hidden", conv_int_tuple, default=(1024, 512, 256, 128),
            help="hidden layer widths",
        ),
        "epochs": _opt("epochs", int, default=10, help="epochs (= rounds) per member"),
        "batch": _opt("batch", int, default=256, help="batch size"),
        "lr": _opt("lr", float, default=1e-4, help="learning rate"),
        "wd": _opt("wd", float, default=5e-4, help="weight decay"),
        "seed": _opt("seed", int, default=42, help="training seed"),
        "figures": _opt("figures", conv_bool, default=False, help="render figure files"),
    },
    "eval": {
        "ensemble": _opt("ensemble", str, help="ensemble directory or manifest"),
        "features": _opt("features", str, help="evaluation feature file"),
        "out": _opt("out", str, help="output metrics table"),
        "tag": _opt("tag", str, default="", help="restrict to one tag (e.g. hard)"),
        "figures": _opt("figures", conv_bool, default=False, help="render figure files"),
    },
    "predict": {
        "ensemble": _opt("ensemble", str, help="ensemble directory or manifest"),
        "features": _opt("features", str, help="feature file to score"),
        "out": _opt("out", str, help="output prediction table"),
    },
    "spectra": {
        "image": _opt("image", str, help="input image (PNG/PGM/PPM)"),
        "out": _opt("out", str, help="output directory"),
        "steps": _opt("steps", conv_int_tuple, default=(0, 6, 12), help="noising steps"),
        "schedule_T": _opt("schedule_T", int, default=24, help="schedule length"),
        "beta_start": _opt("beta_start", float, default=1e-4, help="first beta"),
        "beta_end": _opt("beta_end", float, default=0.02, help="last beta"),
        "bandwidth": _opt("bandwidth", float, default=0.05, help="protected axis band"),
        "bins": _opt("bins", int, default=32, help="histogram bins"),
        "seed": _opt("seed", int, default=42, help="noise draw seed"),
        "figures": _opt("figures", conv_bool, default=False, help="render figure files"),
    },
    "suppress": {
        "image": _opt("image", str, help="input image (PNG/PGM/PPM)"),
        "out": _opt("out", str, help="output image path"),
        "bandwidth": _opt("bandwidth", float, help="protected axis band"),
        "ratio": _opt("ratio", float, help="power retention ratio in [0, 1]"),
        "percentile": _opt("percentile", float, help="peak fraction in (0, 1]"),
    },
    "variance": {
        "images": _opt("images", str, help="input image glob"),
        "out": _opt("out", str, help="output trajectory table"),
        "steps": _opt("steps", conv_int_tuple, default=(0, 6, 12, 18, 24), help="steps"),
        "schedule_T": _opt("schedule_T", int, default=24, help="schedule length"),
        "beta_start": _opt("beta_start", float, default=1e-4, help="first beta"),
        "beta_end": _opt("beta_end", float, default=0.02, help="last beta"),
        "seed": _opt("seed", int, default=42, help="noise draw seed"),
        "figures": _opt("figures", conv_bool, default=False, help="render figure files"),
    },
    "perturb": {
        "images": _opt("images", str, help="input image glob"),
        "out": _opt("out", str, help="output directory"),
        "seed": _opt("seed", int, default=42, help="per-image parameter seed"),
    },
    "rate": {
        "regions": _opt("regions", str, help="region embedding file (ERE1)"),
        "phrases": _opt("phrases", str, help="phrase id/text file"),
        "phrase_embs": _opt("phrase_embs", str, help="phrase embedding file (ERE1)"),
        "out": _opt("out", str, help="output ratings JSONL"),
        "lam": _opt("lam", float, help="attention inverse temperature (required)"),
        "k": _opt("k", int, default=10, help="retained top phrases"),
    },
    "refine": {
        "regions": _opt("regions", str, help="region embedding file (ERE1)"),
        "phrases": _opt("phrases", str, help="phrase id/text file"),
        "phrase_embs": _opt("phrase_embs", str, help="phrase embedding file (ERE1)"),
        "text": _opt("text", str, help="explanation text (single line)"),
        "out": _opt("out", str, help="output records JSONL"),
        "image_id": _opt("image_id", str, default="image", help="id echoed in records"),
        "iterations": _opt("iterations", int, default=3, help="rewrite iterations"),
        "lam": _opt("lam", float, help="attention inverse temperature (required)"),
        "k": _opt("k", int, default=10, help="retained top phrases"),
        "flaw_category": _opt("flaw_category", str, default="", help="category passed to the rewriter"),
        "rewriter_cmd": _opt(
            "rewriter_cmd", str, default="",
            help="external rewriter command (JSONL on stdin/stdout); empty = identity",
        ),
        "embedder_cmd": _opt(
            "embedder_cmd", str, default="",
            help="external phrase embedder command (JSONL); required if the rewriter changes text",
        ),
    },
}


# -------------------------------------------------------------- manifests


def _write_manifest(subcommand: str, values: dict, path: Path) -> None:
    raw = canonical(SCHEMAS[subcommand], values)
    raw["subcommand"] = subcommand
    for key, ver in FORMAT_VERSIONS.items():
        raw[key] = str(ver)
    write_kv(raw, path)


def _manifest_path_for_file(out: Path) -> Path:
    return out.parent / (out.name + ".manifest.txt")


def _ensure_parent(path: Path) -> None:
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)


def _sorted_glob(pattern: str) -> list:
    paths = sorted(globmod.glob(pattern))
    if not paths:
        raise DataFormatError(f"no files match {pattern!r}")
    return [Path(p) for p in paths]


# ------------------------------------------------------------- subcommands


def cmd_synth_features(v) -> None:
    ds = synth_features(
        n_per_class=v["n"],
        dim=v["dim"],
        timesteps=v["timesteps"],
        gap=v["gap"],
        overlap_frac=v["overlap"],
        seed=v["seed"],
    )
    out = Path(v["out"])
    _ensure_parent(out)
    write_esf(ds, out)
    _write_manifest("synth-features", v, _manifest_path_for_file(out))
    print(f"wrote {ds.n_images} images x {len(ds.timesteps)} timesteps to {out}")


def cmd_train(v) -> None:
    ds = load_feature_file(v["features"])
    cfg = EnsembleConfig(
        T=v["T"],
        stride=v["stride"],
        eta=v["eta"],
        eps_lo=v["eps_lo"],
        eps_hi=v["eps_hi"],
        chain_weights=v["chain_weights"],
        hidden_dims=v["hidden"],
        train=TrainConfig(
            learning_rate=v["lr"],
            weight_decay=v["wd"],
            batch_size=v["batch"],
            epochs=v["epochs"],
            seed=v["seed"],
        ),
    )
    model, logs = train_ensemble(ds, cfg)
    out = Path(v["out"])
    save_ensemble(model, out)
    for k, log in logs.items():
        report.write_table(
            out / f"member_{k:02d}_log.csv",
            ["epoch", "loss", "weighted_error"],
            [(r.epoch, r.loss, r.weighted_error) for r in log],
        )
    if v["figures"]:
        report.save_training_figure(logs, out / "fig_training.png")
    _write_manifest("train", v, out / MANIFEST_BASENAME)
    alphas = ", ".join(f"{m.timestep}:{m.alpha:.4f}" for m in model.members)
    print(f"trained {len(model.members)} members ({alphas})")


def _metric_rows(result) -> list:
    rows = [
        (tag, stats.n, stats.correct, stats.accuracy)
        for tag, stats in sorted(result.per_tag.items())
    ]
    rows.append(("all", result.n, result.correct, result.accuracy))
    return rows


def cmd_eval(v) -> None:
    ds = load_feature_file(v["features"])
    if v["tag"]:
        keep = [i for i, t in enumerate(ds.tags) if t == v["tag"]]
        if not keep:
            raise DataFormatError(f"no images tagged {v['tag']!r} in {v['features']}")
        ds = ds.subset(keep)
    model = load_ensemble(v["ensemble"])
    result = evaluate(model, ds)
    rows = _metric_rows(result)
    out = Path(v["out"])
    _ensure_parent(out)
    report.write_table(out, ["tag", "n", "correct", "accuracy"], rows)
    if v["figures"]:
        report.save_metrics_figure(rows, out.with_suffix(".png"))
    _write_manifest("eval", v, _manifest_path_for_file(out))
    print(f"accuracy = {result.accuracy!r} ({result.correct}/{result.n})")


def cmd_predict(v) -> None:
    ds = load_feature_file(v["features"])
    model = load_ensemble(v["ensemble"])
    labels, scores = predict_batch(model, ds)
    out = Path(v["out"])
    _ensure_parent(out)
    report.write_table(
        out,
        ["index", "tag", "label", "score"],
        [(i, ds.tags[i], int(labels[i]), float(scores[i])) for i in range(ds.n_images)],
    )
    _write_manifest("predict", v, _manifest_path_for_file(out))
    print(f"scored {ds.n_images} images ({int((labels == 1).sum())} flagged synthetic)")


def _luma(arr: np.ndarray) -> np.ndarray:
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    return 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]


def cmd_spectra(v) -> None:
    r = load_raster(v["image"])
    sched = linear_betas(v["schedule_T"], v["beta_start"], v["beta_end"])
    out = Path(v["out"])
    out.mkdir(parents=True, exist_ok=True)
    mask = axis_mask(r.width, r.height, v["bandwidth"])
    for t in v["steps"]:
        eps = np.random.default_rng([v["seed"], t]).standard_normal(r.pixels.shape)
        noised = forward_noise(r.pixels, t, sched, eps)
        spectrum = fft2_plane(_luma(noised))
        power = power_grid(spectrum)
        display = log_power_display(power)
        peak = display.max()
        heat = display / peak if peak > 0.0 else display
        save_raster(Raster(heat), out / f"heat_t{t:02d}.pgm")
        edges, counts = energy_histogram(power, mask, v["bins"])
        report.write_table(
            out / f"hist_t{t:02d}.csv",
            ["bin_lo", "bin_hi", "count"],
            [
                (float(edges[i]), float(edges[i + 1]), int(counts[i]))
                for i in range(len(counts))
            ],
        )
        if v["figures"]:
            report.save_heatmap_figure(
                display, out / f"fig_heat_t{t:02d}.png", f"log power, step {t}"
            )
            report.save_histogram_figure(
                edges, counts, out / f"fig_hist_t{t:02d}.png", f"energy histogram, step {t}"
            )
    _write_manifest("spectra", v, out / MANIFEST_BASENAME)
    print(f"wrote spectra for steps {','.join(map(str, v['steps']))} to {out}")


def cmd_suppress(v) -> None:
    r = load_raster(v["image"])
    spectrum = fft2(r)
    power = power_grid(spectrum)
    mask = axis_mask(r.width, r.height, v["bandwidth"])
    peaks = top_percentile_peaks(power, v["percentile"], mask)
    reconstructed = ifft2(suppress(spectrum, peaks, v["ratio"]))
    out = Path(v["out"])
    _ensure_parent(out)
    save_raster(reconstructed, out)
    _write_manifest("suppress", v, _manifest_path_for_file(out))
    print(f"suppressed {len(peaks)} peaks at ratio {v['ratio']!r} -> {out}")


def cmd_variance(v) -> None:
    paths = _sorted_glob(v["images"])
    sched = linear_betas(v["schedule_T"], v["beta_start"], v["beta_end"])
    rows = []
    for i, path in enumerate(paths):
        r = load_raster(path)
        traj = variance_trajectory(r, sched, v["steps"], seed=_spun(v["seed"], i))
        for t, var in zip(traj.timesteps, traj.values):
            rows.append((path.name, int(t), float(var)))
    out = Path(v["out"])
    _ensure_parent(out)
    report.write_table(out, ["image_id", "t", "variance"], rows)
    if v["figures"]:
        report.save_variance_figure(rows, out.with_suffix(".png"))
    _write_manifest("variance", v, _manifest_path_for_file(out))
    print(f"wrote {len(rows)} variance rows for {len(paths)} images to {out}")


def cmd_perturb(v) -> None:
    paths = _sorted_glob(v["images"])
    out = Path(v["out"])
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, path in enumerate(paths):
        r = load_raster(path)
        seed_i = _spun(v["seed"], i)
        params = draw_perturb_params(seed_i)
        save_raster(perturb_suite(r, seed_i), out / path.name)
        lines.append(
            f"{path.name}\t{params.sigma!r}\t{params.theta!r}\t{params.alpha!r}\t{seed_i}"
        )
    (out / "perturbations.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest("perturb", v, out / MANIFEST_BASENAME)
    print(f"perturbed {len(paths)} images into {out}")


def _load_phrase_objects(phrases_path, embs_path) -> list:
    pairs = read_phrases(phrases_path)
    embs = read_ere(embs_path)
    if len(pairs) != embs.shape[0]:
        raise DataFormatError(
            f"{len(pairs)} phrases in {phrases_path} vs {embs.shape[0]} embeddings in {embs_path}"
        )
    return [Phrase(pid, text, embs[j]) for j, (pid, text) in enumerate(pairs)]


def cmd_rate(v) -> None:
    regions = load_regions(v["regions"])
    phrases = _load_phrase_objects(v["phrases"], v["phrase_embs"])
    ratings = [
        PhraseRating(p.phrase_id, p.text, rate_phrase(p.embedding, regions, v["lam"]))
        for p in phrases
    ]
    top = rank_topk(ratings, v["k"])
    top5, top10, overall = sim_summary(ratings)
    out = Path(v["out"])
    _ensure_parent(out)
    with open(out, "w", encoding="utf-8") as fh:
        for r in ratings:
            fh.write(
                json.dumps(
                    {"kind": "rating", "phrase_id": r.phrase_id, "text": r.text, "rating": r.rating},
                    sort_keys=True,
                )
                + "\n"
            )
        fh.write(
            json.dumps(
                {
                    "kind": "summary",
                    "k": v["k"],
                    "top_ids": [r.phrase_id for r in top],
                    "top5": top5,
                    "top10": top10,
                    "overall": overall,
                },
                sort_keys=True,
            )
            + "\n"
        )
    _write_manifest("rate", v, _manifest_path_for_file(out))
    print(f"rated {len(ratings)} phrases (overall mean {overall!r})")


class _JsonlWorker:
    """One external worker process speaking one JSON object per line."""

    def __init__(self, command: str):
        self.proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
        )

    def call(self, request: dict) -> dict:
        self.proc.stdin.write(json.dumps(request, sort_keys=True) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise RuntimeError("worker closed its output stream")
        return json.loads(line)

    def close(self) -> None:
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=10)


def cmd_refine(v) -> None:
    regions = load_regions(v["regions"])
    phrases = _load_phrase_objects(v["phrases"], v["phrase_embs"])
    workers = []

    rewriter = None
    if v["rewriter_cmd"]:
        rewriter_worker = _JsonlWorker(v["rewriter_cmd"])
        workers.append(rewriter_worker)

        def rewriter(text, retained):
            reply = rewriter_worker.call(
                {
                    "image_id": v["image_id"],
                    "flaw_category": v["flaw_category"],
                    "text": text,
                    "retained_phrases": retained,
                }
            )
            return str(reply["text"])

    embed_phrase = None
    if v["embedder_cmd"]:
        embed_worker = _JsonlWorker(v["embedder_cmd"])
        workers.append(embed_worker)

        def embed_phrase(text):
            reply = embed_worker.call({"text": text})
            return np.asarray(reply["embedding"], dtype=np.float64)

    try:
        records = refine_loop(
            v["image_id"],
            regions,
            v["text"],
            phrases,
            rewriter=rewriter,
            embed_phrase=embed_phrase,
            iterations=v["iterations"],
            k=v["k"],
            lam=v["lam"],
        )
    finally:
        for w in workers:
            w.close()
    out = Path(v["out"])
    _ensure_parent(out)
    write_records_jsonl(records, out)
    _write_manifest("refine", v, _manifest_path_for_file(out))
    failed = sum(1 for r in records if r.status != "ok")
    print(f"wrote {len(records)} refinement records ({failed} failures)")


HANDLERS = {
    "synth-features": cmd_synth_features,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "spectra": cmd_spectra,
    "suppress": cmd_suppress,
    "variance": cmd_variance,
    "perturb": cmd_perturb,
    "rate": cmd_rate,
    "refine": cmd_refine,
}


def cmd_run(manifest_path: str) -> None:
    values = read_kv(manifest_path)
    sub = values.pop("subcommand", None)
    if sub is None or sub not in HANDLERS:
        raise ParameterError(f"{manifest_path}: missing or unknown subcommand {sub!r}")
    for key, ver in FORMAT_VERSIONS.items():
        stored = values.pop(key, None)
        if stored is not None and stored != str(ver):
            raise DataFormatError(
                f"{manifest_path}: {key} {stored} not supported (this build writes {ver})"
            )
    HANDLERS[sub](resolve(SCHEMAS[sub], values))


# ---------------------------------------------------------------- plumbing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="synthscan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"synthscan {__version__}")
    subs = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    for name, schema in SCHEMAS.items():
        sp = subs.add_parser(name, help=f"{name} subcommand")
        sp.add_argument("--config", default=None, help="key = value config file")
        for opt in schema.values():
            flag = "--" + opt.name.replace("_", "-")
            note = "" if opt.default is REQUIRED else f" (default {to_text(opt.default)})"
            sp.add_argument(flag, dest=opt.name, default=None, help=opt.help + note)
    runner = subs.add_parser("run", help="replay a run from its manifest")
    runner.add_argument("manifest", help="manifest.txt written by a previous run")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.subcommand is None:
            raise _UsageError("a subcommand is required (see --help)")
        if ns.subcommand == "run":
            cmd_run(ns.manifest)
            return EXIT_OK
        schema = SCHEMAS[ns.subcommand]
        file_values = read_kv(ns.config) if ns.config else {}
        flag_values = {
            name: getattr(ns, name)
            for name in schema
            if getattr(ns, name) is not None
        }
        HANDLERS[ns.subcommand](resolve(schema, file_values, flag_values))
        return EXIT_OK
    except _UsageError as exc:
        return _fail(EXIT_USAGE, "UsageError", str(exc))
    except ParameterError as exc:
        return _fail(EXIT_USAGE, type(exc).__name__, str(exc))
    except DataFormatError as exc:
        return _fail(EXIT_DATA, type(exc).__name__, str(exc))
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, type(exc).__name__, str(exc))
    except OSError as exc:
        return _fail(EXIT_DATA, type(exc).__name__, str(exc))
    except SynthscanError as exc:  # pragma: no cover - future error classes
        return _fail(EXIT_DATA, type(exc).__name__, str(exc))


def _fail(code: int, kind: str, message: str) -> int:
    one_line = " ".join(str(message).split())
    print(f"synthscan: error: {kind}: {one_line}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
