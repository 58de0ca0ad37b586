"""Boosted ensemble of per-timestep classifiers.

One MLP is trained per retained timestep. Within a member the sample
weights evolve round by round (train an epoch, measure the weighted error,
derive the member weight, re-emphasize the misses); the final round's
member weight enters the signed weighted-sum prediction. Weight chaining
across members (classic AdaBoost shape) is available behind a config flag
but off by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptDataError, DataFormatError, NumericError, ParameterError
from .features import FeatureDataset
from .mlp import (
    AdamState,
    MlpModel,
    TrainConfig,
    init_mlp,
    load_model,
    predict_sign,
    save_model,
    train_epoch,
)

DEFAULT_HIDDEN = (1024, 512, 256, 128)
MANIFEST_NAME = "ensemble.txt"


# ================================================================ containers


@dataclass
class EnsembleConfig:
    T: int = 24
    stride: int = 3
    eta: float = 0.25
    eps_lo: float = 0.001
    eps_hi: float = 0.5
    chain_weights: bool = False
    hidden_dims: tuple = DEFAULT_HIDDEN
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.T < 1 or self.stride < 1:
            raise ParameterError("T and stride must be positive")
        if self.T % self.stride != 0:
            raise ParameterError(f"stride {self.stride} must divide T {self.T}")
        if self.eta <= 0.0:
            raise ParameterError(f"eta must be positive, got {self.eta}")
        if not (0.0 < self.eps_lo < self.eps_hi <= 0.5):
            raise ParameterError(
                f"need 0 < eps_lo < eps_hi <= 0.5, got ({self.eps_lo}, {self.eps_hi})"
            )
        if not self.hidden_dims or any(int(h) < 1 for h in self.hidden_dims):
            raise ParameterError(f"bad hidden dims {self.hidden_dims}")
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)

    @property
    def member_timesteps(self) -> tuple:
        return tuple(range(0, self.T + 1, self.stride))


@dataclass(frozen=True)
class Member:
    timestep: int
    model: MlpModel
    alpha: float


@dataclass(frozen=True)
class EnsembleModel:
    members: tuple  # of Member, ascending timestep
    stride: int
    T: int
    eta: float

    def __post_init__(self):
        members = tuple(self.members)
        expected = tuple(range(0, self.T + 1, self.stride))
        got = tuple(m.timestep for m in members)
        if got != expected:
            raise ParameterError(f"member timesteps {got} != stride grid {expected}")
        for m in members:
            if not math.isfinite(m.alpha):
                raise ParameterError(f"member {m.timestep} has non-finite weight")
        object.__setattr__(self, "members", members)


# ============================================================ weight algebra


def init_weights(n: int) -> np.ndarray:
    """Uniform simplex point: every sample starts at 1/N."""
    if n < 1:
        raise ParameterError(f"need at least one sample, got {n}")
    return np.full(n, 1.0 / n)


def weighted_error(model: MlpModel, data, labels_signed, w) -> float:
    """Weight mass on misclassified samples, normalized by total mass."""
    labels = np.asarray(labels_signed)
    w = np.asarray(w, dtype=np.float64)
    preds = predict_sign(model, data)
    wrong = preds != labels
    total = w.sum()
    if total <= 0.0:
        raise ParameterError("sample weights sum to zero")
    return float(w[wrong].sum() / total)


def clamp_error(eps_tilde: float, lo: float = 0.001, hi: float = 0.5) -> float:
    return min(max(eps_tilde, lo), hi)


def model_weight(eps_k: float) -> float:
    """alpha = 0.5 ln((1-eps)/eps); zero at eps=0.5, growing as eps falls."""
    if not (0.0 < eps_k < 1.0):
        raise ParameterError(f"clamped error must be in (0, 1), got {eps_k}")
    return 0.5 * math.log((1.0 - eps_k) / eps_k)


def update_weights(w, alpha: float, preds_signed, labels_signed, eta: float) -> np.ndarray:
    """Exponential reweight w_i <- w_i exp(-eta alpha h_i y_i), renormalized."""
    w = np.asarray(w, dtype=np.float64)
    h = np.asarray(preds_signed, dtype=np.float64)
    y = np.asarray(labels_signed, dtype=np.float64)
    if not (w.shape == h.shape == y.shape):
        raise ParameterError("weights, predictions, and labels must align")
    if not (np.isin(h, (-1.0, 1.0)).all() and np.isin(y, (-1.0, 1.0)).all()):
        raise ParameterError("predictions and labels must be +1/-1")
    with np.errstate(over="ignore"):
        scaled = w * np.exp(-eta * alpha * h * y)
    total = scaled.sum()
    if total <= 0.0 or not np.isfinite(total):
        raise NumericError("degenerate weight update (zero or non-finite mass)")
    return scaled / total


# =================================================================== training


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    weighted_error: float


@dataclass(frozen=True)
class MemberResult:
    member: Member
    log: tuple  # of EpochRecord
    final_sample_weights: np.ndarray


def _spun_seed(base: int, *path) -> int:
    return int(np.random.SeedSequence([int(base), *map(int, path)]).generate_state(1)[0])


def train_member(
    k: int,
    data_k,
    labels_signed,
    cfg: EnsembleConfig,
    in_dim: int = None,
    init_w=None,
) -> MemberResult:
    """Round loop for one timestep: epoch of SGD under the current sample
    weights, then error -> clamp -> member weight -> reweight. The last
    round's member weight is the one the ensemble uses."""
    x = np.asarray(data_k, dtype=np.float64)
    y_signed = np.asarray(labels_signed)
    if in_dim is None:
        in_dim = x.shape[1]
    dims = [in_dim, *cfg.hidden_dims, 1]
    model = init_mlp(dims, seed=_spun_seed(cfg.train.seed, k, 0))
    member_cfg = TrainConfig(
        learning_rate=cfg.train.learning_rate,
        weight_decay=cfg.train.weight_decay,
        beta1=cfg.train.beta1,
        beta2=cfg.train.beta2,
        adam_eps=cfg.train.adam_eps,
        batch_size=cfg.train.batch_size,
        epochs=cfg.train.epochs,
        seed=_spun_seed(cfg.train.seed, k, 1),
    )
    y01 = (y_signed.astype(np.float64) + 1.0) / 2.0
    w = init_weights(len(x)) if init_w is None else np.asarray(init_w, dtype=np.float64)
    opt = AdamState.for_model(model)
    alpha = 0.0
    log = []
    for epoch in range(member_cfg.epochs):
        loss = train_epoch(model, x, y01, w, member_cfg, epoch, opt)
        eps_tilde = weighted_error(model, x, y_signed, w)
        alpha = model_weight(clamp_error(eps_tilde, cfg.eps_lo, cfg.eps_hi))
        w = update_weights(w, alpha, predict_sign(model, x), y_signed, cfg.eta)
        log.append(EpochRecord(epoch, loss, eps_tilde))
    return MemberResult(Member(k, model, alpha), tuple(log), w)


def train_ensemble(ds: FeatureDataset, cfg: EnsembleConfig):
    """Train one member per stride timestep; returns (model, member logs)."""
    if ds.n_images < 2:
        raise ParameterError("ensemble training needs at least two images")
    ts_index = {t: i for i, t in enumerate(ds.timesteps)}
    missing = [t for t in cfg.member_timesteps if t not in ts_index]
    if missing:
        raise ParameterError(f"dataset lacks features for timesteps {missing}")
    members, logs = [], {}
    carried = None
    for k in cfg.member_timesteps:
        data_k = ds.vectors[:, ts_index[k], :].astype(np.float64)
        res = train_member(k, data_k, ds.labels, cfg, in_dim=ds.dim, init_w=carried)
        if cfg.chain_weights:
            carried = res.final_sample_weights
        members.append(res.member)
        logs[k] = res.log
    return EnsembleModel(tuple(members), cfg.stride, cfg.T, cfg.eta), logs


# ================================================================= prediction


def predict(e: EnsembleModel, features_by_timestep) -> tuple:
    """(label, score) for one image from a {timestep: vector} mapping.

    score = sum_k alpha_k h_k(x); the 0 boundary counts as synthetic (+1).
    """
    score = 0.0
    for m in e.members:
        if m.timestep not in features_by_timestep:
            raise ParameterError(f"missing features for timestep {m.timestep}")
        vec = np.asarray(features_by_timestep[m.timestep], dtype=np.float64)
        score += m.alpha * int(predict_sign(m.model, vec[None, :])[0])
    return (1 if score >= 0.0 else -1), float(score)


def predict_batch(e: EnsembleModel, ds: FeatureDataset):
    """(labels, scores) arrays over a whole dataset."""
    ts_index = {t: i for i, t in enumerate(ds.timesteps)}
    missing = [m.timestep for m in e.members if m.timestep not in ts_index]
    if missing:
        raise ParameterError(f"dataset lacks features for timesteps {missing}")
    scores = np.zeros(ds.n_images)
    for m in e.members:
        data_k = ds.vectors[:, ts_index[m.timestep], :].astype(np.float64)
        scores += m.alpha * predict_sign(m.model, data_k).astype(np.float64)
    labels = np.where(scores >= 0.0, 1, -1).astype(np.int8)
    return labels, scores


@dataclass(frozen=True)
class TagStats:
    n: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.n


@dataclass(frozen=True)
class EvalResult:
    n: int
    correct: int
    accuracy: float
    per_class: dict  # {+1: TagStats, -1: TagStats} (absent class omitted)
    per_tag: dict  # {tag: TagStats}
    confusion: dict  # tp/tn/fp/fn with +1 as the positive class


def evaluate(e: EnsembleModel, ds: FeatureDataset) -> EvalResult:
    if ds.n_images == 0:
        raise ParameterError("cannot evaluate on an empty dataset")
    preds, _ = predict_batch(e, ds)
    hit = preds == ds.labels
    per_class = {}
    for cls in (1, -1):
        sel = ds.labels == cls
        if sel.any():
            per_class[cls] = TagStats(int(sel.sum()), int(hit[sel].sum()))
    per_tag = {}
    for tag in sorted(set(ds.tags)):
        sel = np.array([t == tag for t in ds.tags])
        per_tag[tag] = TagStats(int(sel.sum()), int(hit[sel].sum()))
    confusion = {
        "tp": int(((preds == 1) & (ds.labels == 1)).sum()),
        "tn": int(((preds == -1) & (ds.labels == -1)).sum()),
        "fp": int(((preds == 1) & (ds.labels == -1)).sum()),
        "fn": int(((preds == -1) & (ds.labels == 1)).sum()),
    }
    return EvalResult(
        ds.n_images, int(hit.sum()), float(hit.mean()), per_class, per_tag, confusion
    )


# ================================================================ persistence


def save_ensemble(e: EnsembleModel, out_dir) -> None:
    """Manifest plus one model file per member under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        f"T = {e.T}",
        f"stride = {e.stride}",
        f"eta = {e.eta!r}",
        f"members = {len(e.members)}",
    ]
    for m in e.members:
        rel = f"member_{m.timestep:02d}.emlp"
        save_model(m.model, out_dir / rel)
        lines.append(f"{m.timestep} {m.alpha!r} {rel}")
    (out_dir / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_ensemble(path) -> EnsembleModel:
    """Accepts the ensemble directory or the manifest file itself."""
    path = Path(path)
    manifest = path / MANIFEST_NAME if path.is_dir() else path
    if not manifest.exists():
        raise DataFormatError(f"no ensemble manifest at {manifest}")
    lines = [
        ln.strip()
        for ln in manifest.read_text(encoding="utf-8").splitlines()
        if ln.strip()
    ]
    header = {}
    body = []
    for ln in lines:
        if "=" in ln and not body:
            key, _, val = ln.partition("=")
            header[key.strip()] = val.strip()
        else:
            body.append(ln)
    try:
        T = int(header["T"])
        stride = int(header["stride"])
        eta = float(header["eta"])
        count = int(header["members"])
    except (KeyError, ValueError) as exc:
        raise CorruptDataError(f"{manifest}: bad header ({exc})") from exc
    if len(body) != count:
        raise CorruptDataError(f"{manifest}: {len(body)} member lines, header says {count}")
    members = []
    for ln in body:
        parts = ln.split()
        if len(parts) != 3:
            raise CorruptDataError(f"{manifest}: bad member line {ln!r}")
        try:
            k, alpha = int(parts[0]), float(parts[1])
        except ValueError as exc:
            raise CorruptDataError(f"{manifest}: bad member line {ln!r}") from exc
        try:
            model = load_model(manifest.parent / parts[2])
        except FileNotFoundError as exc:
            raise CorruptDataError(f"{manifest}: missing member file {parts[2]}") from exc
        members.append(Member(k, model, alpha))
    try:
        return EnsembleModel(tuple(members), stride, T, eta)
    except ParameterError as exc:
        raise CorruptDataError(f"{manifest}: {exc}") from exc
