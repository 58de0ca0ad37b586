"""From-scratch MLP: forward/backward passes, AdamW, and ranking metrics.

The layer stack for dims [d_in, h_1, ..., h_k, d_out] is, per hidden layer,
linear -> batch norm -> LeakyReLU(0.1) -> dropout(0.5), then a final linear
into a sigmoid. Batch norm normalizes with population (biased) batch
variance and keeps running estimates with constant momentum 0.1; backprop
flows through the batch statistics exactly, which is what the
finite-difference gate in the test suite checks.

Parameters are float64 in memory and float32 in the EMLP container, so a
file -> model -> file trip is byte-identical.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    CorruptDataError,
    FormatVersionError,
    NumericError,
    ParameterError,
)

LEAKY_SLOPE = 0.1
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
DROPOUT_RATE = 0.5
PROB_FLOOR = 1e-7
N_FLAW_LABELS = 14

EMLP_MAGIC = b"EMLP"
EMLP_VERSION = 1


# ====================================================================== model


@dataclass
class MlpModel:
    """Weights/biases per linear layer plus batch-norm state per hidden one."""

    dims: tuple
    weights: list  # weights[i]: (dims[i+1], dims[i]) float64
    biases: list
    bn_gamma: list  # one entry per hidden layer
    bn_beta: list
    bn_mean: list  # running estimates, not trained parameters
    bn_var: list

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 3:
            raise ParameterError(f"need at least one hidden layer, got dims {dims}")
        if any(d < 1 for d in dims):
            raise ParameterError(f"layer widths must be positive: {dims}")
        n_lin = len(dims) - 1
        n_hidden = n_lin - 1
        if len(self.weights) != n_lin or len(self.biases) != n_lin:
            raise ParameterError("linear parameter count does not match dims")
        for i in range(n_lin):
            w = np.asarray(self.weights[i], dtype=np.float64)
            b = np.asarray(self.biases[i], dtype=np.float64)
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ParameterError(f"layer {i} parameter shapes break the dim chain")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ParameterError(f"layer {i} has non-finite parameters")
            self.weights[i] = w
            self.biases[i] = b
        for name, group in (
            ("gamma", self.bn_gamma),
            ("beta", self.bn_beta),
            ("mean", self.bn_mean),
            ("var", self.bn_var),
        ):
            if len(group) != n_hidden:
                raise ParameterError(f"batch-norm {name} count does not match dims")
            for i in range(n_hidden):
                arr = np.asarray(group[i], dtype=np.float64)
                if arr.shape != (dims[i + 1],):
                    raise ParameterError(f"batch-norm {name}[{i}] has wrong width")
                if not np.isfinite(arr).all():
                    raise ParameterError(f"batch-norm {name}[{i}] is non-finite")
                group[i] = arr
        for v in self.bn_var:
            if np.any(v < 0.0):
                raise ParameterError("running variance must be >= 0")
        object.__setattr__(self, "dims", dims)

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    @property
    def n_hidden(self) -> int:
        return len(self.dims) - 2

    def copy(self) -> "MlpModel":
        return MlpModel(
            self.dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [g.copy() for g in self.bn_gamma],
            [b.copy() for b in self.bn_beta],
            [m.copy() for m in self.bn_mean],
            [v.copy() for v in self.bn_var],
        )

    def trainable(self) -> list:
        """Parameter arrays in a fixed order (running stats excluded)."""
        return list(self.weights) + list(self.biases) + list(self.bn_gamma) + list(self.bn_beta)


def init_mlp(dims, seed: int) -> MlpModel:
    """Kaiming-uniform weights sized for the LeakyReLU gain; biases zero."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 3:
        raise ParameterError(f"need at least one hidden layer, got dims {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / ((1.0 + LEAKY_SLOPE**2) * fan_in))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    n_hidden = len(dims) - 2
    return MlpModel(
        dims,
        weights,
        biases,
        [np.ones(dims[i + 1]) for i in range(n_hidden)],
        [np.zeros(dims[i + 1]) for i in range(n_hidden)],
        [np.zeros(dims[i + 1]) for i in range(n_hidden)],
        [np.ones(dims[i + 1]) for i in range(n_hidden)],
    )


def kaiming_bound(fan_in: int) -> float:
    return float(np.sqrt(6.0 / ((1.0 + LEAKY_SLOPE**2) * fan_in)))


# ==================================================================== forward


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_batch(m: MlpModel, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != m.in_dim:
        raise ParameterError(f"batch shape {x.shape} does not feed a {m.in_dim}-dim input")
    if not np.isfinite(x).all():
        raise ParameterError("batch contains non-finite values")
    return x


def _run_forward(m, x, train, dropout_rng, update_running):
    """Shared forward pass; returns (probs, cache) where cache carries the
    per-layer intermediates the backward pass needs."""
    cache = {"h": [x], "z": [], "xhat": [], "mu": [], "var": [], "mask": [], "act_in": []}
    h = x
    for i in range(m.n_hidden):
        z = h @ m.weights[i].T + m.biases[i]
        if train:
            mu = z.mean(axis=0)
            var = z.var(axis=0)  # population variance over the batch
            if update_running:
                m.bn_mean[i] = (1.0 - BN_MOMENTUM) * m.bn_mean[i] + BN_MOMENTUM * mu
                m.bn_var[i] = (1.0 - BN_MOMENTUM) * m.bn_var[i] + BN_MOMENTUM * var
        else:
            mu, var = m.bn_mean[i], m.bn_var[i]
        xhat = (z - mu) / np.sqrt(var + BN_EPS)
        a_in = m.bn_gamma[i] * xhat + m.bn_beta[i]
        act = np.where(a_in >= 0.0, a_in, LEAKY_SLOPE * a_in)
        if train and dropout_rng is not None:
            mask = (dropout_rng.uniform(size=act.shape) >= DROPOUT_RATE) / (1.0 - DROPOUT_RATE)
        else:
            mask = np.ones_like(act)
        h = act * mask
        cache["z"].append(z)
        cache["mu"].append(mu)
        cache["var"].append(var)
        cache["xhat"].append(xhat)
        cache["act_in"].append(a_in)
        cache["mask"].append(mask)
        cache["h"].append(h)
    z_out = h @ m.weights[-1].T + m.biases[-1]
    probs = _sigmoid(z_out)
    cache["probs"] = probs
    return probs, cache


def forward(m: MlpModel, batch, mode: str = "eval", seed=None) -> np.ndarray:
    """Probabilities for a batch; `mode` is "train" or "eval".

    Train mode normalizes with this batch's statistics, applies a seeded
    dropout mask, and advances the running estimates. Eval mode is a pure
    function of (model, batch).
    """
    x = _check_batch(m, batch)
    if mode == "eval":
        probs, _ = _run_forward(m, x, train=False, dropout_rng=None, update_running=False)
        return probs
    if mode != "train":
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    if x.shape[0] < 2:
        raise ParameterError("train-mode forward needs a batch of >= 2")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    probs, _ = _run_forward(m, x, train=True, dropout_rng=rng, update_running=True)
    return probs


# ======================================================================= loss


def weighted_bce(probs, labels01, weights) -> float:
    """-sum_i w_i [y_i log p_i + (1-y_i) log(1-p_i)], probs clamped first.

    2D probs are summed over the label axis with the per-sample weight
    applied to each label term.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels01, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if p.shape != y.shape:
        raise ParameterError(f"probs {p.shape} vs labels {y.shape}")
    if w.shape != (p.shape[0],):
        raise ParameterError(f"weights {w.shape} vs {p.shape[0]} samples")
    if np.any(w < 0.0):
        raise ParameterError("weights must be >= 0")
    q = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    per_sample = y * np.log(q) + (1.0 - y) * np.log(1.0 - q)
    if per_sample.ndim == 2:
        per_sample = per_sample.sum(axis=1)
    return float(-(w * per_sample).sum())


def loss_and_gradients(m: MlpModel, batch, labels01, weights, dropout_rng=None):
    """Weighted-BCE loss plus exact gradients for every trainable array.

    Pure with respect to the model (running statistics are left alone);
    pass a generator to sample a dropout mask, or None to disable dropout.
    Gradient order matches MlpModel.trainable().
    """
    return _loss_and_grads(m, batch, labels01, weights, dropout_rng, update_running=False)


def _loss_and_grads(m, batch, labels01, weights, dropout_rng, update_running):
    x = _check_batch(m, batch)
    if x.shape[0] < 2:
        raise ParameterError("training loss needs a batch of >= 2")
    y = np.asarray(labels01, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape != (x.shape[0], m.out_dim):
        raise ParameterError(f"labels shape {y.shape} vs ({x.shape[0]}, {m.out_dim})")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (x.shape[0],):
        raise ParameterError(f"weights shape {w.shape} vs {x.shape[0]} samples")

    probs, cache = _run_forward(
        m, x, train=True, dropout_rng=dropout_rng, update_running=update_running
    )
    loss = weighted_bce(probs, y, w)

    # clamped probabilities contribute a flat loss, hence zero gradient
    interior = (probs > PROB_FLOOR) & (probs < 1.0 - PROB_FLOOR)
    gz = np.where(interior, w[:, None] * (probs - y), 0.0)

    d_weights = [None] * len(m.weights)
    d_biases = [None] * len(m.biases)
    d_gamma = [None] * m.n_hidden
    d_beta = [None] * m.n_hidden

    h_last = cache["h"][-1]
    d_weights[-1] = gz.T @ h_last
    d_biases[-1] = gz.sum(axis=0)
    gh = gz @ m.weights[-1]

    for i in reversed(range(m.n_hidden)):
        gh = gh * cache["mask"][i]
        a_in = cache["act_in"][i]
        ga = gh * np.where(a_in >= 0.0, 1.0, LEAKY_SLOPE)
        xhat = cache["xhat"][i]
        d_gamma[i] = (ga * xhat).sum(axis=0)
        d_beta[i] = ga.sum(axis=0)
        # exact batch-norm backward through mu and var
        n = x.shape[0]
        gxhat = ga * m.bn_gamma[i]
        z = cache["z"][i]
        mu, var = cache["mu"][i], cache["var"][i]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        zc = z - mu
        gvar = (gxhat * zc).sum(axis=0) * (-0.5) * inv_std**3
        gmu = -(gxhat.sum(axis=0)) * inv_std + gvar * (-2.0 / n) * zc.sum(axis=0)
        gzl = gxhat * inv_std + gvar * (2.0 / n) * zc + gmu / n
        d_weights[i] = gzl.T @ cache["h"][i]
        d_biases[i] = gzl.sum(axis=0)
        gh = gzl @ m.weights[i]

    grads = d_weights + d_biases + d_gamma + d_beta
    return loss, grads


# ================================================================== optimizer


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 10
    seed: int = 42

    def __post_init__(self):
        if self.learning_rate < 0.0 or self.weight_decay < 0.0:
            raise ParameterError("learning rate and weight decay must be >= 0")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ParameterError("Adam betas must lie in (0, 1)")
        if self.adam_eps <= 0.0:
            raise ParameterError("adam_eps must be positive")
        if self.batch_size < 2:
            raise ParameterError("batch size must be >= 2 (batch norm needs it)")
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")


@dataclass
class AdamState:
    """First/second moment estimates per trainable array plus a step count."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_model(cls, model: MlpModel) -> "AdamState":
        params = model.trainable()
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adamw_update(model: MlpModel, grads, state: AdamState, cfg: TrainConfig) -> None:
    """One decoupled-weight-decay Adam step over every trainable array."""
    state.step += 1
    t = state.step
    params = model.trainable()
    lr, wd = cfg.learning_rate, cfg.weight_decay
    for p, g, mo, vo in zip(params, grads, state.m, state.v):
        mo *= cfg.beta1
        mo += (1.0 - cfg.beta1) * g
        vo *= cfg.beta2
        vo += (1.0 - cfg.beta2) * g * g
        m_hat = mo / (1.0 - cfg.beta1**t)
        v_hat = vo / (1.0 - cfg.beta2**t)
        p -= lr * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps) + wd * p)


def train_epoch(
    m: MlpModel,
    data,
    labels01,
    sample_weights,
    cfg: TrainConfig,
    epoch_index: int,
    opt: AdamState = None,
) -> float:
    """One pass over the data in seeded-shuffle order; returns mean batch loss.

    A trailing batch of a single sample is dropped (batch norm cannot run
    on it). Pass the same AdamState across epochs to keep optimizer
    momenta; omitting it runs a self-contained single-epoch update.
    """
    x = np.asarray(data, dtype=np.float64)
    y = np.asarray(labels01, dtype=np.float64)
    w = np.asarray(sample_weights, dtype=np.float64)
    if len(w) != len(x):
        raise ParameterError(f"{len(w)} weights vs {len(x)} samples")
    if opt is None:
        opt = AdamState.for_model(m)
    rng = np.random.default_rng([cfg.seed, epoch_index])
    order = rng.permutation(len(x))
    losses = []
    for start in range(0, len(x), cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        if len(idx) < 2:
            continue
        loss, grads = _loss_and_grads(
            m, x[idx], y[idx], w[idx], dropout_rng=rng, update_running=True
        )
        if not np.isfinite(loss):
            raise NumericError(
                f"non-finite loss {loss} in epoch {epoch_index} at batch offset {start}"
            )
        adamw_update(m, grads, opt, cfg)
        losses.append(loss)
    if not losses:
        raise ParameterError("no trainable batch (need >= 2 samples)")
    return float(np.mean(losses))


# ================================================================= prediction


def predict_sign(m: MlpModel, x) -> np.ndarray:
    """+1 where the eval-mode probability is >= 0.5, else -1."""
    if m.out_dim != 1:
        raise ParameterError(f"signed prediction needs a 1-wide head, got {m.out_dim}")
    probs = forward(m, x, mode="eval")
    return np.where(probs[:, 0] >= 0.5, 1, -1).astype(np.int8)


def predict_multilabel(m: MlpModel, x) -> np.ndarray:
    """Per-label boolean matrix from independent 0.5 thresholds."""
    if m.out_dim != N_FLAW_LABELS:
        raise ParameterError(
            f"multi-label head must be {N_FLAW_LABELS} wide, got {m.out_dim}"
        )
    return forward(m, x, mode="eval") >= 0.5


# ==================================================================== metrics


def exact_match(preds, truth) -> float:
    """Fraction of rows whose label sets match exactly."""
    p = np.asarray(preds, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise ParameterError(f"prediction shape {p.shape} vs truth {t.shape}")
    if p.size == 0:
        raise ParameterError("exact match over an empty matrix")
    return float((p == t).all(axis=1).mean())


def average_precision(scores, truth) -> float:
    """AP for one label column: mean precision@k over the positive ranks.

    Rows are ranked by descending score; equal scores keep ascending row
    order. Returns NaN when the column has no positives.
    """
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truth, dtype=bool)
    if s.shape != t.shape or s.ndim != 1:
        raise ParameterError("average precision wants matching 1-D columns")
    if not t.any():
        return float("nan")
    order = np.argsort(-s, kind="stable")
    hits = t[order]
    cum_pos = np.cumsum(hits)
    ranks = np.nonzero(hits)[0] + 1
    # sequential left-to-right sum: canonical order, reproducible bit-for-bit
    precisions = (cum_pos[ranks - 1] / ranks).tolist()
    return sum(precisions) / len(precisions)


@dataclass(frozen=True)
class MapResult:
    value: float
    skipped: tuple  # label columns with no positive instance


def mean_average_precision(scores, truth) -> MapResult:
    """Mean AP over label columns that have at least one positive."""
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truth, dtype=bool)
    if s.shape != t.shape or s.ndim != 2:
        raise ParameterError("mAP wants matching 2-D score/truth matrices")
    if s.size == 0:
        raise ParameterError("mAP over an empty matrix")
    aps, skipped = [], []
    for j in range(s.shape[1]):
        if t[:, j].any():
            aps.append(average_precision(s[:, j], t[:, j]))
        else:
            skipped.append(j)
    if not aps:
        raise ParameterError("every label column is empty of positives")
    return MapResult(sum(aps) / len(aps), tuple(skipped))


# ================================================================== model I/O


def _to_f4(arr: np.ndarray) -> bytes:
    # the container stores float32; a value outside that range would come
    # back as inf and fail the load-time finite check, so reject it now
    with np.errstate(over="ignore"):
        cast = arr.astype("<f4")
    if not np.isfinite(cast).all():
        raise NumericError("model parameters exceed the float32 storage range")
    return cast.tobytes()


def save_model(m: MlpModel, path) -> None:
    """EMLP container: header, then per layer W, b (+ BN arrays when hidden),
    all little-endian float32, with a CRC32 trailer."""
    buf = bytearray()
    buf += EMLP_MAGIC
    buf += struct.pack("<II", EMLP_VERSION, len(m.dims))
    buf += struct.pack(f"<{len(m.dims)}I", *m.dims)
    for i in range(len(m.weights)):
        buf += _to_f4(m.weights[i])
        buf += _to_f4(m.biases[i])
        if i < m.n_hidden:
            for arr in (m.bn_gamma[i], m.bn_beta[i], m.bn_mean[i], m.bn_var[i]):
                buf += _to_f4(arr)
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise CorruptDataError(f"{path}: too short to be a model file")
    if data[:4] != EMLP_MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}, want {EMLP_MAGIC!r}")
    version, n_dims = struct.unpack_from("<II", data, 4)
    if version != EMLP_VERSION:
        raise FormatVersionError(f"{path}: version {version}, this reader wants {EMLP_VERSION}")
    stored = struct.unpack_from("<I", data, len(data) - 4)[0]
    actual = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored != actual:
        raise ChecksumError(f"{path}: CRC mismatch (stored {stored:#x}, actual {actual:#x})")
    if n_dims < 3 or n_dims > 64:
        raise CorruptDataError(f"{path}: implausible layer count {n_dims}")
    pos = 12
    if pos + 4 * n_dims > len(data) - 4:
        raise CorruptDataError(f"{path}: truncated dim table")
    dims = struct.unpack_from(f"<{n_dims}I", data, pos)
    pos += 4 * n_dims

    def take(count):
        nonlocal pos
        nbytes = 4 * count
        if pos + nbytes > len(data) - 4:
            raise CorruptDataError(f"{path}: parameter payload truncated")
        out = np.frombuffer(data, dtype="<f4", count=count, offset=pos).astype(np.float64)
        pos += nbytes
        return out

    weights, biases = [], []
    gamma, beta, mean, var = [], [], [], []
    n_hidden = n_dims - 2
    for i in range(n_dims - 1):
        weights.append(take(dims[i + 1] * dims[i]).reshape(dims[i + 1], dims[i]))
        biases.append(take(dims[i + 1]))
        if i < n_hidden:
            gamma.append(take(dims[i + 1]))
            beta.append(take(dims[i + 1]))
            mean.append(take(dims[i + 1]))
            var.append(take(dims[i + 1]))
    if pos != len(data) - 4:
        raise CorruptDataError(f"{path}: {len(data) - 4 - pos} unexpected trailing bytes")
    try:
        return MlpModel(dims, weights, biases, gamma, beta, mean, var)
    except ParameterError as exc:
        raise CorruptDataError(f"{path}: {exc}") from exc
