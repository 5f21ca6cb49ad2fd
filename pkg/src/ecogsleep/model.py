"""Single sigmoid neuron over windowed mean/deviation features.

The classifier is ``p = sigmoid(sum_k x_k * w_k + b)`` with inputs ordered
``(mu_a, sigma_a, mu_b, sigma_b[, mu_c, sigma_c])`` for the channels of its
channel set in ascending order; ``p >= threshold`` means behavioral sleep.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .ingest import Hypnogram, common_grid
from .preprocess import FEATURE_MODES, LITERAL, FeatureSeries

logger = logging.getLogger(__name__)

CHANNEL_SETS = ((1, 2), (1, 3), (2, 3), (1, 2, 3))
NORMALIZATION_STAGES = ("signal", "features")

# reference averaged coefficients for the four channel combinations:
# channel set -> (bias, (w_mu_a, w_sigma_a, w_mu_b, w_sigma_b[, w_mu_c, w_sigma_c]))
AVERAGED_COEFFICIENTS = {
    (1, 2): (-3.02, (-0.51, 3.22, -1.56, 4.76)),
    (1, 3): (-2.13, (-0.06, 6.52, -1.05, -1.23)),
    (2, 3): (-2.59, (-0.97, 8.78, -1.36, -1.73)),
    (1, 2, 3): (-2.67, (-0.10, 3.59, -0.84, 6.29, -1.24, -2.78)),
}


def parse_channel_set(value) -> tuple[int, ...]:
    """Accept ``(1, 2)``, ``"12"``, ``"1,2"`` or ``"1&2"``."""
    if isinstance(value, str):
        digits = [ch for ch in value if ch.isdigit()]
        chans = tuple(int(d) for d in digits)
    else:
        chans = tuple(int(c) for c in value)
    if not chans:
        raise DataError(f"empty channel set {value!r}")
    if list(chans) != sorted(set(chans)) or chans[0] < 1:
        raise DataError(f"channel set must be ascending distinct 1-based ids, got {value!r}")
    return chans


@dataclass(frozen=True)
class PerceptronModel:
    channel_set: tuple[int, ...]
    weights: tuple[float, ...]
    bias: float
    threshold: float = 0.5
    feature_mode: str = LITERAL
    normalization: dict = field(
        default_factory=lambda: {"stages": list(NORMALIZATION_STAGES)}, compare=False
    )

    def __post_init__(self):
        chans = parse_channel_set(self.channel_set)
        w = tuple(float(v) for v in self.weights)
        if len(w) != 2 * len(chans):
            raise DataError(f"{len(chans)} channels need {2 * len(chans)} weights, got {len(w)}")
        if not all(np.isfinite(w)) or not np.isfinite(self.bias):
            raise DataError("model parameters must be finite")
        if not 0 < self.threshold < 1:
            raise DataError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.feature_mode not in FEATURE_MODES:
            raise DataError(f"unknown feature mode {self.feature_mode!r}")
        object.__setattr__(self, "channel_set", chans)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "threshold", float(self.threshold))

    @property
    def n_inputs(self) -> int:
        return len(self.weights)

    def to_dict(self) -> dict:
        return {
            "channel_set": list(self.channel_set),
            "weights": list(self.weights),
            "bias": self.bias,
            "threshold": self.threshold,
            "feature_mode": self.feature_mode,
            "normalization": self.normalization,
        }

    @classmethod
    def from_dict(cls, d: dict) -> PerceptronModel:
        try:
            return cls(
                channel_set=tuple(d["channel_set"]),
                weights=tuple(d["weights"]),
                bias=d["bias"],
                threshold=d.get("threshold", 0.5),
                feature_mode=d.get("feature_mode", LITERAL),
                normalization=d.get("normalization", {"stages": list(NORMALIZATION_STAGES)}),
            )
        except KeyError as exc:
            raise DataError(f"model file lacks field {exc}") from None


def save_model(m: PerceptronModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(m.to_dict(), indent=2) + "\n")


def load_model(path: str | Path) -> PerceptronModel:
    try:
        return PerceptronModel.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise DataError(f"model {path} is not valid JSON: {exc}") from None


def pretrained(channel_set) -> PerceptronModel:
    """Reference averaged coefficients for one of the four supported channel sets.

    Single channels are rejected: one channel alone was found insufficient
    for classification.
    """
    chans = parse_channel_set(channel_set)
    if chans not in AVERAGED_COEFFICIENTS:
        raise DataError(
            f"no pretrained coefficients for channel set {chans}; choose from {CHANNEL_SETS}"
        )
    bias, weights = AVERAGED_COEFFICIENTS[chans]
    return PerceptronModel(chans, weights, bias)


def pretrained_path(channel_set) -> Path:
    """Location of the shipped JSON file for a pretrained channel set."""
    chans = parse_channel_set(channel_set)
    name = "averaged_" + "".join(map(str, chans)) + ".json"
    return Path(str(resources.files("ecogsleep") / "pretrained" / name))


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def sigmoid(z):
    """Logistic function, evaluated without overflow for any finite ``z``."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logits(X: np.ndarray, weights, bias: float) -> np.ndarray:
    """``X @ weights + bias`` accumulated column by column.

    A fixed left-to-right order keeps single-row (streaming) and batch
    evaluation bitwise identical.
    """
    X = np.atleast_2d(X)
    w = np.asarray(weights, dtype=np.float64)
    if X.shape[1] != w.size:
        raise DataError(f"expected {w.size} inputs, got {X.shape[1]}")
    z = X[:, 0] * w[0]
    for k in range(1, w.size):
        z = z + X[:, k] * w[k]
    return z + bias


def forward(m: PerceptronModel, x) -> float | np.ndarray:
    """Output probability for one input vector (float) or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != m.n_inputs:
        raise DataError(f"model takes {m.n_inputs} inputs, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite model input")
    p = sigmoid(logits(x, m.weights, m.bias))
    return float(p[0]) if x.ndim == 1 else p


def _check_compatible(m: PerceptronModel, fs: FeatureSeries) -> None:
    if fs.feature_mode != m.feature_mode:
        raise DataError(
            f"model expects {m.feature_mode!r} features, series has {fs.feature_mode!r}"
        )
    wants_renorm = "features" in m.normalization.get("stages", NORMALIZATION_STAGES)
    if wants_renorm and not fs.renormalized:
        raise DataError("model expects renormalized features")


def predict_proba(m: PerceptronModel, fs: FeatureSeries) -> np.ndarray:
    _check_compatible(m, fs)
    return forward(m, fs.design_matrix(m.channel_set))


def classify(m: PerceptronModel, fs: FeatureSeries,
             proba: np.ndarray | None = None) -> Hypnogram:
    """Label each window: 1 (BS) where the probability reaches the threshold."""
    p = predict_proba(m, fs) if proba is None else proba
    return Hypnogram(fs.start_time_s, fs.stride_s, (p >= m.threshold).astype(np.int8))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def bce_loss(weights, bias: float, X: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy, computed from logits to avoid log(0)."""
    z = logits(X, weights, bias)
    return float(np.mean(np.maximum(z, 0) - y * z + np.log1p(np.exp(-np.abs(z)))))


def bce_gradient(weights, bias: float, X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    """Gradient of :func:`bce_loss`: mean of ``(p - y) * x`` and of ``(p - y)``."""
    r = sigmoid(logits(X, weights, bias)) - y
    return (X * r[:, None]).sum(axis=0) / y.size, float(r.sum() / y.size)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 500
    batch_size: int = 32
    seed: int = 0
    class_balance: str = "truncate-majority"
    threshold: float = 0.5

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise DataError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise DataError("beta1 and beta2 must lie in (0, 1)")
        if not self.epsilon > 0:
            raise DataError("epsilon must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise DataError("epochs and batch_size must be positive")
        if self.class_balance not in ("truncate-majority", "none"):
            raise DataError(f"unknown class_balance {self.class_balance!r}")


@dataclass(frozen=True)
class TrainResult:
    model: PerceptronModel
    accuracy: float
    loss_history: tuple[float, ...]
    n_samples: int


def balance_classes(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices keeping every minority sample and an equal random subset of the majority."""
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    small, big = (pos, neg) if pos.size <= neg.size else (neg, pos)
    keep = rng.choice(big, size=small.size, replace=False)
    return np.sort(np.concatenate([small, keep]))


def align_labels(fs: FeatureSeries, labels: Hypnogram) -> tuple[FeatureSeries, Hypnogram]:
    """Trim features and labels to the window times they share.

    Labels from the generator or the wavelet markup start at t = 0 while the
    first feature window ends at ``window_s``; this keeps only the common
    instants so the pair can be passed to :func:`train`.
    """
    sf, sl = common_grid(fs.start_time_s, fs.stride_s, fs.n_windows,
                         labels.start_time_s, labels.stride_s, len(labels))
    fs = fs.window_slice(sf)
    return fs, Hypnogram(fs.start_time_s, fs.stride_s, labels.labels[sl])


def train(fs: FeatureSeries, labels: Hypnogram, cfg: TrainConfig = TrainConfig(),
          channel_set=(1, 2)) -> TrainResult:
    """Fit weights and bias by Adam on mean binary cross-entropy.

    ``labels`` must sit on the same time grid as ``fs`` (see
    :func:`ecogsleep.ingest.common_grid` to trim two grids to their overlap).
    Weights start uniform in [-0.5, 0.5) from ``cfg.seed``; the bias starts
    at zero.
    """
    chans = parse_channel_set(channel_set)
    if not labels.same_grid(Hypnogram(fs.start_time_s, fs.stride_s, np.zeros(fs.n_windows))):
        raise DataError("misaligned grids: labels and features must share one time grid")
    X = fs.design_matrix(chans)
    y = labels.labels.astype(np.float64)
    if y.min() == y.max():
        raise DataError("training labels contain a single class")

    rng = np.random.default_rng(cfg.seed)
    theta = np.concatenate([rng.uniform(-0.5, 0.5, size=X.shape[1]), [0.0]])
    if cfg.class_balance == "truncate-majority":
        keep = balance_classes(y, rng)
        X, y = X[keep], y[keep]
    n = y.size
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    step = 0
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            gw, gb = bce_gradient(theta[:-1], theta[-1], X[batch], y[batch])
            g = np.append(gw, gb)
            step += 1
            m1 = cfg.beta1 * m1 + (1 - cfg.beta1) * g
            m2 = cfg.beta2 * m2 + (1 - cfg.beta2) * g * g
            m1_hat = m1 / (1 - cfg.beta1 ** step)
            m2_hat = m2 / (1 - cfg.beta2 ** step)
            theta = theta - cfg.learning_rate * m1_hat / (np.sqrt(m2_hat) + cfg.epsilon)
        history.append(bce_loss(theta[:-1], theta[-1], X, y))

    model = PerceptronModel(chans, tuple(theta[:-1]), theta[-1], cfg.threshold, fs.feature_mode)
    acc = float(np.mean((forward(model, X) >= model.threshold) == (y == 1)))
    logger.info("trained on %d windows: accuracy %.4f, final loss %.5f", n, acc, history[-1])
    return TrainResult(model, acc, tuple(history), n)


def average_models(models: Sequence[PerceptronModel]) -> PerceptronModel:
    """Componentwise mean of weights and biases; threshold from the first model."""
    models = list(models)
    if not models:
        raise DataError("cannot average an empty list of models")
    first = models[0]
    if any(m.channel_set != first.channel_set for m in models):
        raise DataError("cannot average models with different channel sets")
    if any(m.feature_mode != first.feature_mode for m in models):
        raise DataError("cannot average models with different feature modes")
    # shifted mean: identical inputs come back bit-for-bit
    params = np.array([m.weights + (m.bias,) for m in models])
    ref = params[0]
    mean = ref + (params - ref).mean(axis=0)
    weights, bias = mean[:-1], float(mean[-1])
    return PerceptronModel(first.channel_set, tuple(weights), bias, first.threshold,
                           first.feature_mode, dict(first.normalization))
