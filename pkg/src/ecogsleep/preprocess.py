"""Normalization and sliding-window mean/deviation features.

The pipeline is two-stage. Each raw channel is shifted by its minimum and
divided by twice the mean of the shifted signal, which puts its mean at 0.5
and removes per-channel gain. Trailing windows of ``window_s`` seconds,
stepped by ``stride_s``, then yield a mean and a deviation per channel, and
every resulting feature sequence is normalized again the same way.

The deviation feature in the default ``"literal-eq3"`` mode is the sum of
squared deviations divided by ``N - 1`` *without* a square root, i.e. a
sample variance. ``"true-std"`` takes the square root.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError
from .ingest import Recording

logger = logging.getLogger(__name__)

LITERAL = "literal-eq3"
TRUE_STD = "true-std"
FEATURE_MODES = (LITERAL, TRUE_STD)

DEFAULT_WINDOW_S = 10.0
DEFAULT_STRIDE_S = 1.0

# windows per vectorized block; bounds peak memory at ~chunk*N doubles
_CHUNK = 256


@dataclass(frozen=True, eq=False)
class NormalizedSignal:
    samples: np.ndarray
    offset: float
    scale: float


def normalize(signal: Sequence[float] | np.ndarray) -> NormalizedSignal:
    """Shift by the minimum and divide by twice the mean of the shifted signal.

    >>> normalize([-1.0, 1.0]).samples
    array([0., 1.])
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("normalize expects a one-dimensional sequence")
    if x.size == 0:
        raise DataError("cannot normalize an empty signal")
    if x.size < 2:
        raise DataError("degenerate signal: need at least two samples")
    offset = float(x.min())
    y = x - offset
    scale = 2.0 * float(y.mean())
    if not scale > 0:
        raise DataError("degenerate signal: zero dynamic range")
    out = y / scale
    if out.max() > 1.0:
        logger.debug("normalized signal exceeds 1 (max %.3g); not clamped", out.max())
    out.setflags(write=False)
    return NormalizedSignal(out, offset, scale)


def apply_normalization(signal, offset: float, scale: float) -> np.ndarray:
    """Normalize with known constants (e.g. from an earlier recording)."""
    if not scale > 0:
        raise DataError(f"normalization scale must be positive, got {scale!r}")
    return (np.asarray(signal, dtype=np.float64) - offset) / scale


def window_samples(window_s: float, stride_s: float, sampling_rate_hz: int) -> tuple[int, int]:
    """Window and stride lengths in samples; both must be whole numbers."""
    if window_s <= 0 or stride_s <= 0:
        raise DataError("window and stride must be positive")
    n_win = window_s * sampling_rate_hz
    n_step = stride_s * sampling_rate_hz
    N, S = int(round(n_win)), int(round(n_step))
    if abs(n_win - N) > 1e-9 * max(1.0, n_win) or abs(n_step - S) > 1e-9 * max(1.0, n_step):
        raise DataError(
            f"window ({window_s} s) and stride ({stride_s} s) must be whole numbers of "
            f"samples at {sampling_rate_hz} Hz"
        )
    if N < 2:
        raise DataError("window must span at least two samples")
    if S < 1:
        raise DataError("stride must span at least one sample")
    return N, S


def window_stats(block: np.ndarray, mode: str = LITERAL) -> tuple[np.ndarray, np.ndarray]:
    """Two-pass mean and deviation for each row of ``block``.

    The streaming classifier calls this on a single buffered window, so the
    offline and online paths produce bitwise-identical features.
    """
    n = block.shape[-1]
    mu = block.mean(axis=-1)
    dev = block - mu[..., np.newaxis]
    var = (dev * dev).sum(axis=-1) / (n - 1)
    if mode == LITERAL:
        return mu, var
    if mode == TRUE_STD:
        return mu, np.sqrt(var)
    raise DataError(f"unknown feature mode {mode!r}")


@dataclass(frozen=True, eq=False)
class FeatureSeries:
    """Per-channel windowed mean (``mu``) and deviation (``sigma``).

    ``mu`` and ``sigma`` have shape (n_channels, n_windows). Window ``j``
    ends at ``start_time_s + j * stride_s`` and covers the preceding
    ``window_s`` seconds. When the second normalization stage has been
    applied, the per-sequence constants are kept in ``mu_offset`` etc.
    """

    window_s: float
    stride_s: float
    start_time_s: float
    channel_ids: tuple[int, ...]
    mu: np.ndarray
    sigma: np.ndarray
    feature_mode: str = LITERAL
    mu_offset: np.ndarray | None = field(default=None, repr=False)
    mu_scale: np.ndarray | None = field(default=None, repr=False)
    sigma_offset: np.ndarray | None = field(default=None, repr=False)
    sigma_scale: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        mu = np.atleast_2d(np.asarray(self.mu, dtype=np.float64))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        if mu.shape != sigma.shape:
            raise DataError("mu and sigma shapes differ")
        if len(self.channel_ids) != mu.shape[0]:
            raise DataError("one channel id per feature row is required")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise DataError("non-finite feature value")
        if self.feature_mode not in FEATURE_MODES:
            raise DataError(f"unknown feature mode {self.feature_mode!r}")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "channel_ids", tuple(int(c) for c in self.channel_ids))

    @property
    def n_windows(self) -> int:
        return self.mu.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.start_time_s + np.arange(self.n_windows) * self.stride_s

    @property
    def renormalized(self) -> bool:
        return self.mu_scale is not None

    def design_matrix(self, channel_set: Sequence[int]) -> np.ndarray:
        """Stack features as columns (mu_a, sigma_a, mu_b, sigma_b, ...)."""
        missing = [c for c in channel_set if c not in self.channel_ids]
        if missing:
            raise DataError(f"feature series lacks channels {missing}")
        cols = []
        for c in channel_set:
            row = self.channel_ids.index(c)
            cols += [self.mu[row], self.sigma[row]]
        return np.column_stack(cols)

    def window_slice(self, sl: slice) -> FeatureSeries:
        idx = range(self.n_windows)[sl]
        if idx.step != 1:
            raise ValueError("only contiguous slices are supported")
        return replace(
            self,
            start_time_s=self.start_time_s + idx.start * self.stride_s,
            mu=self.mu[:, sl],
            sigma=self.sigma[:, sl],
        )


def sliding_features(signal: np.ndarray, sampling_rate_hz: int,
                     window_s: float = DEFAULT_WINDOW_S, stride_s: float = DEFAULT_STRIDE_S,
                     mode: str = LITERAL,
                     channel_ids: Sequence[int] | None = None) -> FeatureSeries:
    """Trailing-window mean and deviation for every channel.

    Parameters
    ----------
    signal : ndarray, shape (n_channels, n_samples) or (n_samples,)
        Normalized samples.
    sampling_rate_hz : int
    window_s, stride_s : float
        Window length and step; both must be whole numbers of samples.
    mode : {'literal-eq3', 'true-std'}
    channel_ids : sequence of int, optional
        1-based channel numbers; default ``1..n_channels``.

    Returns
    -------
    FeatureSeries
        ``floor((T - window_s) / stride_s) + 1`` windows, the first ending at
        ``t = window_s``. Window ``j`` uses the samples strictly before its
        end time.
    """
    x = np.atleast_2d(np.asarray(signal, dtype=np.float64))
    if mode not in FEATURE_MODES:
        raise DataError(f"unknown feature mode {mode!r}")
    N, S = window_samples(window_s, stride_s, sampling_rate_hz)
    n = x.shape[1]
    if n < N:
        raise DataError(
            f"window longer than signal: {N} samples requested, {n} available"
        )
    L = (n - N) // S + 1
    mu = np.empty((x.shape[0], L))
    sigma = np.empty((x.shape[0], L))
    for c in range(x.shape[0]):
        view = sliding_window_view(x[c], N)[::S]
        for lo in range(0, L, _CHUNK):
            hi = min(lo + _CHUNK, L)
            mu[c, lo:hi], sigma[c, lo:hi] = window_stats(view[lo:hi], mode)
    ids = tuple(channel_ids) if channel_ids is not None else tuple(range(1, x.shape[0] + 1))
    return FeatureSeries(
        window_s=float(window_s),
        stride_s=float(stride_s),
        start_time_s=N / sampling_rate_hz,
        channel_ids=ids,
        mu=mu,
        sigma=sigma,
        feature_mode=mode,
    )


def renormalize_features(fs: FeatureSeries) -> FeatureSeries:
    """Apply min-shift/mean-scale normalization to every mu and sigma sequence."""
    if fs.renormalized:
        raise DataError("feature series is already renormalized")
    out = {}
    for name in ("mu", "sigma"):
        seqs = getattr(fs, name)
        offsets, scales, rows = [], [], []
        for row in seqs:
            try:
                ns = normalize(row)
            except DataError as exc:
                raise DataError(f"constant {name} feature sequence: {exc}") from None
            rows.append(ns.samples)
            offsets.append(ns.offset)
            scales.append(ns.scale)
        out[name] = np.vstack(rows)
        out[f"{name}_offset"] = np.asarray(offsets)
        out[f"{name}_scale"] = np.asarray(scales)
    return replace(fs, **out)


def apply_feature_normalization(fs: FeatureSeries, mu_offset, mu_scale,
                                sigma_offset, sigma_scale) -> FeatureSeries:
    """Second-stage normalization with externally supplied constants."""
    mo, ms = np.asarray(mu_offset, float), np.asarray(mu_scale, float)
    so, ss = np.asarray(sigma_offset, float), np.asarray(sigma_scale, float)
    if np.any(ms <= 0) or np.any(ss <= 0):
        raise DataError("feature normalization scales must be positive")
    return replace(
        fs,
        mu=(fs.mu - mo[:, None]) / ms[:, None],
        sigma=(fs.sigma - so[:, None]) / ss[:, None],
        mu_offset=mo, mu_scale=ms, sigma_offset=so, sigma_scale=ss,
    )


@dataclass(frozen=True)
class Calibration:
    """Offsets and scales of both normalization stages for one subject.

    Needed to reproduce the offline features when samples arrive one frame
    at a time, since the global minimum and mean are not known online.
    """

    sampling_rate_hz: int
    window_s: float
    stride_s: float
    feature_mode: str
    channel_ids: tuple[int, ...]
    signal_offset: tuple[float, ...]
    signal_scale: tuple[float, ...]
    mu_offset: tuple[float, ...]
    mu_scale: tuple[float, ...]
    sigma_offset: tuple[float, ...]
    sigma_scale: tuple[float, ...]

    def __post_init__(self):
        n = len(self.channel_ids)
        for name in ("signal_offset", "signal_scale", "mu_offset", "mu_scale",
                     "sigma_offset", "sigma_scale"):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != n:
                raise DataError(f"calibration field {name} needs {n} values, got {len(vals)}")
            if name.endswith("scale") and any(not v > 0 for v in vals):
                raise DataError(f"calibration field {name} must be positive")
            object.__setattr__(self, name, vals)
        object.__setattr__(self, "channel_ids", tuple(int(c) for c in self.channel_ids))
        if self.feature_mode not in FEATURE_MODES:
            raise DataError(f"unknown feature mode {self.feature_mode!r}")
        window_samples(self.window_s, self.stride_s, self.sampling_rate_hz)

    def to_dict(self) -> dict:
        return {
            "sampling_rate_hz": self.sampling_rate_hz,
            "window_s": self.window_s,
            "stride_s": self.stride_s,
            "feature_mode": self.feature_mode,
            "channel_ids": list(self.channel_ids),
            "signal": {"offset": list(self.signal_offset), "scale": list(self.signal_scale)},
            "mu": {"offset": list(self.mu_offset), "scale": list(self.mu_scale)},
            "sigma": {"offset": list(self.sigma_offset), "scale": list(self.sigma_scale)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> Calibration:
        try:
            return cls(
                sampling_rate_hz=int(d["sampling_rate_hz"]),
                window_s=float(d["window_s"]),
                stride_s=float(d["stride_s"]),
                feature_mode=d.get("feature_mode", LITERAL),
                channel_ids=tuple(d["channel_ids"]),
                signal_offset=d["signal"]["offset"],
                signal_scale=d["signal"]["scale"],
                mu_offset=d["mu"]["offset"],
                mu_scale=d["mu"]["scale"],
                sigma_offset=d["sigma"]["offset"],
                sigma_scale=d["sigma"]["scale"],
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed calibration: missing {exc}") from None

    def save(self, path: str | Path) -> None:
        # json writes floats with repr(), which round-trips exactly
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> Calibration:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise DataError(f"calibration {path} is not valid JSON: {exc}") from None


def extract_features(rec: Recording, window_s: float = DEFAULT_WINDOW_S,
                     stride_s: float = DEFAULT_STRIDE_S, mode: str = LITERAL,
                     calibration: Calibration | None = None) -> tuple[FeatureSeries, Calibration]:
    """Full two-stage feature pipeline for a recording.

    With ``calibration`` given, its constants replace the ones that would be
    computed from ``rec``; window, stride and mode then come from it too.
    """
    ids = tuple(range(1, rec.n_channels + 1))
    if calibration is not None:
        if calibration.sampling_rate_hz != rec.sampling_rate_hz:
            raise DataError("calibration sampling rate differs from recording")
        if calibration.channel_ids != ids:
            raise DataError(
                f"calibration covers channels {calibration.channel_ids}, recording has {ids}"
            )
        window_s, stride_s, mode = calibration.window_s, calibration.stride_s, calibration.feature_mode
        offsets, scales = calibration.signal_offset, calibration.signal_scale
        norm = np.vstack([
            apply_normalization(ch, o, s) for ch, o, s in zip(rec.channels, offsets, scales)
        ])
    else:
        parts = [normalize(ch) for ch in rec.channels]
        norm = np.vstack([p.samples for p in parts])
        offsets = tuple(p.offset for p in parts)
        scales = tuple(p.scale for p in parts)
    raw = sliding_features(norm, rec.sampling_rate_hz, window_s, stride_s, mode, ids)
    if calibration is not None:
        fs = apply_feature_normalization(
            raw, calibration.mu_offset, calibration.mu_scale,
            calibration.sigma_offset, calibration.sigma_scale,
        )
        return fs, calibration
    fs = renormalize_features(raw)
    calib = Calibration(
        sampling_rate_hz=rec.sampling_rate_hz,
        window_s=float(window_s),
        stride_s=float(stride_s),
        feature_mode=mode,
        channel_ids=ids,
        signal_offset=offsets,
        signal_scale=scales,
        mu_offset=fs.mu_offset,
        mu_scale=fs.mu_scale,
        sigma_offset=fs.sigma_offset,
        sigma_scale=fs.sigma_scale,
    )
    return fs, calib


# ---------------------------------------------------------------------------
# feature CSV
# ---------------------------------------------------------------------------

def save_features(fs: FeatureSeries, path: str | Path,
                  calibration: Calibration | None = None) -> None:
    """Write ``time_s,mu_1,sigma_1,...`` at 17 significant digits.

    Window length, mode and (if given) the calibration go to a
    ``<stem>.meta.json`` sidecar so the series can be reloaded exactly.
    """
    path = Path(path)
    header = ["time_s"]
    for c in fs.channel_ids:
        header += [f"mu_{c}", f"sigma_{c}"]
    table = np.column_stack([fs.times] + [col for pair in zip(fs.mu, fs.sigma) for col in pair])
    np.savetxt(path, table, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    meta = {
        "window_s": fs.window_s,
        "stride_s": fs.stride_s,
        "start_time_s": fs.start_time_s,
        "feature_mode": fs.feature_mode,
        "renormalized": fs.renormalized,
    }
    if fs.renormalized:
        meta["feature_normalization"] = {
            "mu": {"offset": list(map(float, fs.mu_offset)), "scale": list(map(float, fs.mu_scale))},
            "sigma": {"offset": list(map(float, fs.sigma_offset)),
                      "scale": list(map(float, fs.sigma_scale))},
        }
    if calibration is not None:
        meta["calibration"] = calibration.to_dict()
    path.with_name(path.stem + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_features(path: str | Path) -> FeatureSeries:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header[0] != "time_s" or len(header) < 3 or len(header) % 2 == 0:
        raise DataError(f"malformed feature header in {path}")
    ids = []
    for k in range(1, len(header), 2):
        mu_name, sig_name = header[k], header[k + 1]
        if not (mu_name.startswith("mu_") and sig_name == "sigma_" + mu_name[3:]):
            raise DataError(f"malformed feature header in {path}: {mu_name},{sig_name}")
        ids.append(int(mu_name[3:]))
    try:
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise DataError(f"unparseable feature file {path}: {exc}") from None
    if table.shape[0] == 0:
        raise DataError(f"no feature rows in {path}")
    meta_path = path.with_name(path.stem + ".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    t = table[:, 0]
    stride = meta.get("stride_s") or (float(t[1] - t[0]) if t.size > 1 else DEFAULT_STRIDE_S)
    norm = meta.get("feature_normalization")
    extra = {}
    if norm:
        extra = dict(
            mu_offset=np.asarray(norm["mu"]["offset"]), mu_scale=np.asarray(norm["mu"]["scale"]),
            sigma_offset=np.asarray(norm["sigma"]["offset"]),
            sigma_scale=np.asarray(norm["sigma"]["scale"]),
        )
    elif not meta:
        logger.info("no sidecar for %s; assuming renormalized %s features", path, LITERAL)
        ones = np.ones(len(ids))
        extra = dict(mu_offset=0 * ones, mu_scale=ones, sigma_offset=0 * ones, sigma_scale=ones)
    fs = FeatureSeries(
        window_s=float(meta.get("window_s", DEFAULT_WINDOW_S)),
        stride_s=float(stride),
        start_time_s=float(meta.get("start_time_s", t[0])),
        channel_ids=tuple(ids),
        mu=table[:, 1::2].T,
        sigma=table[:, 2::2].T,
        feature_mode=meta.get("feature_mode", LITERAL),
        **extra,
    )
    if fs.n_windows > 1 and np.max(np.abs(fs.times - t)) > 1e-6:
        raise DataError(f"non-uniform time column in {path}")
    return fs


def load_feature_calibration(path: str | Path) -> Calibration | None:
    """Calibration stored next to a feature CSV, if any."""
    path = Path(path)
    meta_path = path.with_name(path.stem + ".meta.json")
    if not meta_path.exists():
        return None
    meta = json.loads(meta_path.read_text())
    return Calibration.from_dict(meta["calibration"]) if "calibration" in meta else None
