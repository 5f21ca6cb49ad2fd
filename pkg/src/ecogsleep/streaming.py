"""Frame-by-frame classification with fixed-capacity ring buffers.

Normalization needs global statistics, so a stream must be given the
offsets and scales of both normalization stages up front, e.g. from an
earlier recording of the same animal. With the constants of a recording,
replaying that recording reproduces the offline labels exactly.
"""

from __future__ import annotations

from typing import Iterator, NamedTuple

import numpy as np

from .errors import DataError
from .ingest import Hypnogram, Recording
from .model import PerceptronModel, logits, sigmoid
from .preprocess import Calibration, window_samples, window_stats


class StreamOutput(NamedTuple):
    time_s: float
    probability: float
    label: int


class StreamingClassifier:
    """Push one frame (one sample per channel) at a time.

    Parameters
    ----------
    model : PerceptronModel
    calibration : Calibration, optional
        Can also be supplied later via :meth:`calibrate`; pushing before
        that raises ``RuntimeError``.

    Notes
    -----
    Each buffer row holds two copies of the last ``N`` samples, so the
    current window is always one contiguous slice and the statistics run on
    the same memory layout as the offline path.
    """

    def __init__(self, model: PerceptronModel, calibration: Calibration | None = None):
        self.model = model
        self._calib = None
        if calibration is not None:
            self.calibrate(calibration)

    @property
    def calibration(self) -> Calibration | None:
        return self._calib

    def calibrate(self, calibration: Calibration) -> None:
        m = self.model
        if calibration.feature_mode != m.feature_mode:
            raise DataError(
                f"model expects {m.feature_mode!r} features, calibration is for "
                f"{calibration.feature_mode!r}"
            )
        missing = [c for c in m.channel_set if c not in calibration.channel_ids]
        if missing:
            raise DataError(f"calibration lacks channels {missing}")
        rows = [calibration.channel_ids.index(c) for c in m.channel_set]
        pick = lambda vals: np.array([vals[r] for r in rows], dtype=np.float64)  # noqa: E731

        self._calib = calibration
        self._n_in = len(calibration.channel_ids)
        self._rows = np.array(rows)
        self._off, self._scale = pick(calibration.signal_offset), pick(calibration.signal_scale)
        self._mu_off, self._mu_scale = pick(calibration.mu_offset), pick(calibration.mu_scale)
        self._sig_off, self._sig_scale = pick(calibration.sigma_offset), pick(calibration.sigma_scale)
        self._N, self._S = window_samples(
            calibration.window_s, calibration.stride_s, calibration.sampling_rate_hz
        )
        self._start = self._N / calibration.sampling_rate_hz
        self._stride = float(calibration.stride_s)
        self._w = np.asarray(m.weights)
        self.reset()

    def reset(self) -> None:
        """Drop buffered samples; calibration is kept."""
        if self._calib is None:
            return
        self._buf = np.zeros((len(self._rows), 2 * self._N))
        self._pos = 0
        self._count = 0
        self._next_emit = self._N

    @property
    def frames_seen(self) -> int:
        return self._count if self._calib is not None else 0

    def push(self, frame) -> StreamOutput | None:
        if self._calib is None:
            raise RuntimeError("streaming classifier has no calibration; call calibrate() first")
        x = np.asarray(frame, dtype=np.float64)
        if x.shape != (self._n_in,):
            raise DataError(f"frame must hold {self._n_in} samples, got shape {x.shape}")
        v = (x[self._rows] - self._off) / self._scale
        p, N = self._pos, self._N
        self._buf[:, p] = v
        self._buf[:, p + N] = v
        self._pos = p + 1 if p + 1 < N else 0
        self._count += 1
        if self._count < self._next_emit:
            return None
        self._next_emit += self._S
        return self._emit()

    def _emit(self) -> StreamOutput:
        window = self._buf[:, self._pos:self._pos + self._N]
        mu, sigma = window_stats(window, self._calib.feature_mode)
        mu = (mu - self._mu_off) / self._mu_scale
        sigma = (sigma - self._sig_off) / self._sig_scale
        row = np.empty((1, 2 * mu.size))
        row[0, 0::2] = mu
        row[0, 1::2] = sigma
        prob = float(sigmoid(logits(row, self._w, self.model.bias))[0])
        j = (self._count - self._N) // self._S
        t = float(self._start + np.float64(j) * self._stride)
        return StreamOutput(t, prob, int(prob >= self.model.threshold))


def stream_push(sc: StreamingClassifier, frame) -> StreamOutput | None:
    return sc.push(frame)


def replay(sc: StreamingClassifier, rec: Recording) -> Iterator[StreamOutput]:
    """Feed a recording through ``sc`` frame by frame, yielding emissions."""
    for frame in rec.channels.T:
        out = sc.push(frame)
        if out is not None:
            yield out


def outputs_to_hypnogram(outputs: list[StreamOutput], stride_s: float) -> Hypnogram:
    if not outputs:
        return Hypnogram(0.0, stride_s, np.zeros(0, dtype=np.int8))
    return Hypnogram(outputs[0].time_s, stride_s, np.array([o.label for o in outputs]))
