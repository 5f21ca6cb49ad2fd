"""Recording and hypnogram containers plus their file formats.

Recordings come in two flavours:

* CSV: header ``t,<label1>,<label2>[,<label3>]`` and one row per sample.
  The time column is informative; the sampling rate is supplied by the
  caller and checked against it.
* raw-f32: ``<name>.f32`` holding little-endian float32 samples in
  channel-interleaved frame order, plus a ``<name>.meta.json`` sidecar with
  ``channels``, ``sampling_rate_hz``, ``labels`` and ``subject_id``.

Hypnograms are CSV files with header ``time_s,label``; label 0 is waking
state (WS) and 1 is behavioral sleep (BS).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

WS = 0
BS = 1

DEFAULT_SAMPLING_RATE_HZ = 400
DEFAULT_CHANNEL_LABELS = ("ECoG1", "ECoG2", "ECoG3")

# relative agreement required between the CSV time column and the declared rate
_RATE_RTOL = 1e-6
_STRIDE_ATOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Recording:
    """Multichannel sampled ECoG signal.

    Parameters
    ----------
    channels : array_like, shape (n_channels, n_samples)
        Samples in millivolts, stored as float64.
    sampling_rate_hz : int
        Samples per second per channel.
    channel_labels : sequence of str, optional
        Defaults to ``ECoG1``, ``ECoG2``, ... .
    subject_id : str, optional
    """

    channels: np.ndarray
    sampling_rate_hz: int = DEFAULT_SAMPLING_RATE_HZ
    channel_labels: tuple[str, ...] = ()
    subject_id: str | None = None

    def __post_init__(self):
        data = np.array(self.channels, dtype=np.float64)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        if data.ndim != 2 or data.shape[0] < 1:
            raise DataError("recording must be a 2-D (channels x samples) array")
        if data.shape[1] < 1:
            raise DataError("recording channels must contain at least one sample")
        if not np.all(np.isfinite(data)):
            raise DataError("non-finite sample in recording")
        rate = self.sampling_rate_hz
        if int(rate) != rate or rate <= 0:
            raise DataError(f"sampling rate must be a positive integer, got {rate!r}")
        labels = tuple(self.channel_labels) or tuple(f"ECoG{i + 1}" for i in range(data.shape[0]))
        if len(labels) != data.shape[0]:
            raise DataError(
                f"{len(labels)} channel labels given for {data.shape[0]} channels"
            )
        object.__setattr__(self, "channels", _frozen(data))
        object.__setattr__(self, "sampling_rate_hz", int(rate))
        object.__setattr__(self, "channel_labels", labels)

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sampling_rate_hz

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.sampling_rate_hz == other.sampling_rate_hz
            and self.channel_labels == other.channel_labels
            and self.subject_id == other.subject_id
            and np.array_equal(self.channels, other.channels)
        )


@dataclass(frozen=True, eq=False)
class Hypnogram:
    """Binary sleep/wake labels on a uniform time grid.

    ``labels[k]`` is the state at ``start_time_s + k * stride_s``.
    """

    start_time_s: float
    stride_s: float
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))

    def __post_init__(self):
        if not np.isfinite(self.start_time_s):
            raise DataError("hypnogram start time must be finite")
        if not (np.isfinite(self.stride_s) and self.stride_s > 0):
            raise DataError(f"hypnogram stride must be positive, got {self.stride_s!r}")
        raw = np.asarray(self.labels)
        if raw.ndim != 1:
            raise DataError("hypnogram labels must be one-dimensional")
        if raw.size and not np.all((raw == 0) | (raw == 1)):
            raise DataError("hypnogram labels must be 0 (WS) or 1 (BS)")
        object.__setattr__(self, "labels", _frozen(raw.astype(np.int8)))
        object.__setattr__(self, "start_time_s", float(self.start_time_s))
        object.__setattr__(self, "stride_s", float(self.stride_s))

    def __len__(self):
        return self.labels.size

    @property
    def times(self) -> np.ndarray:
        return self.start_time_s + np.arange(self.labels.size) * self.stride_s

    def __eq__(self, other):
        if not isinstance(other, Hypnogram):
            return NotImplemented
        return (
            self.start_time_s == other.start_time_s
            and self.stride_s == other.stride_s
            and np.array_equal(self.labels, other.labels)
        )

    def same_grid(self, other: Hypnogram) -> bool:
        return (
            len(self) == len(other)
            and abs(self.start_time_s - other.start_time_s) <= _STRIDE_ATOL
            and abs(self.stride_s - other.stride_s) <= _STRIDE_ATOL
        )

    def grid_indices(self, times: Sequence[float] | np.ndarray) -> np.ndarray:
        """Map times onto label indices; every time must sit on the grid."""
        times = np.asarray(times, dtype=np.float64)
        pos = (times - self.start_time_s) / self.stride_s
        idx = np.rint(pos).astype(np.int64)
        off_grid = np.abs(pos - idx) * self.stride_s > 1e-6
        outside = (idx < 0) | (idx >= len(self))
        if np.any(off_grid) or np.any(outside):
            raise DataError("misaligned grids: requested times are not on the hypnogram grid")
        return idx

    def at_times(self, times) -> np.ndarray:
        return self.labels[self.grid_indices(times)]

    @property
    def bs_fraction(self) -> float:
        return float(self.labels.mean()) if len(self) else float("nan")


def common_grid(a_start: float, a_stride: float, a_len: int,
                b_start: float, b_stride: float, b_len: int) -> tuple[slice, slice]:
    """Index ranges of two uniform grids that cover their shared time points.

    Raises
    ------
    DataError
        If strides differ, offsets are not a whole number of strides apart,
        or the grids do not overlap.
    """
    if abs(a_stride - b_stride) > _STRIDE_ATOL:
        raise DataError(f"misaligned grids: strides {a_stride} and {b_stride} differ")
    shift = (b_start - a_start) / a_stride
    k = int(round(shift))
    if abs(shift - k) * a_stride > 1e-6:
        raise DataError("misaligned grids: start times are not a whole stride apart")
    # time t = a_start + i*stride = b_start + (i - k)*stride
    lo = max(0, k)
    hi = min(a_len, b_len + k)
    if hi <= lo:
        raise DataError("misaligned grids: no overlapping time points")
    return slice(lo, hi), slice(lo - k, hi - k)


def align_hypnograms(a: Hypnogram, b: Hypnogram) -> tuple[Hypnogram, Hypnogram]:
    """Restrict two hypnograms to the time points they share."""
    sa, sb = common_grid(a.start_time_s, a.stride_s, len(a), b.start_time_s, b.stride_s, len(b))
    start = a.start_time_s + sa.start * a.stride_s
    return (
        Hypnogram(start, a.stride_s, a.labels[sa]),
        Hypnogram(start, a.stride_s, b.labels[sb]),
    )


# ---------------------------------------------------------------------------
# recordings
# ---------------------------------------------------------------------------

def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def _guess_format(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix in (".f32", ".raw"):
        return "raw-f32"
    raise DataError(f"cannot infer recording format from extension {suffix!r}; pass format=")


def load_recording(path: str | Path, format: str | None = None,
                   sampling_rate_hz: int | None = None,
                   subject_id: str | None = None) -> Recording:
    """Load a recording from CSV or raw-f32.

    Parameters
    ----------
    path : path-like
        Recording file. For raw-f32 the sidecar ``<stem>.meta.json`` must
        sit next to it.
    format : {'csv', 'raw-f32'}, optional
        Inferred from the extension when omitted.
    sampling_rate_hz : int, optional
        CSV only; defaults to 400 Hz. The time column must agree with it to
        one part in 10^6.

    Raises
    ------
    DataError
        On malformed header, ragged rows, non-finite samples, a missing
        sidecar or an inconsistent time column.
    FileNotFoundError
        If ``path`` does not exist.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"recording not found: {path}")
    fmt = format or _guess_format(path)
    if fmt == "csv":
        return _load_csv_recording(path, sampling_rate_hz or DEFAULT_SAMPLING_RATE_HZ, subject_id)
    if fmt == "raw-f32":
        return _load_f32_recording(path, subject_id)
    raise DataError(f"unknown recording format {fmt!r}")


def _load_csv_recording(path: Path, rate: int, subject_id: str | None) -> Recording:
    with open(path, "r", newline="") as fh:
        header = fh.readline().strip().split(",")
    if len(header) < 2 or header[0].strip() != "t" or any(not h.strip() for h in header):
        raise DataError(f"malformed header in {path}: expected 't,<label1>,...'")
    try:
        table = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        msg = str(exc)
        if "number of columns" in msg or "columns" in msg:
            raise DataError(f"ragged channel lengths in {path}: {msg}") from None
        raise DataError(f"unparseable sample in {path}: {msg}") from None
    if table.size == 0:
        raise DataError(f"no samples in {path}")
    if table.shape[1] != len(header):
        raise DataError(
            f"ragged channel lengths in {path}: header has {len(header)} columns, rows have {table.shape[1]}"
        )
    if not np.all(np.isfinite(table)):
        raise DataError(f"non-finite sample in {path}")
    t = table[:, 0]
    if t.size > 1:
        span = t[-1] - t[0]
        expected = (t.size - 1) / rate
        if abs(span - expected) > _RATE_RTOL * expected:
            raise DataError(
                f"time column spans {span} s but {t.size} samples at {rate} Hz span {expected} s"
            )
    return Recording(
        channels=np.ascontiguousarray(table[:, 1:].T),
        sampling_rate_hz=rate,
        channel_labels=tuple(h.strip() for h in header[1:]),
        subject_id=subject_id,
    )


def _load_f32_recording(path: Path, subject_id: str | None) -> Recording:
    meta_path = sidecar_path(path)
    if not meta_path.exists():
        raise DataError(f"missing sidecar {meta_path} for raw-f32 recording")
    try:
        meta = json.loads(meta_path.read_text())
        n_ch = int(meta["channels"])
        rate = int(meta["sampling_rate_hz"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed sidecar {meta_path}: {exc}") from None
    if n_ch < 1:
        raise DataError(f"sidecar declares {n_ch} channels")
    labels = tuple(meta.get("labels") or ())
    flat = np.fromfile(path, dtype="<f4")
    if flat.size == 0:
        raise DataError(f"no samples in {path}")
    if flat.size % n_ch:
        raise DataError(
            f"ragged channel lengths: {flat.size} values do not split into {n_ch} channels"
        )
    if not np.all(np.isfinite(flat)):
        raise DataError(f"non-finite sample in {path}")
    frames = flat.astype(np.float64).reshape(-1, n_ch)
    return Recording(
        channels=np.ascontiguousarray(frames.T),
        sampling_rate_hz=rate,
        channel_labels=labels,
        subject_id=subject_id if subject_id is not None else meta.get("subject_id") or None,
    )


def save_recording(rec: Recording, path: str | Path, format: str | None = None) -> None:
    """Write a recording as CSV or raw-f32 (with sidecar).

    raw-f32 stores float32, so values are rounded on the way out.
    """
    path = Path(path)
    fmt = format or _guess_format(path)
    if fmt == "csv":
        t = np.arange(rec.n_samples) / rec.sampling_rate_hz
        table = np.column_stack([t, rec.channels.T])
        header = ",".join(("t",) + rec.channel_labels)
        np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")
    elif fmt == "raw-f32":
        rec.channels.T.astype("<f4").tofile(path)
        meta = {
            "channels": rec.n_channels,
            "sampling_rate_hz": rec.sampling_rate_hz,
            "labels": list(rec.channel_labels),
            "subject_id": rec.subject_id or "",
        }
        sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")
    else:
        raise DataError(f"unknown recording format {fmt!r}")


# ---------------------------------------------------------------------------
# hypnograms
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(x, ".17g")


def save_hypnogram(h: Hypnogram, path: str | Path) -> None:
    lines = ["time_s,label"]
    lines += [f"{_fmt(t)},{int(v)}" for t, v in zip(h.times, h.labels)]
    Path(path).write_text("\n".join(lines) + "\n")


def _recover_stride(times: np.ndarray) -> float:
    """Pick the stride that regenerates ``times`` exactly, when one exists."""
    t0 = times[0]
    diff = times[1] - t0
    candidates = [
        float(format(diff, ".12g")),
        float(format((times[-1] - t0) / (times.size - 1), ".12g")),
        diff,
        (times[-1] - t0) / (times.size - 1),
    ]
    k = np.arange(times.size)
    for s in candidates:
        if s > 0 and np.array_equal(t0 + k * s, times):
            return s
    return candidates[-1]


def load_hypnogram(path: str | Path) -> Hypnogram:
    """Read a ``time_s,label`` CSV.

    A single-row file carries no stride information; stride 1 s is assumed.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "time_s,label":
        raise DataError(f"malformed hypnogram header in {path}: expected 'time_s,label'")
    times, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected two columns")
        try:
            t = float(parts[0])
            raw = parts[1].strip()
            lab = int(raw)
        except ValueError:
            raise DataError(f"{path}:{lineno}: unparseable row {line!r}") from None
        if lab not in (0, 1) or raw not in ("0", "1"):
            raise DataError(f"{path}:{lineno}: label {raw!r} outside {{0, 1}}")
        if not np.isfinite(t):
            raise DataError(f"{path}:{lineno}: non-finite time")
        times.append(t)
        labels.append(lab)
    if not times:
        return Hypnogram(0.0, 1.0, np.zeros(0, dtype=np.int8))
    t = np.asarray(times)
    if t.size == 1:
        return Hypnogram(t[0], 1.0, np.asarray(labels, dtype=np.int8))
    steps = np.diff(t)
    if steps[0] <= 0 or np.any(np.abs(steps - steps[0]) > _STRIDE_ATOL):
        raise DataError(f"non-uniform stride in {path}")
    return Hypnogram(t[0], _recover_stride(t), np.asarray(labels, dtype=np.int8))
