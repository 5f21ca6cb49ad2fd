"""Morlet CWT band energies and double-threshold sleep/wake markup.

Used to produce training labels. The mother wavelet is the 2*pi Morlet

    psi(x) = pi**-0.25 * exp(-1/4) * exp(2j*pi*x) * exp(-x**2 / 2)

evaluated at ``f * (t - t0)``, so grid value ``f`` is a frequency in Hz.
Coefficients carry a ``sqrt(f)`` prefactor and are discretized with
``dt = 1 / sampling_rate``; the wavelet is cut where its envelope drops
below 1e-8 of the peak.

Markup splits the recording into comparison windows (0.5 s by default),
evaluates band energies at each window centre, averages them over channels
and runs a hysteresis state machine: WS -> BS when the fused onset vote
passes (energy above ``tr1``), BS -> WS when the fused offset vote passes
(energy below ``tr2``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import fftconvolve

from .errors import DataError
from .ingest import BS, WS, Hypnogram, Recording

logger = logging.getLogger(__name__)

DEFAULT_BANDS_HZ = ((2.5, 4.5), (5.0, 10.0), (10.5, 12.5), (15.0, 18.0))
DEFAULT_COMPARISON_WINDOW_S = 0.5
DEFAULT_ONSET_PCT = 75.0
DEFAULT_OFFSET_PCT = 60.0
FUSION_RULES = ("majority", "all", "any")
CHANNEL_MODES = ("average", "separate")

_MORLET_NORM = np.pi ** -0.25 * np.exp(-0.25)
_ENVELOPE_FLOOR = 1e-8
# |x| beyond which exp(-x**2/2) < _ENVELOPE_FLOOR
_SUPPORT = np.sqrt(-2.0 * np.log(_ENVELOPE_FLOOR))


def default_frequency_grid(f_min: float = 2.0, f_max: float = 20.0,
                           step: float = 0.25) -> np.ndarray:
    n = int(round((f_max - f_min) / step)) + 1
    return f_min + step * np.arange(n)


def morlet(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return _MORLET_NORM * np.exp(2j * np.pi * x - 0.5 * x * x)


@dataclass(frozen=True, eq=False)
class CwtSurface:
    frequencies_hz: np.ndarray
    times_s: np.ndarray
    coefficients: np.ndarray  # (n_freq, n_times), complex

    def __post_init__(self):
        if self.coefficients.shape != (self.frequencies_hz.size, self.times_s.size):
            raise DataError("CWT coefficient matrix does not match its grids")


@dataclass(frozen=True, eq=False)
class BandEnergySeries:
    band_hz: tuple[float, float]
    times_s: np.ndarray
    energy: np.ndarray


@dataclass(frozen=True)
class ThresholdConfig:
    tr1: float
    tr2: float
    comparison_window_s: float = DEFAULT_COMPARISON_WINDOW_S

    def __post_init__(self):
        if not (np.isfinite(self.tr1) and np.isfinite(self.tr2)):
            raise DataError("thresholds must be finite")
        if not (self.tr1 >= self.tr2 > 0):
            raise DataError(f"need tr1 >= tr2 > 0, got tr1={self.tr1}, tr2={self.tr2}")
        if not self.comparison_window_s > 0:
            raise DataError("comparison window must be positive")


def _kernel(f: float, fs: int) -> tuple[int, np.ndarray]:
    half = int(np.ceil(_SUPPORT / f * fs))
    u = np.arange(-half, half + 1) / fs
    return half, np.sqrt(f) * np.conj(morlet(f * u)) / fs


def cwt_morlet(signal, sampling_rate_hz: int, frequencies_hz=None,
               sample_indices=None) -> CwtSurface:
    """Continuous wavelet transform with the 2*pi Morlet wavelet.

    Parameters
    ----------
    signal : array_like, shape (n_samples,)
    sampling_rate_hz : int
    frequencies_hz : array_like, optional
        Positive, ascending. Defaults to 2-20 Hz in 0.25 Hz steps.
    sample_indices : array_like of int, optional
        Evaluate only at these sample positions instead of every sample.
        The signal is treated as zero outside its span.

    Returns
    -------
    CwtSurface
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DataError("cwt_morlet needs a non-empty one-dimensional signal")
    if x.size < 2:
        raise DataError("cwt_morlet needs at least two samples")
    freqs = default_frequency_grid() if frequencies_hz is None else np.asarray(frequencies_hz, float)
    if freqs.ndim != 1 or freqs.size == 0 or np.any(~(freqs > 0)):
        raise DataError("CWT frequencies must be positive")
    if np.any(np.diff(freqs) <= 0):
        raise DataError("CWT frequencies must be strictly ascending")
    fs = int(sampling_rate_hz)

    if sample_indices is None:
        idx = None
        times = np.arange(x.size) / fs
        out = np.empty((freqs.size, x.size), dtype=np.complex128)
    else:
        idx = np.asarray(sample_indices, dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= x.size):
            raise DataError("sample index outside the signal")
        times = idx / fs
        out = np.empty((freqs.size, idx.size), dtype=np.complex128)

    for i, f in enumerate(freqs):
        half, c = _kernel(f, fs)
        if idx is None:
            # correlation with the kernel == convolution with its reverse
            full = fftconvolve(x, c[::-1])
            out[i] = full[half:half + x.size]
        else:
            padded = np.pad(x, half)
            win = sliding_window_view(padded, c.size)[idx]
            out[i] = win @ c.real + 1j * (win @ c.imag)
    return CwtSurface(freqs, times, out)


def band_energy(surf: CwtSurface, band_hz: Sequence[float]) -> BandEnergySeries:
    """Trapezoidal integral of ``|W|**2`` over the grid frequencies in the band."""
    f_lo, f_hi = map(float, band_hz)
    if not f_lo < f_hi:
        raise DataError(f"band needs f_min < f_max, got {band_hz}")
    freqs = surf.frequencies_hz
    tol = 1e-9 * max(1.0, f_hi)
    if f_lo < freqs[0] - tol or f_hi > freqs[-1] + tol:
        raise DataError(
            f"band {band_hz} Hz outside frequency grid [{freqs[0]}, {freqs[-1]}] Hz"
        )
    sel = (freqs >= f_lo - tol) & (freqs <= f_hi + tol)
    if sel.sum() < 2:
        raise DataError(f"band {band_hz} Hz covers fewer than two grid frequencies")
    power = np.abs(surf.coefficients[sel]) ** 2
    energy = np.trapezoid(power, freqs[sel], axis=0)
    return BandEnergySeries((f_lo, f_hi), surf.times_s, energy)


def estimate_thresholds(energy, onset_pct: float = DEFAULT_ONSET_PCT,
                        offset_pct: float = DEFAULT_OFFSET_PCT,
                        comparison_window_s: float = DEFAULT_COMPARISON_WINDOW_S) -> ThresholdConfig:
    """Onset/offset thresholds as linear-interpolation percentiles of ``energy``."""
    values = energy.energy if isinstance(energy, BandEnergySeries) else np.asarray(energy, float)
    if values.size == 0:
        raise DataError("cannot estimate thresholds from an empty energy series")
    if not (0 < offset_pct <= onset_pct < 100):
        raise DataError(
            f"need 0 < offset_pct <= onset_pct < 100, got {offset_pct}, {onset_pct}"
        )
    tr1, tr2 = np.percentile(values, [onset_pct, offset_pct])
    return ThresholdConfig(float(tr1), float(tr2), comparison_window_s)


def _fuse(votes: np.ndarray, rule: str) -> np.ndarray:
    """Combine per-band boolean votes, shape (n_bands, n_blocks)."""
    if rule == "majority":
        return 2 * votes.sum(axis=0) > votes.shape[0]
    if rule == "all":
        return votes.all(axis=0)
    if rule == "any":
        return votes.any(axis=0)
    raise DataError(f"unknown fusion rule {rule!r}; choose from {FUSION_RULES}")


def hysteresis_states(energy: np.ndarray, thresholds: Sequence[ThresholdConfig],
                      fusion: str = "majority", initial: int = WS) -> np.ndarray:
    """Double-threshold state sequence over comparison blocks.

    Parameters
    ----------
    energy : ndarray, shape (n_bands, n_blocks)
        Block energies, one row per band (or per band/channel pair).
    thresholds : sequence of ThresholdConfig
        One per row of ``energy``.
    fusion : {'majority', 'all', 'any'}
    initial : int
        State before the first block.
    """
    energy = np.atleast_2d(np.asarray(energy, dtype=np.float64))
    if len(thresholds) != energy.shape[0]:
        raise DataError(f"{len(thresholds)} thresholds for {energy.shape[0]} energy rows")
    tr1 = np.array([t.tr1 for t in thresholds])[:, None]
    tr2 = np.array([t.tr2 for t in thresholds])[:, None]
    onset = _fuse(energy > tr1, fusion)
    offset = _fuse(energy < tr2, fusion)
    states = np.empty(energy.shape[1], dtype=np.int8)
    state = initial
    for k in range(states.size):
        if state == WS and onset[k]:
            state = BS
        elif state == BS and offset[k]:
            state = WS
        states[k] = state
    return states


def blocks_to_hypnogram(states: np.ndarray, block_s: float, stride_s: float = 1.0,
                        start_time_s: float = 0.0) -> Hypnogram:
    """Sample block states at ``start + k*stride`` for every time inside the blocks."""
    span = states.size * block_s
    n = int(np.ceil((span - start_time_s) / stride_s - 1e-9)) if span > start_time_s else 0
    times = start_time_s + np.arange(n) * stride_s
    blk = np.floor(times / block_s + 1e-9).astype(np.int64)
    blk = np.clip(blk, 0, states.size - 1)
    return Hypnogram(start_time_s, stride_s, states[blk])


def block_energies(rec: Recording, bands=DEFAULT_BANDS_HZ,
                   comparison_window_s: float = DEFAULT_COMPARISON_WINDOW_S,
                   frequencies_hz=None,
                   channel_mode: str = "average") -> tuple[np.ndarray, np.ndarray]:
    """Band energies at comparison-block centres.

    Returns
    -------
    centres_s : ndarray, shape (n_blocks,)
    energy : ndarray
        (n_bands, n_blocks) for ``channel_mode='average'``; for
        ``'separate'``, (n_channels * n_bands, n_blocks) with channel-major rows.
    """
    if channel_mode not in CHANNEL_MODES:
        raise DataError(f"unknown channel mode {channel_mode!r}; choose from {CHANNEL_MODES}")
    fs = rec.sampling_rate_hz
    n_blocks = int(np.floor(rec.duration_s / comparison_window_s + 1e-9))
    if n_blocks < 1:
        raise DataError("recording shorter than one comparison window")
    centres = (np.arange(n_blocks) + 0.5) * comparison_window_s
    idx = np.minimum(np.rint(centres * fs).astype(np.int64), rec.n_samples - 1)
    freqs = default_frequency_grid() if frequencies_hz is None else np.asarray(frequencies_hz, float)
    per_channel = []
    for ch in rec.channels:
        surf = cwt_morlet(ch, fs, freqs, sample_indices=idx)
        per_channel.append(np.vstack([band_energy(surf, b).energy for b in bands]))
    stack = np.stack(per_channel)  # (channels, bands, blocks)
    if channel_mode == "average":
        return centres, stack.mean(axis=0)
    return centres, stack.reshape(-1, n_blocks)


def markup_bs_ws(rec: Recording, bands=DEFAULT_BANDS_HZ,
                 thresholds: Sequence[ThresholdConfig] | None = None,
                 stride_s: float = 1.0, *,
                 comparison_window_s: float = DEFAULT_COMPARISON_WINDOW_S,
                 onset_pct: float = DEFAULT_ONSET_PCT,
                 offset_pct: float = DEFAULT_OFFSET_PCT,
                 fusion: str = "majority",
                 channel_mode: str = "average",
                 frequencies_hz=None,
                 start_time_s: float = 0.0,
                 return_energy: bool = False):
    """Wavelet-based BS/WS hypnogram for a recording.

    When ``thresholds`` is None they are estimated per energy row from the
    recording itself with ``onset_pct``/``offset_pct``. With
    ``return_energy=True`` the result is ``(hypnogram, centres_s, energy,
    thresholds)`` so the energies can be exported for tuning.
    """
    bands = [tuple(map(float, b)) for b in bands]
    centres, energy = block_energies(rec, bands, comparison_window_s, frequencies_hz, channel_mode)
    if thresholds is None:
        thresholds = [
            estimate_thresholds(row, onset_pct, offset_pct, comparison_window_s) for row in energy
        ]
    else:
        thresholds = list(thresholds)
        if channel_mode == "separate" and len(thresholds) == len(bands):
            thresholds = thresholds * rec.n_channels
    states = hysteresis_states(energy, thresholds, fusion)
    hyp = blocks_to_hypnogram(states, comparison_window_s, stride_s, start_time_s)
    logger.info("markup: %d blocks, BS fraction %.3f", states.size, states.mean())
    if return_energy:
        return hyp, centres, energy, thresholds
    return hyp
