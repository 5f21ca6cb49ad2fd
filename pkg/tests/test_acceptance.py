"""Acceptance criteria, one test each.

Every test records a single ``[ACCEPT n] PASS|FAIL`` line with the measured
quantities; the lines are echoed in the pytest terminal summary (see
``conftest.py``) and when this file is run directly::

    python3 tests/test_acceptance.py
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from ecogsleep.ingest import Hypnogram, Recording, align_hypnograms
from ecogsleep.metrics import ConfusionMatrix, accuracy, confusion, dor
from ecogsleep.model import (
    TrainConfig,
    align_labels,
    bce_gradient,
    bce_loss,
    classify,
    forward,
    pretrained,
    train,
)
from ecogsleep.preprocess import FeatureSeries, extract_features, normalize
from ecogsleep.streaming import StreamingClassifier, replay
from ecogsleep.synth import generate, subject
from ecogsleep.wavelet import (
    DEFAULT_BANDS_HZ,
    ThresholdConfig,
    band_energy,
    blocks_to_hypnogram,
    cwt_morlet,
    default_frequency_grid,
    hysteresis_states,
    markup_bs_ws,
)

pytestmark = pytest.mark.acceptance

RESULTS: list[str] = []


def verdict(n: int, ok: bool, title: str, detail: str) -> None:
    line = f"[ACCEPT {n:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# 1 -------------------------------------------------------------------------

def test_01_pretrained_fidelity():
    reference = {
        (1, 2): (-3.02, (-0.51, 3.22, -1.56, 4.76)),
        (1, 3): (-2.13, (-0.06, 6.52, -1.05, -1.23)),
        (2, 3): (-2.59, (-0.97, 8.78, -1.36, -1.73)),
        (1, 2, 3): (-2.67, (-0.10, 3.59, -0.84, 6.29, -1.24, -2.78)),
    }
    exact = all(
        pretrained(cs).bias == b and pretrained(cs).weights == w for cs, (b, w) in reference.items()
    )
    p = forward(pretrained((1, 2)), [0.5, 0.5, 0.5, 0.5])
    ok = exact and abs(p - 0.48376) <= 1e-5
    verdict(1, ok, "pretrained coefficients", f"rows bit-exact={exact}, f(0.5,0.5,0.5,0.5)={p:.6f}")


# 2 -------------------------------------------------------------------------

def _transfer_once(rep: int) -> tuple[float, float]:
    a = subject(1200, seed=2 * rep + 1, gains=(0.5, 0.5, 0.5), noise_floor=1.0)
    b = subject(1200, seed=2 * rep + 2, gains=(2.0, 2.0, 2.0), noise_floor=2.0)
    rec_a, hyp_a = generate(a)
    rec_b, hyp_b = generate(b)
    fs_a, _ = extract_features(rec_a)
    fs_a, y_a = align_labels(fs_a, hyp_a)
    model = train(fs_a, y_a, TrainConfig(seed=rep), (1, 2)).model
    fs_b, _ = extract_features(rec_b)
    pred, truth = align_hypnograms(classify(model, fs_b), hyp_b)
    cm = confusion(pred, truth)
    return accuracy(cm), dor(cm)


def test_02_cross_subject_transfer():
    t0 = time.perf_counter()
    runs = [_transfer_once(rep) for rep in range(10)]
    elapsed = time.perf_counter() - t0
    good = sum(acc >= 0.80 and d >= 10 for acc, d in runs)
    accs = [acc for acc, _ in runs]
    dors = [d for _, d in runs]
    ok = good >= 9 and elapsed <= 60
    verdict(2, ok, "cross-subject transfer",
            f"{good}/10 reps with acc>=0.80 and DOR>=10 "
            f"(acc {min(accs):.3f}-{max(accs):.3f}, DOR {min(dors):.1f}-{max(dors):.1f}), "
            f"{elapsed:.1f} s")


# 3 -------------------------------------------------------------------------

def test_03_feature_series_shape():
    rng = np.random.default_rng(3)
    rec = Recording(rng.normal(0, 50, (3, 3600 * 400)), 400)
    t0 = time.perf_counter()
    fs, _ = extract_features(rec, 10.0, 1.0)
    elapsed = time.perf_counter() - t0
    L = fs.mu.shape[1]
    ok = L in (3590, 3591) and fs.sigma.shape == (3, L) and elapsed <= 2.0
    verdict(3, ok, "feature-series shape", f"L={L} per channel, extraction {elapsed:.3f} s")


# 4 -------------------------------------------------------------------------

def test_04_normalization_invariants():
    rng = np.random.default_rng(4)
    worst_mean, worst_affine = 0.0, 0.0
    for _ in range(1000):
        n = int(rng.integers(50, 5000))
        kind = rng.integers(3)
        if kind == 0:
            x = rng.normal(rng.uniform(-100, 100), rng.uniform(0.1, 100), n)
        elif kind == 1:
            x = rng.uniform(-1, 1, n) * 10 ** rng.uniform(-2, 3)
        else:
            x = np.cumsum(rng.normal(size=n))
        y = normalize(x).samples
        worst_mean = max(worst_mean, abs(np.mean(y) - 0.5))
        a = 10 ** rng.uniform(-1, 1)
        c = rng.uniform(-10, 10)
        worst_affine = max(worst_affine, np.max(np.abs(normalize(a * x + c).samples - y)))
    ok = worst_mean <= 1e-9 and worst_affine <= 1e-12
    verdict(4, ok, "normalization invariants",
            f"max |mean-0.5|={worst_mean:.2e}, max affine deviation={worst_affine:.2e}")


# 5 -------------------------------------------------------------------------

def test_05_gradient_correctness():
    rng = np.random.default_rng(5)
    h = 1e-5
    worst = 0.0
    for _ in range(100):
        k = 2 * int(rng.integers(2, 4))
        X = rng.random((32, k))
        y = rng.integers(0, 2, 32).astype(float)
        w, b = rng.normal(0, 2, k), float(rng.normal())
        gw, gb = bce_gradient(w, b, X, y)
        analytic = np.append(gw, gb)
        numeric = np.empty(k + 1)
        for i in range(k + 1):
            e = np.zeros(k + 1)
            e[i] = h
            lp = bce_loss(w + e[:k], b + e[k], X, y)
            lm = bce_loss(w - e[:k], b - e[k], X, y)
            numeric[i] = (lp - lm) / (2 * h)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
        worst = max(worst, float(rel.max()))
    verdict(5, worst <= 1e-6, "gradient correctness", f"max relative error {worst:.2e} over 100 points")


# 6 -------------------------------------------------------------------------

def test_06_convex_training():
    rng = np.random.default_rng(6)
    n = 500
    X = np.empty((2 * n, 4))
    X[0::2] = rng.normal(0.3, 0.05, (n, 4))
    X[1::2] = rng.normal(0.7, 0.05, (n, 4))
    y = np.tile([0, 1], n)
    ones = np.ones(2)
    fs = FeatureSeries(10.0, 1.0, 10.0, (1, 2), X[:, 0::2].T, X[:, 1::2].T,
                       mu_offset=0 * ones, mu_scale=ones, sigma_offset=0 * ones, sigma_scale=ones)
    labels = Hypnogram(10.0, 1.0, y)
    cfg = TrainConfig(learning_rate=1e-2, epochs=500, batch_size=2 * n, seed=6)
    res = train(fs, labels, cfg, (1, 2))
    steps = np.diff(res.loss_history)
    monotone = bool(np.all(steps <= 0))
    ok = res.accuracy >= 0.99 and monotone
    verdict(6, ok, "convex-training convergence",
            f"accuracy {res.accuracy:.4f} after {len(res.loss_history)} full-batch epochs, "
            f"loss {res.loss_history[0]:.4f}->{res.loss_history[-1]:.4f}, "
            f"non-increasing={monotone}")


# 7 -------------------------------------------------------------------------

def test_07_wavelet_localization():
    fs = 400
    t = np.arange(10 * fs) / fs
    freqs = default_frequency_grid()
    interior = (t >= 2.0) & (t <= 8.0)
    bands = [tuple(b) for b in DEFAULT_BANDS_HZ]
    home = {3.0: 0, 7.0: 1, 11.0: 2, 16.0: 3}
    t0 = time.perf_counter()
    peak_ok, ratio_ok, notes = True, True, []
    for f0, k in home.items():
        surf = cwt_morlet(np.sin(2 * np.pi * f0 * t), fs, freqs)
        peaks = freqs[np.argmax(np.abs(surf.coefficients[:, interior]), axis=0)]
        peak_err = float(np.max(np.abs(peaks - f0)))
        energy = np.array([band_energy(surf, b).energy[interior] for b in bands])
        others = np.delete(energy, k, axis=0)
        ratio = float(np.min(energy[k] / others.max(axis=0)))
        peak_ok &= peak_err <= 0.25 + 1e-9
        ratio_ok &= ratio >= 10
        notes.append(f"{f0:g}Hz peak err {peak_err:.2f}, home/other {ratio:.1f}x")
    elapsed = time.perf_counter() - t0
    ok = peak_ok and ratio_ok and elapsed <= 10
    verdict(7, ok, "wavelet localization", "; ".join(notes) + f"; {elapsed:.2f} s")


# 8 -------------------------------------------------------------------------

def _brute_force(energy, tr1, tr2):
    n_rows, n = energy.shape
    onset = [2 * sum(energy[r, k] > tr1[r] for r in range(n_rows)) > n_rows for k in range(n)]
    offset = [2 * sum(energy[r, k] < tr2[r] for r in range(n_rows)) > n_rows for k in range(n)]
    out = []
    for k in range(n):
        state = 0
        for s in range(k, -1, -1):
            if onset[s]:
                state = 1
                break
            if offset[s]:
                break
        out.append(state)
    return np.array(out)


def test_08_markup_latency():
    block = 0.5
    centres = (np.arange(400) + 0.5) * block
    step = np.where((centres >= 50) & (centres < 120), 10.0, 0.1)[None, :]
    states = hysteresis_states(step, [ThresholdConfig(1.0, 0.5)])
    h = blocks_to_hypnogram(states, block, stride_s=0.1)
    edges = h.times[np.flatnonzero(np.diff(h.labels)) + 1]
    trace_err = max(abs(edges[0] - 50), abs(edges[1] - 120)) if edges.size == 2 else math.inf

    # the same step carried by signal amplitude, through the full CWT markup
    rng = np.random.default_rng(8)
    t = np.arange(160 * 400) / 400
    x = np.where((t >= 50) & (t < 120), 10.0, 1.0) * rng.standard_normal((3, t.size))
    rec = Recording(x, 400)
    _, c, e, _ = markup_bs_ws(rec, return_energy=True)
    lo, hi = e[:, c < 45].mean(axis=1), e[:, (c > 55) & (c < 115)].mean(axis=1)
    th = [ThresholdConfig(math.sqrt(a * b), math.sqrt(a * b) / 2) for a, b in zip(lo, hi)]
    hr = markup_bs_ws(rec, thresholds=th, stride_s=0.1)
    redges = hr.times[np.flatnonzero(np.diff(hr.labels)) + 1]
    rec_err = max(abs(redges[0] - 50), abs(redges[1] - 120)) if redges.size == 2 else math.inf

    mismatches = violations = 0
    for _ in range(100):
        drift = np.cumsum(rng.normal(0, 0.3, 150))
        energy = np.exp(drift[None, :] + rng.normal(0, 0.5, (4, 150)))
        tr2 = rng.uniform(0.3, 1.0, 4)
        tr1 = tr2 * rng.uniform(1.0, 3.0, 4)
        cfg = lambda a, b: [ThresholdConfig(p, q) for p, q in zip(a, b)]  # noqa: E731
        base = hysteresis_states(energy, cfg(tr1, tr2))
        mismatches += int(not np.array_equal(base, _brute_force(energy, tr1, tr2)))
        raised = hysteresis_states(energy, cfg(tr1 * rng.uniform(1, 2, 4), tr2)).sum()
        lowered = hysteresis_states(energy, cfg(tr1, tr2 * rng.uniform(0.3, 1, 4))).sum()
        violations += int(not raised <= base.sum() <= lowered)
    ok = trace_err <= block and rec_err <= block and mismatches == 0 and violations == 0
    verdict(8, ok, "markup latency",
            f"step-trace edge error {trace_err:.2f} s, recording edge error {rec_err:.2f} s, "
            f"oracle mismatches {mismatches}/100, monotonicity violations {violations}/100")


# 9 -------------------------------------------------------------------------

def test_09_streaming_equivalence():
    rec, _ = generate(subject(600, seed=9))
    fs, calib = extract_features(rec)
    identical = True
    per_frame = []
    for cs in ((1, 2), (1, 3), (2, 3), (1, 2, 3)):
        m = pretrained(cs)
        sc = StreamingClassifier(m, calib)
        t0 = time.perf_counter()
        outs = list(replay(sc, rec))
        per_frame.append((time.perf_counter() - t0) / rec.n_samples)
        offline = classify(m, fs)
        identical &= np.array_equal([o.label for o in outs], offline.labels)
        identical &= np.array_equal([o.time_s for o in outs], fs.times)
    worst_us = 1e6 * max(per_frame)
    ok = identical and worst_us <= 25
    verdict(9, ok, "streaming equivalence",
            f"labels identical for all channel sets={identical}, {worst_us:.2f} us/frame")


# 10 ------------------------------------------------------------------------

def test_10_metrics_identities():
    flat = dor(ConfusionMatrix(10, 10, 10, 10))
    cm = ConfusionMatrix(90, 85, 10, 15)
    swapped = cm.swapped()
    acc, d = accuracy(cm), dor(cm)
    dual = accuracy(swapped) == acc and dor(swapped) == d
    ok = flat == 1.0 and dual and acc == 0.875 and abs(d - 51.0) <= 1e-12
    verdict(10, ok, "metrics identities",
            f"DOR(equal cells)={flat}, (90,85,10,15) -> acc {acc}, DOR {d:.12g}, swap-invariant={dual}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
