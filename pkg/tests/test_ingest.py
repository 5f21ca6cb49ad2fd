import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecogsleep.errors import DataError
from ecogsleep.ingest import (
    Hypnogram,
    Recording,
    align_hypnograms,
    common_grid,
    load_hypnogram,
    load_recording,
    save_hypnogram,
    save_recording,
    sidecar_path,
)


def write_csv(path, text):
    path.write_text(text)
    return path


class TestRecording:
    def test_defaults(self):
        rec = Recording(np.zeros((3, 10)))
        assert rec.channel_labels == ("ECoG1", "ECoG2", "ECoG3")
        assert rec.sampling_rate_hz == 400
        assert rec.duration_s == pytest.approx(10 / 400)

    def test_immutable(self):
        rec = Recording(np.zeros((2, 5)))
        with pytest.raises(ValueError):
            rec.channels[0, 0] = 1.0

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_rejects_non_finite(self, bad):
        x = np.zeros((2, 5))
        x[1, 3] = bad
        with pytest.raises(DataError, match="non-finite"):
            Recording(x)

    def test_rejects_bad_rate(self):
        with pytest.raises(DataError):
            Recording(np.zeros((1, 5)), sampling_rate_hz=0)
        with pytest.raises(DataError):
            Recording(np.zeros((1, 5)), sampling_rate_hz=400.5)

    def test_rejects_empty(self):
        with pytest.raises(DataError):
            Recording(np.zeros((2, 0)))

    def test_label_count(self):
        with pytest.raises(DataError):
            Recording(np.zeros((2, 5)), channel_labels=("a",))


class TestLoadCsv:
    def test_three_rows(self, tmp_path):
        p = write_csv(tmp_path / "r.csv", "t,ECoG1,ECoG2\n0,1.5,-2\n0.0025,2.5,-3\n0.005,3.5,-4\n")
        rec = load_recording(p)
        assert rec.n_channels == 2 and rec.n_samples == 3
        assert rec.channel_labels == ("ECoG1", "ECoG2")
        np.testing.assert_array_equal(rec.channels, [[1.5, 2.5, 3.5], [-2, -3, -4]])
        assert rec.channels.dtype == np.float64

    def test_nan(self, tmp_path):
        p = write_csv(tmp_path / "r.csv", "t,ECoG1\n0,1\n0.0025,NaN\n")
        with pytest.raises(DataError, match="non-finite sample"):
            load_recording(p)

    def test_ragged(self, tmp_path):
        p = write_csv(tmp_path / "r.csv", "t,ECoG1,ECoG2\n0,1,2\n0.0025,3\n")
        with pytest.raises(DataError, match="ragged"):
            load_recording(p)

    def test_malformed_header(self, tmp_path):
        p = write_csv(tmp_path / "r.csv", "time,ECoG1\n0,1\n")
        with pytest.raises(DataError, match="header"):
            load_recording(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_recording(tmp_path / "nope.csv")

    def test_rate_mismatch(self, tmp_path):
        p = write_csv(tmp_path / "r.csv", "t,ECoG1\n0,1\n0.01,2\n0.02,3\n")
        with pytest.raises(DataError, match="spans"):
            load_recording(p)  # 100 Hz data read as 400 Hz
        assert load_recording(p, sampling_rate_hz=100).n_samples == 3

    def test_round_trip(self, tmp_path, rng):
        rec = Recording(rng.normal(size=(3, 400)), subject_id=None)
        save_recording(rec, tmp_path / "r.csv")
        assert load_recording(tmp_path / "r.csv") == rec


class TestLoadF32:
    def test_interleaved(self, tmp_path):
        flat = np.arange(2400, dtype="<f4")
        flat.tofile(tmp_path / "r.f32")
        (tmp_path / "r.meta.json").write_text(json.dumps(
            {"channels": 3, "sampling_rate_hz": 400, "labels": ["a", "b", "c"], "subject_id": "rat1"}
        ))
        rec = load_recording(tmp_path / "r.f32")
        assert rec.channels.shape == (3, 800)
        assert rec.duration_s == 2.0
        assert rec.subject_id == "rat1"
        # frame order: s0c0 s0c1 s0c2 s1c0 ...
        np.testing.assert_array_equal(rec.channels[1, :3], [1, 4, 7])

    def test_missing_sidecar(self, tmp_path):
        np.zeros(6, dtype="<f4").tofile(tmp_path / "r.f32")
        with pytest.raises(DataError, match="sidecar"):
            load_recording(tmp_path / "r.f32")

    def test_ragged(self, tmp_path):
        np.zeros(7, dtype="<f4").tofile(tmp_path / "r.f32")
        sidecar_path(tmp_path / "r.f32").write_text('{"channels": 3, "sampling_rate_hz": 400}')
        with pytest.raises(DataError, match="ragged"):
            load_recording(tmp_path / "r.f32")

    def test_non_finite(self, tmp_path):
        np.array([0, np.inf], dtype="<f4").tofile(tmp_path / "r.f32")
        sidecar_path(tmp_path / "r.f32").write_text('{"channels": 1, "sampling_rate_hz": 400}')
        with pytest.raises(DataError, match="non-finite"):
            load_recording(tmp_path / "r.f32")

    def test_round_trip(self, tmp_path, rng):
        x = rng.normal(size=(2, 100)).astype(np.float32).astype(np.float64)
        rec = Recording(x, 200, ("L", "R"), "s1")
        save_recording(rec, tmp_path / "r.f32")
        assert load_recording(tmp_path / "r.f32") == rec


class TestHypnogramFiles:
    def test_exact_text(self, tmp_path):
        h = Hypnogram(10.0, 1.0, [0, 1, 1])
        save_hypnogram(h, tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text() == "time_s,label\n10,0\n11,1\n12,1\n"

    def test_round_trip(self, tmp_path):
        h = Hypnogram(10.0, 1.0, [0, 1, 1])
        save_hypnogram(h, tmp_path / "h.csv")
        back = load_hypnogram(tmp_path / "h.csv")
        assert back == h
        np.testing.assert_array_equal(back.labels, [0, 1, 1])

    def test_empty(self, tmp_path):
        save_hypnogram(Hypnogram(0.0, 1.0, []), tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text() == "time_s,label\n"
        assert len(load_hypnogram(tmp_path / "h.csv")) == 0

    def test_bad_label(self, tmp_path):
        p = write_csv(tmp_path / "h.csv", "time_s,label\n0,0\n1,2\n")
        with pytest.raises(DataError):
            load_hypnogram(p)

    def test_non_uniform(self, tmp_path):
        p = write_csv(tmp_path / "h.csv", "time_s,label\n0,0\n1,1\n2,1\n4,0\n")
        with pytest.raises(DataError, match="non-uniform stride"):
            load_hypnogram(p)

    @settings(max_examples=60, deadline=None)
    @given(
        start=st.integers(-10_000, 10_000),
        stride_ms=st.integers(1, 5000),
        labels=st.lists(st.integers(0, 1), max_size=200),
    )
    def test_round_trip_property(self, tmp_path_factory, start, stride_ms, labels):
        d = tmp_path_factory.mktemp("h")
        h = Hypnogram(start / 10, stride_ms / 1000, labels)
        save_hypnogram(h, d / "a.csv")
        back = load_hypnogram(d / "a.csv")
        np.testing.assert_array_equal(back.labels, h.labels)
        if len(h) >= 2:
            assert back == h
        # the file itself is a fixed point
        save_hypnogram(back, d / "b.csv")
        assert (d / "a.csv").read_text() == (d / "b.csv").read_text()

    def test_invalid_construction(self):
        with pytest.raises(DataError):
            Hypnogram(0, 0, [0])
        with pytest.raises(DataError):
            Hypnogram(0, 1, [0, 3])


class TestGrids:
    def test_common_grid(self):
        a, b = common_grid(10.0, 1.0, 5, 0.0, 1.0, 12)
        assert (a, b) == (slice(0, 2), slice(10, 12))

    def test_misaligned(self):
        with pytest.raises(DataError, match="misaligned"):
            common_grid(0.0, 1.0, 5, 0.5, 1.0, 5)
        with pytest.raises(DataError, match="misaligned"):
            common_grid(0.0, 1.0, 5, 0.0, 0.5, 5)

    def test_align(self):
        a = Hypnogram(2.0, 1.0, [1, 1, 0, 0])
        b = Hypnogram(0.0, 1.0, [0, 0, 1, 0, 1])
        a2, b2 = align_hypnograms(a, b)
        assert a2.start_time_s == b2.start_time_s == 2.0
        np.testing.assert_array_equal(a2.labels, [1, 1, 0])
        np.testing.assert_array_equal(b2.labels, [1, 0, 1])

    def test_at_times(self):
        h = Hypnogram(0.0, 0.5, [0, 1, 0, 1])
        np.testing.assert_array_equal(h.at_times([0.5, 1.5]), [1, 1])
        with pytest.raises(DataError):
            h.at_times([0.25])
