import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridload.data import (
    IngestionError,
    LoadSeries,
    Scaler,
    SynthConfig,
    export_csv,
    fit_scaler,
    load_csv,
    make_windows,
    synth_generate,
    synth_signal,
)

START = dt.datetime(2020, 3, 2)  # a Monday


def write_rows(path, stamps, values, header="timestamp,load_mw"):
    lines = [header] + [f"{t.strftime('%Y-%m-%dT%H:00')},{v}" for t, v in zip(stamps, values)]
    path.write_text("\n".join(lines) + "\n")


def hours(n, start=START):
    return [start + dt.timedelta(hours=k) for k in range(n)]


class TestLoadCsv:
    def test_two_full_days(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, hours(48), [100.0 + k for k in range(48)])
        s = load_csv(p)
        assert len(s) == 48
        assert s.start == START
        assert s.values[47] == 147.0
        assert s.interpolated == 0

    def test_single_missing_hour_interpolated(self, tmp_path):
        stamps = hours(48)
        vals = [100.0 + 3 * k for k in range(48)]
        del stamps[5], vals[5]
        p = tmp_path / "a.csv"
        write_rows(p, stamps, vals)
        s = load_csv(p)
        assert len(s) == 48
        assert s.values[5] == (s.values[4] + s.values[6]) / 2
        assert s.interpolated == 1

    def test_three_hour_gap_is_repaired(self, tmp_path):
        stamps, vals = hours(48), [float(k) for k in range(48)]
        del stamps[10:13], vals[10:13]
        p = tmp_path / "a.csv"
        write_rows(p, stamps, vals)
        s = load_csv(p)
        np.testing.assert_allclose(s.values[9:14], [9, 10, 11, 12, 13])

    def test_leading_five_hour_gap(self, tmp_path):
        stamps, vals = hours(48)[5:], [1.0] * 43
        p = tmp_path / "a.csv"
        write_rows(p, stamps, vals)
        with pytest.raises(IngestionError, match="5 hours.*2020-03-02T00:00"):
            load_csv(p)

    def test_interior_gap_names_first_missing_hour(self, tmp_path):
        stamps, vals = hours(72), [1.0] * 72
        del stamps[30:34], vals[30:34]
        p = tmp_path / "a.csv"
        write_rows(p, stamps, vals)
        with pytest.raises(IngestionError, match="4 hours.*2020-03-03T06:00"):
            load_csv(p)

    def test_duplicate_timestamp(self, tmp_path):
        stamps = hours(24)
        stamps[3] = stamps[2]
        p = tmp_path / "a.csv"
        write_rows(p, stamps, [1.0] * 24)
        with pytest.raises(IngestionError, match="duplicate"):
            load_csv(p)

    @pytest.mark.parametrize("bad", ["nan", "inf", "-5"])
    def test_bad_values(self, tmp_path, bad):
        vals = ["1.0"] * 24
        vals[7] = bad
        p = tmp_path / "a.csv"
        write_rows(p, hours(24), vals)
        with pytest.raises(IngestionError):
            load_csv(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, hours(24), [1.0] * 24, header="time,load")
        with pytest.raises(IngestionError, match="header"):
            load_csv(p)

    def test_trailing_partial_day_trimmed(self, tmp_path):
        p = tmp_path / "a.csv"
        write_rows(p, hours(30), [1.0] * 30)
        assert len(load_csv(p)) == 24

    def test_holiday_file(self, tmp_path):
        p, h = tmp_path / "a.csv", tmp_path / "h.txt"
        write_rows(p, hours(24), [1.0] * 24)
        h.write_text("# national\n2020-03-02\n\n2020-12-25  # xmas\n")
        s = load_csv(p, h)
        assert s.holidays == {dt.date(2020, 3, 2), dt.date(2020, 12, 25)}

    def test_export_round_trip_bit_exact(self, tmp_path):
        s = synth_generate(SynthConfig(years=1, seed=3))
        p, h = tmp_path / "s.csv", tmp_path / "h.txt"
        export_csv(s, p, h)
        back = load_csv(p, h)
        assert back == s
        assert back.values.tobytes() == s.values.tobytes()


class TestScaler:
    def test_fit_extremes(self):
        sc = fit_scaler(np.array([100.0, 200.0, 150.0]))
        assert (sc.min_value, sc.max_value) == (100.0, 200.0)

    def test_apply(self):
        sc = Scaler(100.0, 200.0)
        assert sc.apply(150.0) == 0.5
        assert sc.apply(250.0) == 1.5

    def test_training_range_only(self):
        vals = np.array([5.0, 6.0, 7.0, 1000.0])
        sc = fit_scaler(vals, range(0, 3))
        assert sc.max_value == 7.0

    def test_constant_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            fit_scaler(np.full(5, 3.0))

    def test_empty_range_rejected(self):
        with pytest.raises(ValueError):
            fit_scaler(np.arange(5.0), range(2, 2))

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-1e6, 1e6), st.floats(1.0, 1e6), st.floats(-1e7, 1e7))
    def test_round_trip(self, lo, span, x):
        sc = Scaler(lo, lo + span)
        back = float(sc.invert(sc.apply(x)))
        assert abs(back - x) <= 1e-12 * max(abs(x), abs(lo), span)


class TestWindows:
    def series(self, n):
        return LoadSeries(START, np.arange(1.0, n + 1))

    def test_minimum_length_one_window(self):
        ws = make_windows(self.series(192))
        assert len(ws) == 1
        np.testing.assert_array_equal(ws[0].history, np.arange(1.0, 169))
        np.testing.assert_array_equal(ws[0].target, np.arange(169.0, 193))
        assert ws[0].index == 1

    def test_stride(self):
        ws = make_windows(self.series(216))
        assert len(ws) == 2
        assert ws[1].history[0] == 25.0

    def test_too_short(self):
        with pytest.raises(ValueError, match="192"):
            make_windows(self.series(168))

    def test_targets_midnight_aligned(self):
        for w in make_windows(self.series(24 * 20)):
            assert w.target_start.hour == 0
            assert w.target_start - w.history_start == dt.timedelta(hours=168)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(8, 40))
    def test_targets_tile_timeline(self, n_days):
        s = self.series(24 * n_days)
        ws = make_windows(s)
        assert len(ws) == (len(s) - 192) // 24 + 1
        np.testing.assert_array_equal(np.concatenate([w.target for w in ws]), s.values[168:])
        for a, b in zip(ws, ws[1:]):
            np.testing.assert_array_equal(a.history[24:], b.history[:144])


class TestSynth:
    def test_degenerate_constant(self):
        cfg = SynthConfig(years=1, base_load=1000.0, daily_amplitude=0, weekly_amplitude=0,
                          trend_slope=0, holiday_dip_fraction=0, noise_std_fraction=0)
        s = synth_generate(cfg)
        assert (s.values == 1000.0).all()

    def test_deterministic(self):
        a = synth_generate(SynthConfig(years=1, seed=11))
        b = synth_generate(SynthConfig(years=1, seed=11))
        c = synth_generate(SynthConfig(years=1, seed=12))
        assert a.values.tobytes() == b.values.tobytes()
        assert a.values.tobytes() != c.values.tobytes()

    def test_daily_peak_hour_constant(self):
        cfg = SynthConfig(years=1, daily_amplitude=100.0, weekly_amplitude=50.0,
                          trend_slope=30.0, noise_std_fraction=0.0)
        s = synth_generate(cfg)
        peaks = {
            int(np.argmax(s.values[24 * k : 24 * k + 24]))
            for k in range(s.n_days)
            if not s.is_holiday(s.day(k))
        }
        assert peaks == {9}

    def test_three_years_of_hours(self):
        s = synth_generate(SynthConfig())
        assert len(s) == 24 * (dt.date(2022, 1, 1) - dt.date(2019, 1, 1)).days == 26304

    def test_noise_free_signal(self):
        cfg = SynthConfig(years=1, seed=2)
        noisy, clean = synth_generate(cfg), synth_signal(cfg)
        resid = noisy.values - clean.values
        assert abs(resid.std() - cfg.noise_std_fraction * cfg.base_load) < 0.05 * cfg.noise_std_fraction * cfg.base_load

    def test_holidays_dip(self):
        cfg = SynthConfig(years=1, noise_std_fraction=0.0, trend_slope=0.0, weekly_amplitude=0.0)
        s = synth_generate(cfg)
        assert dt.date(2019, 12, 25) in s.holidays
        k = (dt.date(2019, 12, 25) - dt.date(2019, 1, 1)).days
        ratio = s.values[24 * k : 24 * k + 24] / s.values[24 * (k - 7) : 24 * (k - 7) + 24]
        np.testing.assert_allclose(ratio, 1 - cfg.holiday_dip_fraction)

    def test_level_shift(self):
        base = SynthConfig(years=1, noise_std_fraction=0.0)
        shifted = SynthConfig(years=1, noise_std_fraction=0.0, level_shift=(dt.date(2019, 6, 1), 500.0))
        a, b = synth_generate(base).values, synth_generate(shifted).values
        k = 24 * (dt.date(2019, 6, 1) - dt.date(2019, 1, 1)).days
        assert (a[:k] == b[:k]).all()
        diff = b[k:] - a[k:]
        assert ((np.abs(diff - 500.0) < 1e-9) | (diff < 500.0)).all()  # holidays carry the dip
        assert np.median(diff) == pytest.approx(500.0)

    @pytest.mark.parametrize(
        "kw", [{"daily_amplitude": -1.0}, {"weekly_amplitude": -1.0}, {"noise_std_fraction": 0.2},
               {"holiday_dip_fraction": 1.0}]
    )
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            SynthConfig(**kw)
