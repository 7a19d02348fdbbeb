import numpy as np
import pytest
import scipy.signal as sg

from penguin.metrics import (MetricReport, NoValidWindows, WindowResult, bp_error, detect_r_peaks, dominant_frequency,
                             hr_error, rr_error)

FS = 128.0


def spike_train(times_s, n, fs=FS, sigma=0.02):
    t = np.arange(n) / fs
    return sum(np.exp(-0.5 * ((t - c) / sigma) ** 2) for c in times_s)


def test_peaks_at_one_hz():
    truth = np.arange(10) + 0.5
    x = spike_train(truth, int(10 * FS) + 64)
    peaks = detect_r_peaks(x, FS)
    assert len(peaks) == 10
    assert np.max(np.abs(peaks - truth * FS)) <= 2


def test_flat_signal_has_no_peaks():
    assert len(detect_r_peaks(np.zeros(int(10 * FS)), FS)) == 0


def test_refractory_rejects_close_second_peak():
    x = spike_train([1.0, 1.15], int(4 * FS))
    assert len(detect_r_peaks(x, FS)) == 1


def test_noisy_train_detected():
    rng = np.random.default_rng(0)
    truth = np.cumsum(rng.uniform(0.6, 1.1, 60))
    x = spike_train(truth, int((truth[-1] + 1) * FS)) + 0.02 * rng.standard_normal(int((truth[-1] + 1) * FS))
    peaks = detect_r_peaks(x, FS)
    assert len(peaks) == len(truth)
    assert np.max(np.abs(peaks / FS - truth)) <= 0.02


def test_detector_rejects_low_rate():
    with pytest.raises(ValueError):
        detect_r_peaks(np.zeros(1000), 50.0)


def rate_train(bpm, seconds, phase=0.3):
    return spike_train(np.arange(phase, seconds, 60.0 / bpm), int(seconds * FS))


def test_hr_identity():
    x = rate_train(75, 64)
    rep = hr_error(x, x, FS)
    assert rep.mae == 0.0 and rep.n_valid == 8


def test_hr_constructed_gap():
    rep = hr_error(rate_train(72, 80), rate_train(60, 80), FS)
    assert rep.mae == pytest.approx(12.0, abs=0.5)
    assert all(w.predicted == pytest.approx(72, abs=0.5) for w in rep.per_window)


def test_hr_flat_truth_all_skipped():
    rep = hr_error(rate_train(60, 32), np.zeros(int(32 * FS)), FS)
    assert rep.n_valid == 0 and rep.n_windows == 4 and not rep.valid and np.isnan(rep.mae)
    assert "no valid windows" in rep.summary()


def test_hr_short_signal():
    with pytest.raises(NoValidWindows):
        hr_error(np.zeros(500), np.zeros(500), FS)


def tone(f, seconds, phase=0.0):
    t = np.arange(int(seconds * FS)) / FS
    return np.sin(2 * np.pi * f * t + phase)


def test_rr_identity_quarter_hertz():
    x = tone(0.25, 60)
    rep = rr_error(x, x, FS)
    assert rep.mae == 0.0
    assert rep.per_window[0].true == pytest.approx(15.0, abs=1e-6)


def test_rr_constructed_gap():
    rep = rr_error(tone(0.2, 120, 0.4), tone(0.3, 120, 1.0), FS)
    assert rep.mae == pytest.approx(6.0, abs=0.2)


@pytest.mark.parametrize("f", [0.11, 0.2371, 0.43, 0.77])
def test_dominant_frequency_off_bin(f):
    assert dominant_frequency(tone(f, 60, 0.3), FS) == pytest.approx(f, abs=0.2 / 60)


def test_rr_lowpassed_noise_identity():
    rng = np.random.default_rng(0)
    x = sg.sosfiltfilt(sg.butter(4, 1.0, fs=FS, output="sos"), rng.standard_normal(int(180 * FS)))
    rep = rr_error(x, x, FS)
    assert rep.mae == 0.0 and rep.n_valid == 3


def test_rr_flat_skipped():
    rep = rr_error(tone(0.25, 60), np.zeros(int(60 * FS)), FS)
    assert rep.n_valid == 0


def sawtooth(seconds):
    t = np.arange(int(seconds * FS)) / FS
    return 80 + 40 * (t % 1.0) / (1 - 1 / FS)


def test_bp_sawtooth_identity():
    x = sawtooth(32)
    sbp, dbp = bp_error(x, x, FS)
    assert sbp.mae == 0 and dbp.mae == 0
    assert all(w.true == pytest.approx(120) for w in sbp.per_window)
    assert all(w.true == 80 for w in dbp.per_window)


def test_bp_offset_exact():
    x = sawtooth(32)
    sbp, dbp = bp_error(x + 5.0, x, FS)
    assert sbp.mae == 5.0 and dbp.mae == 5.0


def test_bp_scaled():
    x = sawtooth(32)
    sbp, dbp = bp_error(1.1 * x, x, FS)
    assert sbp.mae == pytest.approx(12.0) and dbp.mae == pytest.approx(8.0)


def test_bp_labels():
    sbp, dbp = bp_error(sawtooth(8), sawtooth(8), FS)
    assert sbp.label == "SBP Error [mmHg]" and dbp.label == "DBP Error [mmHg]"
    assert hr_error(rate_train(60, 8), rate_train(60, 8), FS).label == "HR Error [bpm]"


def test_length_mismatch():
    with pytest.raises(ValueError):
        bp_error(np.zeros(2000), np.zeros(2001), FS)


def test_report_merge_and_csv():
    a = MetricReport("HR", "bpm", [WindowResult(0, 60, 62)], [(1, "few beats")])
    b = MetricReport("HR", "bpm", [WindowResult(0, 70, 70), WindowResult(1, 80, 77)])
    m = MetricReport.merge([a, b])
    assert [w.index for w in m.per_window] == [0, 2, 3] and m.skipped == [(1, "few beats")]
    assert m.mae == pytest.approx((2 + 0 + 3) / 3)
    lines = a.to_csv().splitlines()
    assert lines[0] == "window,predicted,true,abs_error,status" and lines[2].startswith("1,,,,skipped")
