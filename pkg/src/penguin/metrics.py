"""Windowed HR / RR / SBP / DBP errors between reconstructed and reference waveforms."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dsp import FilterSpec, apply_filter, design_butterworth

# Hamilton detector
QRS_BAND_HZ = (8.0, 16.0)
ENVELOPE_S = 0.08
THRESHOLD_FACTOR = 0.45
PEAK_HISTORY = 8
REFRACTORY_S = 0.2
REFINE_S = 0.04

RR_BAND_HZ = (0.05, 1.0)


class NoValidWindows(ValueError):
    pass


@dataclass
class WindowResult:
    index: int
    predicted: float
    true: float

    @property
    def abs_error(self) -> float:
        return abs(self.predicted - self.true)


@dataclass
class MetricReport:
    quantity: str  # "HR", "RR", "SBP", "DBP"
    unit: str
    per_window: list[WindowResult] = field(default_factory=list)
    skipped: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_windows(self) -> int:
        return len(self.per_window) + len(self.skipped)

    @property
    def n_valid(self) -> int:
        return len(self.per_window)

    @property
    def valid(self) -> bool:
        return bool(self.per_window)

    @property
    def mae(self) -> float:
        """Mean absolute error over valid windows; NaN when there are none."""
        if not self.per_window:
            return math.nan
        return float(np.mean([w.abs_error for w in self.per_window]))

    @property
    def label(self) -> str:
        return f"{self.quantity} Error [{self.unit}]"

    def summary(self) -> str:
        if not self.valid:
            return f"{self.label}: no valid windows (0/{self.n_windows})"
        return f"{self.label}: {self.mae:.4f} over {self.n_valid}/{self.n_windows} windows"

    def to_csv(self) -> str:
        rows = ["window,predicted,true,abs_error,status"]
        entries = [(w.index, f"{w.predicted:.6g},{w.true:.6g},{w.abs_error:.6g},ok") for w in self.per_window]
        entries += [(i, f",,,skipped: {why}") for i, why in self.skipped]
        rows += [f"{i},{rest}" for i, rest in sorted(entries)]
        return "\n".join(rows) + "\n"

    @staticmethod
    def merge(reports: list["MetricReport"]) -> "MetricReport":
        """Concatenate per-subject reports, renumbering windows consecutively."""
        if not reports:
            raise ValueError("nothing to merge")
        out = MetricReport(reports[0].quantity, reports[0].unit)
        base = 0
        for r in reports:
            out.per_window += [WindowResult(w.index + base, w.predicted, w.true) for w in r.per_window]
            out.skipped += [(i + base, why) for i, why in r.skipped]
            base += r.n_windows
        return out


def _windows(n: int, fs: float, window_s: float):
    size = int(round(window_s * fs))
    return size, [(i, i * size) for i in range(n // size)]


def _envelope(ecg: np.ndarray, fs: float) -> np.ndarray:
    spec = FilterSpec("bandpass", QRS_BAND_HZ, order=2)
    band = apply_filter(design_butterworth(spec, fs), ecg, zero_phase=True)
    slope = np.abs(np.diff(band, prepend=band[0]))
    width = max(1, int(round(ENVELOPE_S * fs)))
    return np.convolve(slope, np.ones(width) / width, mode="same")


def _dominant_maxima(env: np.ndarray, w: int) -> np.ndarray:
    """Indices where ``env`` is positive and the largest within +-w samples.

    The slope envelope of one QRS has several lobes; only the dominant one
    is a candidate. Ties go to the earliest sample.
    """
    padded = np.concatenate([np.full(w, -np.inf), env, np.full(w, -np.inf)])
    win = sliding_window_view(padded, w)
    before = win[:len(env)].max(axis=1)        # env[i-w .. i-1]
    after = win[w + 1:w + 1 + len(env)].max(axis=1)  # env[i+1 .. i+w]
    return np.flatnonzero((env > 0) & (env > before) & (env >= after))


def detect_r_peaks(ecg, fs: float) -> np.ndarray:
    """QRS detection after Hamilton: band-pass, slope, moving-average envelope,
    adaptive threshold with a refractory period.

    Returns ascending sample indices of the ECG maxima nearest each detection.
    """
    x = np.asarray(ecg, dtype=np.float64)
    if fs < 100:
        raise ValueError(f"QRS detection needs fs >= 100 Hz, got {fs}")
    if len(x) < 2 * fs:
        raise ValueError(f"need at least 2 s of ECG, got {len(x)} samples at {fs} Hz")
    env = _envelope(x, fs)
    cand = _dominant_maxima(env, int(round(REFRACTORY_S * fs / 2)))
    seed_level = env.mean()
    history: deque[float] = deque(maxlen=PEAK_HISTORY)
    refractory = REFRACTORY_S * fs
    accepted: list[int] = []
    for c in cand:
        level = np.mean(history) if history else seed_level
        if env[c] <= THRESHOLD_FACTOR * level:
            continue
        if accepted and c - accepted[-1] < refractory:
            continue
        accepted.append(int(c))
        history.append(float(env[c]))
    half = int(round(REFINE_S * fs))
    peaks = []
    for c in accepted:
        lo, hi = max(0, c - half), min(len(x), c + half + 1)
        peaks.append(lo + int(np.argmax(x[lo:hi])))
    return np.unique(np.asarray(peaks, dtype=np.int64))


def _rate_from_peaks(peaks: np.ndarray, fs: float) -> float:
    return 60.0 * (len(peaks) - 1) / ((peaks[-1] - peaks[0]) / fs)


def hr_error(pred_ecg, true_ecg, fs: float, window_s: float = 8.0) -> MetricReport:
    """Heart-rate MAE in bpm over non-overlapping windows.

    Each window's rate is 60 / mean RR interval of the beats detected inside
    it; windows where either signal shows fewer than two beats are skipped.
    """
    pred, true = np.asarray(pred_ecg, float), np.asarray(true_ecg, float)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    report = MetricReport("HR", "bpm")
    size, wins = _windows(len(true), fs, window_s)
    if not wins:
        raise NoValidWindows(f"signal shorter than one {window_s:g} s window")
    p_peaks, t_peaks = detect_r_peaks(pred, fs), detect_r_peaks(true, fs)
    for i, start in wins:
        pp = p_peaks[(p_peaks >= start) & (p_peaks < start + size)]
        tp = t_peaks[(t_peaks >= start) & (t_peaks < start + size)]
        if len(tp) < 2 or len(pp) < 2:
            which = "truth" if len(tp) < 2 else "prediction"
            report.skipped.append((i, f"fewer than 2 beats in {which}"))
            continue
        report.per_window.append(WindowResult(i, _rate_from_peaks(pp, fs), _rate_from_peaks(tp, fs)))
    return report


def dominant_frequency(x, fs: float, band=RR_BAND_HZ) -> float | None:
    """Peak of the Hann-tapered spectrum inside ``band``, refined by a log-parabola."""
    x = np.asarray(x, dtype=np.float64)
    x = x - x.mean()
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    freqs = np.fft.rfftfreq(len(x), 1.0 / fs)
    in_band = np.flatnonzero((freqs >= band[0]) & (freqs <= band[1]))
    if len(in_band) == 0 or spec[in_band].max() <= 1e-12 * max(1.0, np.abs(x).max()):
        return None
    k = int(in_band[np.argmax(spec[in_band])])
    shift = 0.0
    if 0 < k < len(spec) - 1:
        a, b, c = np.log(np.maximum(spec[k - 1:k + 2], 1e-300))
        denom = a - 2 * b + c
        if denom < 0:
            shift = 0.5 * (a - c) / denom
    return (k + shift) * fs / len(x)


def rr_error(pred_resp, true_resp, fs: float, window_s: float = 60.0) -> MetricReport:
    """Respiratory-rate MAE in breaths/min from the dominant frequency per window."""
    pred, true = np.asarray(pred_resp, float), np.asarray(true_resp, float)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    report = MetricReport("RR", "bpm")
    size, wins = _windows(len(true), fs, window_s)
    if not wins:
        raise NoValidWindows(f"signal shorter than one {window_s:g} s window")
    for i, start in wins:
        fp = dominant_frequency(pred[start:start + size], fs)
        ft = dominant_frequency(true[start:start + size], fs)
        if fp is None or ft is None:
            report.skipped.append((i, "no spectral peak in band"))
            continue
        report.per_window.append(WindowResult(i, 60.0 * fp, 60.0 * ft))
    return report


def bp_error(pred_abp, true_abp, fs: float, window_s: float = 8.0) -> tuple[MetricReport, MetricReport]:
    """SBP (window max) and DBP (window min) errors in mmHg."""
    pred, true = np.asarray(pred_abp, float), np.asarray(true_abp, float)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    sbp, dbp = MetricReport("SBP", "mmHg"), MetricReport("DBP", "mmHg")
    size, wins = _windows(len(true), fs, window_s)
    if not wins:
        raise NoValidWindows(f"signal shorter than one {window_s:g} s window")
    for i, start in wins:
        p, t = pred[start:start + size], true[start:start + size]
        sbp.per_window.append(WindowResult(i, float(p.max()), float(t.max())))
        dbp.per_window.append(WindowResult(i, float(p.min()), float(t.min())))
    return sbp, dbp
