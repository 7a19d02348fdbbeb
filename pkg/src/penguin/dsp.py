"""Resampling, Butterworth filtering and amplitude normalization for biosignals."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.signal as sg

from .io import WaveformRecord

TARGET_FS = 128.0
EPS = 1e-8

# resampler kernel
KAISER_BETA = 8.0
HALF_TAPS = 32


class Role(enum.Enum):
    PPG = "ppg"
    ECG = "ecg"
    RESP = "resp"
    ABP = "abp"

    @classmethod
    def parse(cls, value) -> "Role":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown channel role {value!r}") from None


@dataclass(frozen=True)
class FilterSpec:
    kind: str  # "lowpass" | "highpass" | "bandpass"
    cutoffs_hz: tuple[float, ...]
    order: int = 4
    zero_phase: bool = True

    def check(self, sample_rate_hz: float):
        if self.kind not in ("lowpass", "highpass", "bandpass"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.order < 1:
            raise ValueError("filter order must be positive")
        want = 2 if self.kind == "bandpass" else 1
        if len(self.cutoffs_hz) != want:
            raise ValueError(f"{self.kind} needs {want} cutoff(s), got {self.cutoffs_hz}")
        nyq = sample_rate_hz / 2
        for f in self.cutoffs_hz:
            if not 0 < f < nyq:
                raise ValueError(f"cutoff {f} Hz must lie in (0, {nyq}) Hz (Nyquist)")
        if want == 2 and not self.cutoffs_hz[0] < self.cutoffs_hz[1]:
            raise ValueError(f"bandpass cutoffs must satisfy low < high, got {self.cutoffs_hz}")


TASK_FILTERS = {
    Role.PPG: FilterSpec("bandpass", (0.5, 4.0)),
    Role.ECG: FilterSpec("highpass", (0.5,)),
    Role.RESP: FilterSpec("lowpass", (1.0,)),
}


@dataclass(frozen=True)
class BiquadCascade:
    """Second-order sections, one row per section: ``b0 b1 b2 1 a1 a2``."""

    sos: np.ndarray

    @property
    def sections(self):
        return [(tuple(row[:3]), tuple(row[3:])) for row in self.sos]

    def pole_radii(self) -> np.ndarray:
        return np.concatenate([np.abs(np.roots(row[3:])) for row in self.sos])

    def is_stable(self) -> bool:
        return bool(np.all(self.pole_radii() < 1.0))

    def response(self, freqs_hz, sample_rate_hz: float) -> np.ndarray:
        """Complex frequency response at the given frequencies."""
        z = np.exp(1j * 2 * np.pi * np.asarray(freqs_hz, dtype=float) / sample_rate_hz)
        h = np.ones_like(z)
        for b0, b1, b2, a0, a1, a2 in self.sos:
            h *= (b0 + b1 / z + b2 / z**2) / (a0 + a1 / z + a2 / z**2)
        return h


def design_butterworth(spec: FilterSpec, sample_rate_hz: float) -> BiquadCascade:
    """Digital Butterworth via bilinear transform with prewarped cutoffs."""
    spec.check(sample_rate_hz)
    wn = spec.cutoffs_hz if spec.kind == "bandpass" else spec.cutoffs_hz[0]
    sos = sg.butter(spec.order, wn, btype=spec.kind, fs=sample_rate_hz, output="sos")
    return BiquadCascade(np.asarray(sos, dtype=np.float64))


def min_zero_phase_length(cascade: BiquadCascade) -> int:
    """Shortest signal ``apply_filter`` accepts in zero-phase mode."""
    return 3 * 2 * len(cascade.sos) + 1


def apply_filter(cascade: BiquadCascade, signal, zero_phase: bool = True) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if not zero_phase:
        return sg.sosfilt(cascade.sos, x)
    padlen = 3 * 2 * len(cascade.sos)
    if len(x) <= padlen:
        raise ValueError(f"signal of {len(x)} samples is too short for zero-phase filtering "
                         f"(needs more than {padlen})")
    return sg.sosfiltfilt(cascade.sos, x, padtype="odd", padlen=padlen)


def _kaiser(x: np.ndarray, half_width: float) -> np.ndarray:
    r = np.clip(x / half_width, -1.0, 1.0)
    return np.i0(KAISER_BETA * np.sqrt(1.0 - r * r)) / np.i0(KAISER_BETA)


def resample(signal, from_hz: float, to_hz: float) -> np.ndarray:
    """Band-limited resampling with a Kaiser-windowed sinc kernel.

    The kernel spans ``HALF_TAPS`` periods of the lower of the two rates on
    each side, cuts off at half that rate and is renormalized per output
    sample, so DC passes with unit gain even at the record edges.
    """
    if not (from_hz > 0 and to_hz > 0):
        raise ValueError(f"sample rates must be positive, got {from_hz} -> {to_hz}")
    x = np.asarray(signal, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("need at least 2 samples to resample")
    if from_hz == to_hz:
        return x.copy()
    n_out = int(round(len(x) * to_hz / from_hz))
    ratio = Fraction(to_hz / from_hz).limit_denominator(1000)
    if abs(float(ratio) - to_hz / from_hz) < 1e-12:
        # rational ratio: the kernel repeats with period `num` outputs, so
        # weights are built once per phase and reused.
        return _resample_polyphase(x, ratio.numerator, ratio.denominator, n_out)
    t_out = np.arange(n_out) * (from_hz / to_hz)
    return _resample_at(x, t_out, min(1.0, to_hz / from_hz))


def _kernel(offsets: np.ndarray, scale: float) -> np.ndarray:
    # offsets in input-sample units; scale = cutoff relative to input Nyquist
    half_width = HALF_TAPS / scale
    w = scale * np.sinc(scale * offsets) * _kaiser(offsets, half_width)
    w[np.abs(offsets) > half_width] = 0.0
    return w


def _resample_at(x: np.ndarray, t_out: np.ndarray, scale: float) -> np.ndarray:
    half = int(np.ceil(HALF_TAPS / scale))
    out = np.empty(len(t_out))
    taps = np.arange(-half, half + 1)
    for lo in range(0, len(t_out), 4096):
        t = t_out[lo:lo + 4096]
        base = np.floor(t).astype(np.int64)
        idx = base[:, None] + taps[None, :]
        w = _kernel(t[:, None] - idx, scale)
        valid = (idx >= 0) & (idx < len(x))
        w = np.where(valid, w, 0.0)
        vals = x[np.clip(idx, 0, len(x) - 1)]
        out[lo:lo + 4096] = (w * vals).sum(axis=1) / w.sum(axis=1)
    return out


def _resample_polyphase(x: np.ndarray, up: int, down: int, n_out: int) -> np.ndarray:
    scale = min(1.0, up / down)
    half = int(np.ceil(HALF_TAPS / scale))
    taps = np.arange(-half, half + 1)
    out = np.empty(n_out)
    for phase in range(min(up, n_out)):
        j = np.arange(phase, n_out, up)
        pos = phase * down / up
        frac = pos - np.floor(pos)
        w_phase = _kernel(frac - taps, scale)
        base = (j * down) // up
        idx = base[:, None] + taps[None, :]
        valid = (idx >= 0) & (idx < len(x))
        w = np.where(valid, w_phase[None, :], 0.0)
        vals = x[np.clip(idx, 0, len(x) - 1)]
        out[j] = (w * vals).sum(axis=1) / w.sum(axis=1)
    return out


def standardize_unit(signal) -> np.ndarray:
    """z-score, then divide by the peak magnitude so the result lies in [-1, 1]."""
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    std = x.std()
    if std < EPS:
        # mean removal of a constant leaves rounding residue that the peak
        # division would inflate to +-1
        return np.zeros_like(x)
    y = (x - x.mean()) / std
    return y / np.abs(y).max()


def preprocess_channel(samples, role, sample_rate_hz: float = TARGET_FS) -> np.ndarray:
    role = Role.parse(role)
    x = np.asarray(samples, dtype=np.float64)
    if role is Role.ABP:
        return np.asarray(samples).copy()
    spec = TASK_FILTERS[role]
    y = apply_filter(design_butterworth(spec, sample_rate_hz), x, zero_phase=spec.zero_phase)
    return standardize_unit(y)


def preprocess_task(record: WaveformRecord, channel_label: str, role) -> WaveformRecord:
    """Apply the role's chain to one channel; the record must already be at 128 Hz.

    ABP is passed through untouched so pressures stay in mmHg.
    """
    if record.sample_rate_hz != TARGET_FS:
        raise ValueError(f"record {record.subject_id!r} is at {record.sample_rate_hz} Hz; "
                         f"resample to {TARGET_FS:g} Hz first")
    samples = record.channel(channel_label)
    return record.with_channel(channel_label, preprocess_channel(samples, role, record.sample_rate_hz))


def resample_record(record: WaveformRecord, to_hz: float = TARGET_FS) -> WaveformRecord:
    if record.sample_rate_hz == to_hz:
        return record
    chans = {k: resample(v, record.sample_rate_hz, to_hz) for k, v in record.channels.items()}
    return record.replace(sample_rate_hz=float(to_hz), channels=chans)


def preprocess_record(record: WaveformRecord, roles: dict[str, Role]) -> WaveformRecord:
    """Resample to 128 Hz, then run each labeled channel through its role's chain."""
    out = resample_record(record)
    for label, role in roles.items():
        out = preprocess_task(out, label, role)
    return out
