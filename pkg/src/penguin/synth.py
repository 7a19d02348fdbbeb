"""Paired synthetic PPG / vital-sign recordings with known rates and pressures."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .io import Task, WaveformRecord, write_record

FS = 128.0

ECG_SPIKE_SIGMA_S = 0.020
PPG_DELAY_S = 0.200      # R-peak to PPG systolic peak
PPG_RISE_S = 0.080
PPG_DECAY_S = 0.220
ABP_PPG_DELAY_S = 0.150
REF_HR_BPM = 75.0


@dataclass(frozen=True)
class SynthConfig:
    task: Task = Task.ECG
    n_subjects: int = 8
    seconds_per_subject: float = 300.0
    fs: float = FS
    hr_range: tuple[float, float] = (50.0, 120.0)
    rr_range: tuple[float, float] = (6.0, 30.0)
    sbp_range: tuple[float, float] = (90.0, 160.0)
    dbp_range: tuple[float, float] = (55.0, 95.0)
    seed: int = 0
    # test overrides
    constant_hr: float | None = None
    constant_rr: float | None = None
    fixed_bp: tuple[float, float] | None = None
    bp_drift: bool = True
    resp_modulation: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "task", Task.parse(self.task))
        if self.fs != FS:
            raise ValueError("synthetic records are generated at 128 Hz")
        for name in ("hr_range", "rr_range", "sbp_range", "dbp_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
        if self.n_subjects < 1 or self.seconds_per_subject <= 0:
            raise ValueError("need at least one subject and a positive duration")
        if self.sbp_range[1] < self.dbp_range[0] + 20:
            raise ValueError("sbp/dbp ranges cannot satisfy SBP > DBP + 20")


def _rng(cfg: SynthConfig, subject: int) -> np.random.Generator:
    return np.random.default_rng(cfg.seed + subject)


def _n(cfg: SynthConfig) -> int:
    return int(round(cfg.seconds_per_subject * cfg.fs))


def rate_walk(rng, n: int, fs: float, bounds, max_step_per_s: float, constant=None) -> np.ndarray:
    """Per-sample rate trace: a reflected random walk on a 1 s grid, linearly interpolated."""
    if constant is not None:
        return np.full(n, float(constant))
    lo, hi = bounds
    n_sec = int(np.ceil(n / fs)) + 2
    vals = np.empty(n_sec)
    vals[0] = rng.uniform(lo, hi)
    steps = rng.uniform(-max_step_per_s, max_step_per_s, n_sec - 1)
    for i, s in enumerate(steps, start=1):
        v = vals[i - 1] + s
        if v > hi:
            v = 2 * hi - v
        if v < lo:
            v = 2 * lo - v
        vals[i] = min(max(v, lo), hi)
    return np.interp(np.arange(n) / fs, np.arange(n_sec), vals)


def event_times(rate_per_min: np.ndarray, fs: float, phase0: float) -> np.ndarray:
    """Times (s) at which the integrated rate crosses whole cycles."""
    phase = phase0 + np.concatenate([[0.0], np.cumsum(rate_per_min[:-1] / 60.0 / fs)])
    k = np.arange(np.ceil(phase[0]), np.floor(phase[-1]) + 1)
    return np.interp(k, phase, np.arange(len(phase)) / fs)


def _cycle_phase(rate_per_min: np.ndarray, fs: float, phase0: float) -> np.ndarray:
    return phase0 + np.concatenate([[0.0], np.cumsum(rate_per_min[:-1] / 60.0 / fs)])


def _place(n: int, fs: float, times, amps, kernel, support: tuple[float, float]) -> np.ndarray:
    """Sum ``amp * kernel(t - time)`` over events, evaluated only on the kernel support."""
    out = np.zeros(n)
    lo_s, hi_s = support
    for t0, a in zip(times, amps):
        lo = max(0, int(np.floor((t0 + lo_s) * fs)))
        hi = min(n, int(np.ceil((t0 + hi_s) * fs)) + 1)
        if lo >= hi:
            continue
        tau = np.arange(lo, hi) / fs - t0
        out[lo:hi] += a * kernel(tau)
    return out


def gaussian_spike(tau):
    return np.exp(-0.5 * (tau / ECG_SPIKE_SIGMA_S) ** 2)


def ppg_pulse(tau):
    """Raised-cosine rise over 80 ms to the peak at tau=0, then a 220 ms cosine decay."""
    out = np.zeros_like(tau)
    rise = (tau >= -PPG_RISE_S) & (tau < 0)
    fall = (tau >= 0) & (tau <= PPG_DECAY_S)
    out[rise] = 0.5 * (1 - np.cos(np.pi * (tau[rise] + PPG_RISE_S) / PPG_RISE_S))
    out[fall] = 0.5 * (1 + np.cos(np.pi * tau[fall] / PPG_DECAY_S))
    return out


def _cardiac_events(cfg: SynthConfig, rng, n: int):
    hr = rate_walk(rng, n, cfg.fs, cfg.hr_range, 2.0, cfg.constant_hr)
    beats = event_times(hr, cfg.fs, rng.uniform(0, 1))
    return hr, beats


def _ppg_train(cfg, rng, n, beats, delay):
    jitter = rng.uniform(0.9, 1.1, len(beats))
    return _place(n, cfg.fs, beats + delay, jitter, ppg_pulse, (-PPG_RISE_S, PPG_DECAY_S))


def gen_cardiac(cfg: SynthConfig, subject: int) -> WaveformRecord:
    """ECG-like spike train plus a delayed, smoothed PPG pulse train from the same beats."""
    rng = _rng(cfg, subject)
    n = _n(cfg)
    _, beats = _cardiac_events(cfg, rng, n)
    ecg = _place(n, cfg.fs, beats, np.ones(len(beats)), gaussian_spike,
                 (-5 * ECG_SPIKE_SIGMA_S, 5 * ECG_SPIKE_SIGMA_S))
    ppg = _ppg_train(cfg, rng, n, beats, PPG_DELAY_S)
    ecg += 0.01 * rng.standard_normal(n)
    ppg += 0.02 * rng.standard_normal(n)
    return WaveformRecord(f"subject_{subject:03d}", Task.ECG, cfg.fs, {"ppg": ppg, "ecg": ecg})


def gen_resp(cfg: SynthConfig, subject: int) -> WaveformRecord:
    """Respiration sine; the PPG is amplitude- and baseline-modulated by it."""
    rng = _rng(cfg, subject)
    n = _n(cfg)
    rr = rate_walk(rng, n, cfg.fs, cfg.rr_range, 0.5, cfg.constant_rr)
    resp = np.sin(2 * np.pi * _cycle_phase(rr, cfg.fs, rng.uniform(0, 1)))
    _, beats = _cardiac_events(cfg, rng, n)
    pulses = _ppg_train(cfg, rng, n, beats, PPG_DELAY_S)
    depth = cfg.resp_modulation
    ppg = pulses * (1 + 0.3 * depth * resp) + 0.2 * depth * resp
    ppg += 0.02 * rng.standard_normal(n)
    return WaveformRecord(f"subject_{subject:03d}", Task.RESP, cfg.fs, {"ppg": ppg, "resp": resp})


def abp_shape(phase: np.ndarray, sbp: float, dbp: float, hr_bpm=REF_HR_BPM) -> np.ndarray:
    """One-cycle pressure shape in [0, 1] with a systolic peak and a dicrotic bump.

    The systolic peak narrows with SBP and the dicrotic bump grows with DBP, so
    pressure levels remain visible in the waveform morphology after the PPG
    has been amplitude-normalized. The peak width is fixed in seconds, so
    ``hr_bpm`` (scalar or per sample) sets its width in phase units.
    """
    sys_s = 0.03 + 0.04 * np.clip((160.0 - sbp) / 70.0, 0, 1)
    dic_h = 0.15 + 0.35 * np.clip((dbp - 55.0) / 40.0, 0, 1)
    phase = np.asarray(phase, dtype=float)
    # quantize the phase-unit width so each distinct width is normalized once
    widths = np.round(np.broadcast_to(sys_s * np.asarray(hr_bpm, float) / 60.0, phase.shape), 4)
    out = np.empty(phase.shape)
    for w in np.unique(widths):
        sel = widths == w
        out[sel] = np.interp(phase[sel] % 1.0, _SHAPE_GRID, _cycle_table(float(w), dic_h))
    return out


_SHAPE_GRID = np.linspace(0, 1, 1025)


def _cycle_table(sys_w: float, dic_h: float) -> np.ndarray:
    p = _SHAPE_GRID
    g = (np.exp(-0.5 * ((p - 0.18) / sys_w) ** 2)
         + dic_h * np.exp(-0.5 * ((p - 0.45) / 0.05) ** 2)
         + 0.25 * np.exp(-3.0 * np.clip(p - 0.18, 0, None)) * (p > 0.18))
    base = g[0] * (1 - p) + g[-1] * p
    shape = np.clip(g - base, 0, None)
    return shape / shape.max()


def gen_abp(cfg: SynthConfig, subject: int) -> WaveformRecord:
    """Arterial pressure in mmHg between per-subject DBP and SBP, with slow drift."""
    rng = _rng(cfg, subject)
    n = _n(cfg)
    if cfg.fixed_bp is not None:
        sbp, dbp = cfg.fixed_bp
    else:
        while True:
            sbp = rng.uniform(*cfg.sbp_range)
            dbp = rng.uniform(*cfg.dbp_range)
            if sbp > dbp + 20:
                break
    t = np.arange(n) / cfg.fs
    if cfg.bp_drift:
        period = rng.uniform(60.0, 240.0, 2)
        ph = rng.uniform(0, 2 * np.pi, 2)
        d_sbp = 5.0 * np.sin(2 * np.pi * t / period[0] + ph[0])
        d_dbp = 5.0 * np.sin(2 * np.pi * t / period[1] + ph[1])
    else:
        d_sbp = d_dbp = np.zeros(n)
    hr = rate_walk(rng, n, cfg.fs, cfg.hr_range, 2.0, cfg.constant_hr)
    phase = _cycle_phase(hr, cfg.fs, rng.uniform(0, 1))
    shape = abp_shape(phase, sbp, dbp, hr)
    abp = (dbp + d_dbp) + (sbp + d_sbp - dbp - d_dbp) * shape
    # PPG: the same normalized pulse, lagged, with per-beat amplitude jitter
    lag = int(round(ABP_PPG_DELAY_S * cfg.fs))
    lagged_phase = np.concatenate([np.full(lag, phase[0]) - (lag - np.arange(lag)) * hr[0] / 60 / cfg.fs,
                                   phase[:n - lag]])
    beat_idx = np.floor(lagged_phase - phase[0]).astype(int)
    jitter = rng.uniform(0.9, 1.1, beat_idx.max() - beat_idx.min() + 1)[beat_idx - beat_idx.min()]
    lagged_hr = np.concatenate([np.full(lag, hr[0]), hr[:n - lag]])
    ppg = abp_shape(lagged_phase, sbp, dbp, lagged_hr) * jitter + 0.02 * rng.standard_normal(n)
    rec = WaveformRecord(f"subject_{subject:03d}", Task.ABP, cfg.fs, {"ppg": ppg, "abp": abp})
    return rec


GENERATORS = {Task.ECG: gen_cardiac, Task.RESP: gen_resp, Task.ABP: gen_abp}
TARGET_LABEL = {Task.ECG: "ecg", Task.RESP: "resp", Task.ABP: "abp"}


def generate(cfg: SynthConfig, subject: int) -> WaveformRecord:
    return GENERATORS[cfg.task](cfg, subject)


def write_dataset(cfg: SynthConfig, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(cfg.n_subjects):
        path = out / f"subject_{i}.vsr"
        write_record(generate(cfg, i), path)
        paths.append(path)
    return paths


def with_overrides(cfg: SynthConfig, **kw) -> SynthConfig:
    return replace(cfg, **kw)
