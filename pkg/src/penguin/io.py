"""Waveform records, the VSR1 binary format, text ingestion, splits and windowing."""

from __future__ import annotations

import csv
import enum
import math
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"VSR1"
VERSION = 1


class FormatError(ValueError):
    """Raised for malformed VSR1 files or delimited-text input."""


class Task(enum.IntEnum):
    ECG = 0
    RESP = 1
    ABP = 2

    @classmethod
    def parse(cls, value: "str | int | Task") -> "Task":
        if isinstance(value, cls):
            return value
        if isinstance(value, int):
            return cls(value)
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown task {value!r}; expected one of ecg, resp, abp") from None


@dataclass(frozen=True, eq=False)
class WaveformRecord:
    """A labeled multi-channel recording of one subject.

    ``channels`` maps label to a float32 array; insertion order is the
    channel order on disk.
    """

    subject_id: str
    task: Task
    sample_rate_hz: float
    channels: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "task", Task.parse(self.task))
        chans = {}
        for label, samples in self.channels.items():
            arr = np.ascontiguousarray(samples, dtype=np.float32)
            if arr.ndim != 1:
                raise ValueError(f"channel {label!r} must be 1-D, got shape {arr.shape}")
            arr.setflags(write=False)
            chans[str(label)] = arr
        object.__setattr__(self, "channels", chans)
        self.validate()

    @property
    def n_samples(self) -> int:
        if not self.channels:
            return 0
        return len(next(iter(self.channels.values())))

    @property
    def labels(self) -> list[str]:
        return list(self.channels)

    def validate(self):
        if not (self.sample_rate_hz > 0 and math.isfinite(self.sample_rate_hz)):
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise ValueError(f"channels have unequal lengths {sorted(lengths)}")
        for label, arr in self.channels.items():
            if np.isnan(arr).any():
                raise ValueError(f"channel {label!r} contains NaN")

    def channel(self, label: str) -> np.ndarray:
        try:
            return self.channels[label]
        except KeyError:
            raise KeyError(f"record {self.subject_id!r} has no channel {label!r} "
                           f"(available: {', '.join(self.channels)})") from None

    def replace(self, **changes) -> "WaveformRecord":
        kw = dict(subject_id=self.subject_id, task=self.task,
                  sample_rate_hz=self.sample_rate_hz, channels=self.channels)
        kw.update(changes)
        return WaveformRecord(**kw)

    def with_channel(self, label: str, samples) -> "WaveformRecord":
        chans = dict(self.channels)
        chans[label] = samples
        return self.replace(channels=chans)

    def __eq__(self, other):
        if not isinstance(other, WaveformRecord):
            return NotImplemented
        if (self.subject_id, self.task, self.labels) != (other.subject_id, other.task, other.labels):
            return False
        if struct.pack("<d", self.sample_rate_hz) != struct.pack("<d", other.sample_rate_hz):
            return False
        # bitwise comparison, so -0.0 != 0.0 and payload NaNs never sneak through
        return all(self.channels[k].tobytes() == other.channels[k].tobytes() for k in self.channels)

    __hash__ = None


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"string too long for VSR1 ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


def encode_record(record: WaveformRecord) -> bytes:
    record.validate()
    if len(record.channels) > 0xFF:
        raise ValueError("VSR1 holds at most 255 channels")
    parts = [MAGIC, struct.pack("<HBd", VERSION, int(record.task), record.sample_rate_hz),
             _pack_str(record.subject_id), struct.pack("<B", len(record.channels))]
    parts += [_pack_str(label) for label in record.channels]
    parts.append(struct.pack("<Q", record.n_samples))
    parts += [arr.astype("<f4", copy=False).tobytes() for arr in record.channels.values()]
    return b"".join(parts)


def write_record(record: WaveformRecord, path) -> None:
    Path(path).write_bytes(encode_record(record))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated file (need {n} bytes at offset {self.pos}, "
                              f"have {len(self.buf) - self.pos})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def decode_record(buf: bytes, path="<bytes>") -> WaveformRecord:
    r = _Reader(buf, path)
    magic = r.take(4)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version, task, fs = r.unpack("<HBd")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported VSR1 version {version}")
    try:
        task = Task(task)
    except ValueError:
        raise FormatError(f"{path}: unknown task code {task}") from None
    subject = r.string()
    (n_chan,) = r.unpack("<B")
    labels = [r.string() for _ in range(n_chan)]
    if len(set(labels)) != len(labels):
        raise FormatError(f"{path}: duplicate channel labels {labels}")
    (n,) = r.unpack("<Q")
    need = n * 4 * n_chan
    if len(buf) - r.pos < need:
        raise FormatError(f"{path}: truncated payload, header declares {n} samples x {n_chan} "
                          f"channels but only {len(buf) - r.pos} bytes remain")
    chans = {}
    for label in labels:
        arr = np.frombuffer(r.take(n * 4), dtype="<f4").astype(np.float32)
        if np.isnan(arr).any():
            raise FormatError(f"{path}: channel {label!r} contains NaN samples")
        chans[label] = arr
    if r.pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - r.pos} trailing bytes after payload")
    try:
        return WaveformRecord(subject, task, fs, chans)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def read_record(path) -> WaveformRecord:
    return decode_record(Path(path).read_bytes(), path)


def read_delimited_text(path, sample_rate_hz: float, column_labels, subject_id: str,
                        task) -> WaveformRecord:
    """Read a comma-separated file with one header row into a record.

    Only the requested columns are kept, in the requested order.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        missing = [c for c in column_labels if c not in header]
        if missing:
            raise FormatError(f"{path}: missing column(s) {', '.join(missing)}; "
                              f"header has {', '.join(header)}")
        idx = [header.index(c) for c in column_labels]
        cols: list[list[float]] = [[] for _ in column_labels]
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            for out, i, label in zip(cols, idx, column_labels):
                cell = row[i].strip() if i < len(row) else ""
                try:
                    value = float(cell)
                except ValueError:
                    value = math.nan
                if not math.isfinite(value):
                    raise FormatError(f"{path}: row {row_no}, column {label!r}: "
                                      f"non-numeric value {cell!r}")
                out.append(value)
    return WaveformRecord(subject_id, task, sample_rate_hz,
                          {label: np.asarray(c, dtype=np.float32) for label, c in zip(column_labels, cols)})


@dataclass(frozen=True)
class DatasetSplit:
    train_subjects: tuple[str, ...]
    val_subjects: tuple[str, ...]
    test_subjects: tuple[str, ...]

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train_subjects), len(self.val_subjects), len(self.test_subjects)


def split_subjects(subject_ids, ratio=(6, 1, 1), seed: int = 0) -> DatasetSplit:
    """Shuffle subjects deterministically and cut them into train/val/test.

    Val and test each receive ``max(1, round(share))`` subjects; whatever is
    left goes to train.
    """
    ids = list(dict.fromkeys(subject_ids))
    if len(ratio) != 3 or any(int(r) != r or r <= 0 for r in ratio):
        raise ValueError(f"ratio must be three positive integers, got {ratio}")
    if len(ids) < 3:
        raise ValueError(f"need at least 3 subjects to split, got {len(ids)}")
    total = sum(ratio)
    n = len(ids)
    n_val = max(1, round(n * ratio[1] / total))
    n_test = max(1, round(n * ratio[2] / total))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ValueError(f"{n} subjects cannot fill a {ratio} split")
    random.Random(seed).shuffle(ids)
    return DatasetSplit(tuple(ids[:n_train]), tuple(ids[n_train:n_train + n_val]),
                        tuple(ids[n_train + n_val:]))


@dataclass(frozen=True)
class WindowPair:
    ppg: np.ndarray
    target: np.ndarray
    subject_id: str
    start_index: int

    @property
    def K(self) -> int:
        return len(self.ppg)


def window_starts(n_samples: int, K: int, stride: int) -> range:
    if K < 1 or stride < 1:
        raise ValueError("K and stride must be >= 1")
    if K > n_samples:
        raise ValueError(f"window length {K} exceeds record length {n_samples}")
    return range(0, n_samples - K + 1, stride)


def window_pairs(record: WaveformRecord, ppg_label: str, target_label: str, K: int,
                 stride: int) -> list[WindowPair]:
    ppg = record.channel(ppg_label)
    target = record.channel(target_label)
    return [WindowPair(ppg[s:s + K], target[s:s + K], record.subject_id, s)
            for s in window_starts(record.n_samples, K, stride)]


def stack_pairs(pairs: list[WindowPair]) -> tuple[np.ndarray, np.ndarray]:
    """Stack pairs into ``(ppg, target)`` arrays of shape (N, K)."""
    if not pairs:
        return np.zeros((0, 0), np.float32), np.zeros((0, 0), np.float32)
    return (np.stack([p.ppg for p in pairs]).astype(np.float32),
            np.stack([p.target for p in pairs]).astype(np.float32))
