"""Glue between records on disk, the model, the sampler and the metrics."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .dsp import Role, TARGET_FS, preprocess_record
from .flow import SamplerConfig, reconstruct_windows
from .io import Task, WaveformRecord, read_delimited_text, read_record, window_pairs, window_starts
from .metrics import MetricReport, bp_error, hr_error, rr_error
from .network import ModelConfig, PenguinModel
from .train import TrainConfig, train

TARGET_LABEL = {Task.ECG: "ecg", Task.RESP: "resp", Task.ABP: "abp"}


class SchemaError(ValueError):
    """A channel label does not map to a known role."""


def channel_roles(record: WaveformRecord) -> dict[str, Role]:
    roles = {}
    for label in record.labels:
        try:
            roles[label] = Role.parse(label)
        except ValueError:
            raise SchemaError(f"{record.subject_id}: channel {label!r} has no preprocessing role "
                              f"(expected ppg, ecg, resp or abp)") from None
    if Role.PPG not in roles.values():
        raise SchemaError(f"{record.subject_id}: no 'ppg' channel")
    return roles


def load_dir(path, fs: float | None = None, task=None) -> list[WaveformRecord]:
    """Load every ``*.vsr`` (and, given ``fs`` and ``task``, ``*.csv``) file, sorted by name."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"{path} is not a directory")
    records = []
    for f in sorted(path.iterdir()):
        if f.suffix == ".vsr":
            records.append(read_record(f))
        elif f.suffix == ".csv" and fs is not None and task is not None:
            with f.open() as fh:
                header = [h.strip() for h in fh.readline().split(",")]
            records.append(read_delimited_text(f, fs, header, f.stem, task))
    return records


def preprocess(record: WaveformRecord) -> WaveformRecord:
    return preprocess_record(record, channel_roles(record))


def pairs_for(records, subjects, target_label: str, K: int, stride: int, ppg_label: str = "ppg"):
    """Stacked (ppg, target) windows for the given subjects, in record order."""
    wanted = set(subjects)
    pairs = []
    for rec in records:
        if rec.subject_id in wanted:
            pairs += window_pairs(rec, ppg_label, target_label, K, stride)
    if not pairs:
        return np.zeros((0, K), np.float32), np.zeros((0, K), np.float32)
    return (np.stack([p.ppg for p in pairs]).astype(np.float32),
            np.stack([p.target for p in pairs]).astype(np.float32))


def reconstruct_record(model: PenguinModel, record: WaveformRecord, K: int,
                       cfg: SamplerConfig, ppg_label: str = "ppg") -> np.ndarray:
    """Sample non-overlapping windows of the record's PPG and stitch them end to end.

    The trailing partial window is dropped, so the output has
    ``(n_samples // K) * K`` samples.
    """
    ppg = record.channel(ppg_label)
    windows = [ppg[s:s + K] for s in window_starts(record.n_samples, K, K)]
    return np.concatenate(reconstruct_windows(model, windows, cfg)).astype(np.float32)


def evaluate(task, recon, truth, fs: float = TARGET_FS) -> list[MetricReport]:
    task = Task.parse(task)
    n = min(len(recon), len(truth))
    recon, truth = np.asarray(recon[:n], float), np.asarray(truth[:n], float)
    if task is Task.ECG:
        return [hr_error(recon, truth, fs)]
    if task is Task.RESP:
        return [rr_error(recon, truth, fs)]
    return list(bp_error(recon, truth, fs))


def build_model(cfg: ModelConfig, state: dict | None = None) -> PenguinModel:
    model = PenguinModel(cfg)
    if state is not None:
        model.load_state_dict({k: torch.as_tensor(v) for k, v in state.items()})
    model.eval()
    return model


def fit(records, split, task, model_cfg: ModelConfig, train_cfg: TrainConfig, stride: int,
        on_epoch=None, target_label: str | None = None, ppg_label: str = "ppg"):
    """Window the train/val subjects and train a fresh model; returns (model, history)."""
    target = target_label or TARGET_LABEL[Task.parse(task)]
    K = model_cfg.window
    tr = pairs_for(records, split.train_subjects, target, K, stride, ppg_label)
    va = pairs_for(records, split.val_subjects, target, K, K, ppg_label)
    model = PenguinModel(model_cfg)
    best, history = train(model, tr, va, train_cfg, on_epoch=on_epoch)
    model.load_state_dict(best)
    model.eval()
    return model, history
