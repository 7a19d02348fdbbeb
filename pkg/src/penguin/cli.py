"""Command-line entry point: synth, preprocess, split, train, sample, eval, gradcheck.

Exit codes: 0 ok, 2 bad arguments, 3 I/O, 4 channel schema, 5 training,
6 window/shape mismatch, 7 evaluation, 8 gradient check.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import synth
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .dsp import TARGET_FS
from .gradcheck import run_gradcheck, summarize
from .io import DatasetSplit, FormatError, Task, WaveformRecord, split_subjects, write_record
from .metrics import MetricReport, NoValidWindows
from .pipeline import (SchemaError, TARGET_LABEL, build_model, evaluate, fit, load_dir, preprocess,
                       reconstruct_record)
from .train import TrainingError, history_csv

log = logging.getLogger("penguin")

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_SCHEMA, EXIT_TRAIN, EXIT_SHAPE, EXIT_EVAL, EXIT_GRAD = 0, 2, 3, 4, 5, 6, 7, 8


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load_records(path, **kw) -> list[WaveformRecord]:
    try:
        records = load_dir(path, **kw)
    except (OSError, FormatError) as exc:
        raise CommandError(EXIT_IO, f"cannot read {path}: {exc}") from None
    if not records:
        raise CommandError(EXIT_IO, f"no records found in {path}")
    return records


def _read_ids(path) -> list[str]:
    try:
        return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot read manifest {path}: {exc}") from None


def _config(args) -> RunConfig:
    try:
        return RunConfig.load(getattr(args, "config", None), getattr(args, "set", None))
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot read config: {exc}") from None
    except ConfigError as exc:
        raise CommandError(EXIT_ARGS, str(exc)) from None


def _mkdir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot create {path}: {exc}") from None
    return path


def _positive(kind):
    def parse(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def cmd_synth(args) -> int:
    cfg = synth.SynthConfig(task=args.task, n_subjects=args.subjects,
                            seconds_per_subject=args.seconds, seed=args.seed)
    out = _mkdir(args.out)
    for i in range(cfg.n_subjects):
        rec = synth.generate(cfg, i)
        try:
            write_record(rec, out / f"subject_{i}.vsr")
        except OSError as exc:
            raise CommandError(EXIT_IO, f"cannot write record: {exc}") from None
        print(f"{rec.subject_id}: {rec.n_samples} samples at {rec.sample_rate_hz:g} Hz, "
              f"channels {', '.join(rec.labels)}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    task = Task.parse(args.task) if args.task else None
    records = _load_records(args.input, fs=args.fs, task=task)
    out = _mkdir(args.out)
    for rec in records:
        try:
            processed = preprocess(rec)
        except SchemaError as exc:
            raise CommandError(EXIT_SCHEMA, str(exc)) from None
        write_record(processed, out / f"{rec.subject_id}.vsr")
        print(f"{rec.subject_id}: {rec.sample_rate_hz:g} Hz -> {TARGET_FS:g} Hz, "
              f"{processed.n_samples} samples")
    return EXIT_OK


def cmd_split(args) -> int:
    records = _load_records(args.input)
    try:
        ratio = tuple(int(x) for x in args.ratio.split(":"))
        split = split_subjects([r.subject_id for r in records], ratio, args.seed)
    except ValueError as exc:
        raise CommandError(EXIT_ARGS, str(exc)) from None
    out = _mkdir(args.out)
    for name, ids in (("train", split.train_subjects), ("val", split.val_subjects),
                      ("test", split.test_subjects)):
        (out / f"{name}.txt").write_text("".join(f"{i}\n" for i in ids))
    print("split sizes train/val/test: %d/%d/%d" % split.sizes)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    records = _load_records(args.data)
    split = DatasetSplit(tuple(_read_ids(Path(args.splits) / "train.txt")),
                         tuple(_read_ids(Path(args.splits) / "val.txt")), ())
    known = {r.subject_id for r in records}
    unknown = [s for s in split.train_subjects + split.val_subjects if s not in known]
    if unknown:
        raise CommandError(EXIT_ARGS, f"manifest subjects not found in {args.data}: {', '.join(unknown)}")
    if not split.train_subjects or not split.val_subjects:
        raise CommandError(EXIT_ARGS, "train.txt and val.txt must each list at least one subject")
    task = records[0].task
    cfg.set("data.task", task.name.lower())
    mc, tc = cfg.model_config(), cfg.train_config()
    short = [r.subject_id for r in records if r.n_samples < mc.window]
    if short:
        raise CommandError(EXIT_SHAPE, f"records shorter than window {mc.window}: {', '.join(short)}")
    out = _mkdir(args.out)
    try:
        model, history = fit(records, split, task, mc, tc, cfg.stride,
                             on_epoch=lambda r: print(f"epoch {r.epoch}: train {r.train_loss:.5f} "
                                                      f"val {r.val_loss:.5f}", flush=True),
                             target_label=cfg.target_label, ppg_label=cfg["data.ppg_label"])
    except TrainingError as exc:
        raise CommandError(EXIT_TRAIN, f"training failed: {exc}") from None
    except KeyError as exc:
        raise CommandError(EXIT_SCHEMA, str(exc)) from None
    save_checkpoint(out / "model.pgw", dict(model.state_dict()), cfg.to_text())
    (out / "history.csv").write_text(history_csv(history))
    (out / "config.txt").write_text(cfg.to_text())
    print(f"wrote {out / 'model.pgw'} ({len(history)} epochs)")
    return EXIT_OK


def _model_from_checkpoint(path, overrides):
    try:
        tensors, cfg_text = load_checkpoint(path)
    except (OSError, FormatError) as exc:
        raise CommandError(EXIT_IO, f"cannot read checkpoint {path}: {exc}") from None
    cfg = RunConfig().update_from_text(cfg_text, str(path))
    try:
        cfg.apply_overrides(overrides)
    except ConfigError as exc:
        raise CommandError(EXIT_ARGS, str(exc)) from None
    try:
        model = build_model(cfg.model_config(), tensors)
    except RuntimeError as exc:
        raise CommandError(EXIT_SHAPE, f"checkpoint does not match its configuration: {exc}") from None
    return model, cfg


def cmd_sample(args) -> int:
    overrides = list(args.set or [])
    if args.steps is not None:
        overrides.append(f"sample.steps={args.steps}")
    if args.seed is not None:
        overrides.append(f"sample.seed={args.seed}")
    model, cfg = _model_from_checkpoint(args.checkpoint, overrides)
    K = cfg["model.window"]
    records = _load_records(args.data)
    if args.subjects:
        wanted = set(_read_ids(args.subjects))
        records = [r for r in records if r.subject_id in wanted]
    out = _mkdir(args.out)
    scfg = cfg.sampler_config()
    log.info("sampling with %d Heun steps", scfg.steps)
    print(f"sampling with {scfg.steps} Heun steps, window {K}")
    for rec in records:
        if rec.n_samples < K:
            raise CommandError(EXIT_SHAPE, f"{rec.subject_id}: {rec.n_samples} samples is shorter "
                                           f"than the checkpoint window K={K}")
        if rec.sample_rate_hz != TARGET_FS:
            raise CommandError(EXIT_SHAPE, f"{rec.subject_id}: expected {TARGET_FS:g} Hz input")
        try:
            recon = reconstruct_record(model, rec, K, scfg, cfg["data.ppg_label"])
        except KeyError as exc:
            raise CommandError(EXIT_SCHEMA, str(exc)) from None
        write_record(WaveformRecord(rec.subject_id, rec.task, rec.sample_rate_hz, {"recon": recon}),
                     out / f"{rec.subject_id}.vsr")
        if args.series:
            t = np.arange(len(recon)) / rec.sample_rate_hz
            lines = ["time_s,value"] + [f"{a:.6f},{b:.6g}" for a, b in zip(t, recon)]
            (out / f"{rec.subject_id}.csv").write_text("\n".join(lines) + "\n")
        print(f"{rec.subject_id}: {len(recon) // K} windows reconstructed")
    (out / "config.txt").write_text(cfg.to_text())
    return EXIT_OK


def cmd_eval(args) -> int:
    recon = {r.subject_id: r for r in _load_records(args.recon)}
    truth = {r.subject_id: r for r in _load_records(args.truth)}
    missing = sorted(set(recon) - set(truth))
    if args.subjects:
        missing += sorted(set(_read_ids(args.subjects)) - set(recon))
    if missing:
        raise CommandError(EXIT_EVAL, f"subjects without a counterpart: {', '.join(missing)}")
    task = next(iter(truth.values())).task
    label = args.target_label or TARGET_LABEL[task]
    per_quantity: dict[str, list[MetricReport]] = {}
    rows = ["subject,quantity,window,predicted,true,abs_error,status"]
    for sid in sorted(recon):
        rec_ch = "recon" if "recon" in recon[sid].channels else label
        try:
            reports = evaluate(task, recon[sid].channel(rec_ch), truth[sid].channel(label),
                               truth[sid].sample_rate_hz)
        except NoValidWindows as exc:
            raise CommandError(EXIT_EVAL, f"{sid}: {exc}") from None
        except KeyError as exc:
            raise CommandError(EXIT_SCHEMA, str(exc)) from None
        for rep in reports:
            per_quantity.setdefault(rep.quantity, []).append(rep)
            rows += [f"{sid},{rep.quantity},{line}" for line in rep.to_csv().splitlines()[1:]]
    merged = [MetricReport.merge(reps) for reps in per_quantity.values()]
    if args.out:
        Path(args.out).write_text("\n".join(rows) + "\n")
    for rep in merged:
        print(rep.summary())
    if not all(rep.valid for rep in merged):
        raise CommandError(EXIT_EVAL, "no valid windows")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    probes = run_gradcheck(seed=args.seed, n_probes=args.probes, sabotage=args.sabotage)
    worst_by_family = summarize(probes)
    for fam, err in worst_by_family.items():
        print(f"{fam:>10s}  max rel err {err:.3e}")
    worst = max(probes, key=lambda p: p.rel_error)
    print(f"{len(probes)} probes over {len(worst_by_family)} families")
    if worst.rel_error > args.tol:
        raise CommandError(EXIT_GRAD, f"gradient check failed: {worst.name}{list(worst.index)} "
                                      f"analytic {worst.analytic:.6e} vs numeric {worst.numeric:.6e} "
                                      f"(rel err {worst.rel_error:.3e})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="penguin", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=_positive(int), default=None,
                   help="torch intra-op threads; 1 gives bitwise-reproducible runs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic paired recordings")
    s.add_argument("--task", choices=["ecg", "resp", "abp"], required=True)
    s.add_argument("--subjects", type=_positive(int), default=8)
    s.add_argument("--seconds", type=_positive(float), default=300.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="resample to 128 Hz and apply per-channel filtering")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--fs", type=float, help="sample rate of .csv inputs")
    s.add_argument("--task", choices=["ecg", "resp", "abp"], help="task of .csv inputs")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("split", help="write subject-disjoint train/val/test manifests")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ratio", default="6:1:1")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_split)

    def config_args(sp):
        sp.add_argument("--config", help="flat 'key = value' config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    s = sub.add_parser("train", help="train a model and write the best checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--splits", required=True, help="directory with train.txt and val.txt")
    s.add_argument("--out", required=True)
    config_args(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="reconstruct vital signs from PPG")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--subjects", help="manifest restricting which subjects to reconstruct")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=_positive(int))
    s.add_argument("--seed", type=int)
    s.add_argument("--series", action="store_true", help="also write time_s,value text series")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("eval", help="compute HR / RR / SBP / DBP errors")
    s.add_argument("--recon", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--subjects", help="manifest of subjects that must be present")
    s.add_argument("--target-label")
    s.add_argument("--out", help="per-window report (comma-separated)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference check of model gradients")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--probes", type=int, default=64)
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--sabotage", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
