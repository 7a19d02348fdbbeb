"""Flat dotted-key run configuration: defaults < config file < --set overrides."""

from __future__ import annotations

from pathlib import Path

from .flow import SamplerConfig
from .io import Task
from .network import ModelConfig
from .train import TrainConfig

# key -> (type, default)
DEFAULTS: dict[str, tuple[type, object]] = {
    "model.depth": (int, 4),
    "model.embed_dim": (int, 128),
    "model.state_dim": (int, 256),
    "model.window": (int, 1024),
    "model.ffn_expansion": (int, 2),
    "model.use_film": (bool, True),
    "model.use_scale": (bool, True),
    "model.use_ppg_cond": (bool, True),
    "train.lr": (float, 1e-3),
    "train.batch_size": (int, 64),
    "train.max_epochs": (int, 300),
    "train.patience": (int, 10),
    "train.weight_decay": (float, 0.01),
    "train.grad_clip": (float, 1.0),
    "train.seed": (int, 0),
    "train.time_budget_s": (float, 0.0),
    "sample.steps": (int, 25),
    "sample.seed": (int, 0),
    "sample.target_affine_scale": (float, 1.0),
    "sample.target_affine_offset": (float, 0.0),
    "data.task": (str, "ecg"),
    "data.dir": (str, ""),
    "data.ppg_label": (str, "ppg"),
    "data.target_label": (str, ""),
    "data.stride": (int, 0),
}


class ConfigError(ValueError):
    pass


def _convert(key: str, raw):
    typ = DEFAULTS[key][0]
    if isinstance(raw, typ) and not (typ is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        return typ(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {typ.__name__}") from None


class RunConfig(dict):
    """Mapping of every known key to its effective value."""

    def __init__(self, values: dict | None = None):
        super().__init__({k: d for k, (_, d) in DEFAULTS.items()})
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self[key] = _convert(key, value)

    def update_from_text(self, text: str, source: str = "<config>"):
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                self.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{n}: {exc}") from None
        return self

    def apply_overrides(self, assignments):
        for item in assignments or ():
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            key, value = (s.strip() for s in item.split("=", 1))
            self.set(key, value)
        return self

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        cfg = cls()
        if path:
            cfg.update_from_text(Path(path).read_text(), str(path))
        return cfg.apply_overrides(overrides)

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.items())

    # typed views -------------------------------------------------------------

    @property
    def task(self) -> Task:
        return Task.parse(self["data.task"])

    @property
    def target_label(self) -> str:
        return self["data.target_label"] or {Task.ECG: "ecg", Task.RESP: "resp", Task.ABP: "abp"}[self.task]

    @property
    def stride(self) -> int:
        return self["data.stride"] or max(1, self["model.window"] // 2)

    def model_config(self) -> ModelConfig:
        n = self["model.embed_dim"]
        return ModelConfig(depth=self["model.depth"], embed_dim=n, state_dim=self["model.state_dim"],
                           window=self["model.window"], ffn_expansion=self["model.ffn_expansion"],
                           temb_dim=n + n % 2, use_film=self["model.use_film"],
                           use_scale=self["model.use_scale"], use_ppg_cond=self["model.use_ppg_cond"],
                           seed=self["train.seed"])

    def train_config(self) -> TrainConfig:
        budget = self["train.time_budget_s"]
        return TrainConfig(lr=self["train.lr"], batch_size=self["train.batch_size"],
                           max_epochs=self["train.max_epochs"], patience=self["train.patience"],
                           weight_decay=self["train.weight_decay"], grad_clip=self["train.grad_clip"],
                           seed=self["train.seed"], target_affine=self.target_affine,
                           time_budget_s=budget if budget > 0 else None,
                           use_film=self["model.use_film"], use_scale=self["model.use_scale"],
                           use_ppg_cond=self["model.use_ppg_cond"])

    @property
    def target_affine(self) -> tuple[float, float]:
        return (self["sample.target_affine_scale"], self["sample.target_affine_offset"])

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(steps=self["sample.steps"], seed=self["sample.seed"],
                             target_affine=self.target_affine)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)
