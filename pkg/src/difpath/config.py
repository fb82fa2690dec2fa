"""Experiment configuration: nested dataclasses mirrored one-to-one by a JSON document.

Unknown keys at any level raise ``ConfigError``. The document carries a
``schema_version``; only version 1 exists.
"""
from dataclasses import asdict, dataclass, field, fields, is_dataclass
import json
from pathlib import Path
import typing

from .classifier import ClassifierParams
from .errors import ConfigError, DifpathError, MissingFileError
from .samplers import SamplerConfig

SCHEMA_VERSION = 1
MODEL_KINDS = ("DDPM", "LDM")


@dataclass
class DatasetConfig:
    preset: typing.Optional[str] = "PKGH-toy-224"
    path: typing.Optional[str] = None
    slides_per_class: typing.Optional[int] = None


@dataclass
class ScheduleConfig:
    kind: str = "linear"
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class AEConfig:
    width: int = 32
    latent_channels: int = 4
    vq_codes: int = 0
    precision: str = "float32"
    train_steps: int = 600
    batch_size: int = 32
    lr: float = 2e-3


@dataclass
class ModelConfig:
    kind: str = "DDPM"
    width: int = 32
    n_layers: int = 5
    temb_dim: int = 64
    train_steps: int = 1500
    batch_size: int = 32
    lr: float = 2e-3
    lr_final: float = 1e-4
    p_uncond: float = 0.1
    precision: str = "float32"
    ae: AEConfig = field(default_factory=AEConfig)


@dataclass
class MetricConfig:
    extractor: str = "classifier"
    n_per_class: int = 50
    triplet_per_class: int = 128
    kid_subset_size: int = 100
    kid_subsets: int = 10


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    output_dir: str = "runs/default"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig("ddim", 50))
    metrics: MetricConfig = field(default_factory=MetricConfig)
    classifier: ClassifierParams = field(default_factory=ClassifierParams)

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        self.model.kind = self.model.kind.upper()
        if self.model.kind not in MODEL_KINDS:
            raise ConfigError(f"model.kind must be one of {MODEL_KINDS}, got {self.model.kind!r}")
        if (self.dataset.preset is None) == (self.dataset.path is None):
            raise ConfigError("dataset needs exactly one of 'preset' or 'path'")
        if self.metrics.extractor not in ("classifier", "randproj"):
            raise ConfigError("metrics.extractor must be 'classifier' or 'randproj'")
        for where, prec in (("model", self.model.precision), ("model.ae", self.model.ae.precision)):
            if prec not in ("float32", "float64"):
                raise ConfigError(f"{where}.precision must be 'float32' or 'float64'")
        if self.sampler.n_steps > self.schedule.T:
            raise ConfigError(f"sampler.n_steps {self.sampler.n_steps} exceeds schedule.T {self.schedule.T}")
        if self.model.train_steps < 0 or self.model.ae.train_steps < 0:
            raise ConfigError("train_steps must be >= 0")
        return self

    def to_dict(self):
        d = asdict(self)
        d["sampler"] = self.sampler.to_dict()
        d["classifier"] = self.classifier.to_dict()
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        tp = hints[key]
        if is_dataclass(tp):
            kwargs[key] = _build(tp, value, f"{where}.{key}" if where else key)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except DifpathError as e:
        raise ConfigError(f"{where or 'config'}: {e}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where or 'config'}: {e}") from None


def config_from_dict(raw):
    return _build(ExperimentConfig, raw, "").validate()


def load_config(path):
    p = Path(path)
    if not p.exists():
        raise MissingFileError(f"no such config file: {path}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}: {e}") from None
    return config_from_dict(raw)
