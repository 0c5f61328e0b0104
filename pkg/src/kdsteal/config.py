"""Pipeline configuration: dataclasses, strict dict/YAML loading, JSON schema.

Defaults reproduce the reference blobs-10 experiment. Every field can be
overridden from a YAML or JSON document with the same nesting.
"""

from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
import json
from pathlib import Path
import types
import typing

import yaml

from .data import SyntheticSpec
from .distill import ChainSpec, HtcConfig, KdConfig, NastyConfig, TrainBudget
from .errors import ConfigError


def _default_dataset():
    return SyntheticSpec(generator="gaussian_blobs", n_classes=10, dim=16, train_per_class=500,
                         test_per_class=200, separation=3.0, noise=1.0, modes=3, seed=0)


def _default_budget():
    return TrainBudget(epochs=30, batch_size=128, optimizer="adam", learning_rate=3e-3)


@dataclass
class PipelineConfig:
    dataset: SyntheticSpec = field(default_factory=_default_dataset)
    dataset_path: str | None = None
    teacher_dims: list = field(default_factory=lambda: [16, 128, 128, 10])
    student_dims: list = field(default_factory=lambda: [16, 16, 10])
    activation: str = "relu"
    teacher_budget: TrainBudget = field(default_factory=_default_budget)
    student_budget: TrainBudget = field(default_factory=_default_budget)
    kd: KdConfig = field(default_factory=lambda: KdConfig(alpha=0.9, tau=4.0))
    nasty: NastyConfig = field(default_factory=lambda: NastyConfig(omega=0.05, tau_a=4.0))
    htc: HtcConfig = field(default_factory=lambda: HtcConfig(alpha=0.5, tau=50.0, m=1.0))
    scm: HtcConfig = field(default_factory=lambda: HtcConfig(alpha=0.9, tau=50.0, m=10.0))
    chain: ChainSpec = field(default_factory=lambda: ChainSpec(k=3, steps=[NastyConfig(omega=0.01, tau_a=4.0)]))
    ensemble_space: str = "logit"
    ensemble_include_first: bool = True
    attacks: list = field(default_factory=lambda: ["htc", "scm"])
    defense_indices: list = field(default_factory=lambda: [2])
    nasty_es: bool = True
    data_fractions: list = field(default_factory=lambda: [0.1, 0.5, 0.9])
    no_label: bool = True
    k_sweep: list = field(default_factory=list)
    peak_rho: float = 0.1
    kl_tau: float = 1.0
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output_dir: str | None = None
    save_checkpoints: bool = True

    def validate(self):
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if self.dataset_path is None:
            self.dataset.validate()
            n_in, n_out = self.dataset.dim, self.dataset.n_classes
            for name in ("teacher_dims", "student_dims"):
                dims = getattr(self, name)
                if len(dims) < 2 or dims[0] != n_in or dims[-1] != n_out:
                    raise ConfigError(f"{name} {dims} must run from {n_in} inputs to {n_out} classes")
        if self.teacher_dims[-1] != self.student_dims[-1]:
            raise ConfigError("teacher and student disagree on the class count")
        unknown = set(self.attacks) - {"htc", "scm"}
        if unknown:
            raise ConfigError(f"unknown attacks {sorted(unknown)}")
        if self.ensemble_space not in ("logit", "prob"):
            raise ConfigError(f"unknown ensemble space {self.ensemble_space!r}")
        for i in self.defense_indices:
            if not 1 <= i <= self.chain.k:
                raise ConfigError(f"defense index {i} outside chain length {self.chain.k}")
        for f in self.data_fractions:
            if not 0 < f <= 1:
                raise ConfigError(f"data fraction {f} outside (0, 1]")
        if any(k < 1 for k in self.k_sweep):
            raise ConfigError("k_sweep entries must be >= 1")
        if not 0 < self.peak_rho <= 1 or not self.kl_tau > 0:
            raise ConfigError("peak_rho must lie in (0, 1] and kl_tau be positive")
        return self

    def to_dict(self):
        return asdict(self)


def _strip_optional(tp):
    if isinstance(tp, types.UnionType) or typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args[0], True
    return tp, False


def build(cls, data, where="config"):
    """Construct dataclass ``cls`` from nested dicts, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in fields(cls)}
    extra = set(data) - set(known)
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    kwargs = {}
    for name, value in data.items():
        tp, _ = _strip_optional(hints[name])
        path = f"{where}.{name}"
        if value is not None and is_dataclass(tp):
            value = build(tp, value, path)
        elif cls is ChainSpec and name == "steps":
            value = [build(NastyConfig, v, f"{path}[{i}]") for i, v in enumerate(value)]
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data):
    return build(PipelineConfig, data or {}).validate()


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: not valid {path.suffix or 'YAML'} ({exc})") from exc
    return config_from_dict(data)


def dump_config(cfg, path):
    path = Path(path)
    text = json.dumps(cfg.to_dict(), indent=2) if path.suffix == ".json" else \
        yaml.safe_dump(cfg.to_dict(), sort_keys=False)
    path.write_text(text)
    return path


_JSON_TYPES = {int: "integer", float: "number", str: "string", bool: "boolean"}


def _schema_for(tp, default):
    tp, optional = _strip_optional(tp)
    if is_dataclass(tp):
        schema = schema_of(tp)
    elif tp in _JSON_TYPES:
        schema = {"type": _JSON_TYPES[tp]}
        if tp is float:
            schema = {"type": ["number", "integer"]}
    elif tp is list:
        schema = {"type": "array"}
    else:
        schema = {}
    if optional:
        schema = {"anyOf": [schema, {"type": "null"}]}
    if default is not MISSING:
        schema["default"] = default
    return schema


def schema_of(cls):
    hints = typing.get_type_hints(cls)
    props = {}
    sample = cls()
    for f in fields(cls):
        default = getattr(sample, f.name)
        if is_dataclass(default):
            default = asdict(default)
        elif isinstance(default, list):
            default = [asdict(v) if is_dataclass(v) else v for v in default]
        props[f.name] = _schema_for(hints[f.name], default)
    if cls is ChainSpec:
        props["steps"]["items"] = schema_of(NastyConfig)
    return {"type": "object", "title": cls.__name__, "properties": props,
            "additionalProperties": False}


def config_schema():
    """JSON schema of the pipeline config document (defaults included)."""
    schema = schema_of(PipelineConfig)
    schema["$schema"] = "https://json-schema.org/draft/2020-12/schema"
    return schema
