"""ExperimentConfig: one YAML file of record for every command, plus flag overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from odf.domain import DEFAULT_DOMAIN, DomainConfig
from odf.errors import ConfigError
from odf.inference import InferenceConfig
from odf.jumping_cubes import JumpingCubesConfig
from odf.network import LossConfig, ModelConfig
from odf.sampling import AugmentConfig
from odf.training import TrainConfig


@dataclass(frozen=True)
class SamplingConfig:
    n_rays: int = 100_000
    balance: bool = True
    views: int = 8
    resolution: int = 256
    fov_deg: float = 100.0

    def __post_init__(self):
        if self.n_rays < 1 or self.views < 1 or self.resolution < 1:
            raise ConfigError("n_rays, views and resolution must be ≥ 1")


@dataclass(frozen=True)
class JumpingCubesSettings:
    n: int = 128
    b: float = 1.0
    smoothing_iterations: int = 5
    smoothing_weight: float = 0.5
    midpoint: bool = False

    def __post_init__(self):
        if self.n < 8 or self.b < 0:
            raise ConfigError(f"jumping_cubes needs n ≥ 8 and b ≥ 0, got n={self.n}, b={self.b}")


@dataclass(frozen=True)
class MetricsConfig:
    n_eval_rays: int = 30_000
    fscore_threshold: float = 0.005
    udf_directions: int = 1024
    sign_directions: int = 64
    voxel_resolution: int = 64

    def __post_init__(self):
        if self.n_eval_rays < 1:
            raise ConfigError(f"n_eval_rays must be ≥ 1, got {self.n_eval_rays}")
        if not self.fscore_threshold > 0:
            raise ConfigError(f"fscore_threshold must be > 0, got {self.fscore_threshold}")


@dataclass(frozen=True)
class ExperimentConfig:
    domain: DomainConfig = field(default=DEFAULT_DOMAIN)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    jumping_cubes: JumpingCubesSettings = field(default_factory=JumpingCubesSettings)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    seed: int = 0
    output_dir: str = "runs"

    def __post_init__(self):
        # ψ is a domain constant; loss and inference always clamp at domain.depth_clamp
        psi = self.domain.depth_clamp
        object.__setattr__(self, "loss", dataclasses.replace(self.loss, psi=psi))
        object.__setattr__(self, "inference", dataclasses.replace(self.inference, psi=psi))

    def jc_config(self) -> JumpingCubesConfig:
        jc = self.jumping_cubes
        return JumpingCubesConfig(jc.n, jc.b, jc.smoothing_iterations, jc.smoothing_weight, jc.midpoint,
                                  psi=self.domain.depth_clamp, domain=self.domain)


_SECTIONS = {
    "domain": DomainConfig,
    "sampling": SamplingConfig,
    "augment": AugmentConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "inference": InferenceConfig,
    "jumping_cubes": JumpingCubesSettings,
    "metrics": MetricsConfig,
}
_SCALARS = {"seed": int, "output_dir": str}
# fields taken from the domain section, not settable per section
_DERIVED = {"loss": {"psi"}, "inference": {"psi"}}


def _build(cls: type, name: str, values) -> object:
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    known = {f.name for f in fields(cls)} - _DERIVED.get(name, set())
    unknown = set(values) - known
    derived = unknown & _DERIVED.get(name, set())
    if derived:
        raise ConfigError(f"'{name}.{sorted(derived)[0]}' follows domain.depth_clamp; set that instead")
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {', '.join(sorted(unknown))}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"section '{name}': {e}") from e


def from_dict(data: dict | None) -> ExperimentConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping at the top level")
    unknown = set(data) - set(_SECTIONS) - set(_SCALARS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    kwargs = {name: _build(cls, name, data.get(name)) for name, cls in _SECTIONS.items()}
    for name, kind in _SCALARS.items():
        if name in data:
            kwargs[name] = kind(data[name])
    return ExperimentConfig(**kwargs)


def to_dict(cfg: ExperimentConfig) -> dict:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        return v

    out = {}
    for name in _SECTIONS:
        section = getattr(cfg, name)
        out[name] = {f.name: plain(getattr(section, f.name)) for f in fields(section)
                     if f.name not in _DERIVED.get(name, ())}
    for name in _SCALARS:
        out[name] = getattr(cfg, name)
    return out


def load_config(path: str | Path | None, required: bool = False) -> ExperimentConfig:
    """Read a YAML config; a missing optional file gives the defaults."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.exists():
        if required:
            raise ConfigError(f"config file not found: {path}")
        return ExperimentConfig()
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    return from_dict(data)


def dump_config(cfg: ExperimentConfig, path: str | Path | None = None) -> str:
    text = yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return text


def override(cfg: ExperimentConfig, values: dict) -> ExperimentConfig:
    """Apply dotted-key overrides ("train.epochs": 5); None means "not given"."""
    data = to_dict(cfg)
    for key, value in values.items():
        if value is None:
            continue
        section, _, leaf = key.partition(".")
        if not leaf:
            if section not in _SCALARS:
                raise ConfigError(f"unknown override '{key}'")
            data[section] = value
            continue
        if section not in data or leaf not in data[section]:
            raise ConfigError(f"unknown override '{key}'")
        data[section][leaf] = list(value) if isinstance(value, tuple) else value
    return from_dict(data)


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def domain_dict(domain: DomainConfig) -> dict:
    return dataclasses.asdict(domain)


def check_same_domain(a: dict | None, b: dict | None):
    """Artifacts made under different domain settings are not comparable."""
    if a and b and a != b:
        raise ConfigError(f"domain mismatch between artifacts: {a} vs {b}")
